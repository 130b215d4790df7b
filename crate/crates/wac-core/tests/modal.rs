mod support;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use support::*;
use wac_core::clock::NoClock;
use wac_core::coherency::*;
use wac_core::measurements::{MachineId, MeasurementWindow, ProbeSignal};
use wac_core::modal::*;
use wac_core::plant::*;
use wac_core::sysid::*;
use wac_core::C64;

fn mid(i: usize) -> MachineId {
    MachineId::new(i).unwrap()
}

/// Direct evaluation of `N(z⁻¹)/A(z⁻¹)`.
fn direct_eval(num: &[f64], den: &[f64], z: C64) -> C64 {
    let w = z.inv();
    let p = |c: &[f64]| c.iter().rev().fold(C64::new(0.0, 0.0), |acc, v| acc * w + v);
    p(num) / p(den)
}

/// Roots of a random stable real polynomial: conjugate pairs and reals
/// inside radius 0.95.
fn random_roots(r: &mut ChaCha8Rng, order: usize) -> Vec<(f64, f64)> {
    let mut roots = Vec::new();
    while roots.len() + 2 <= order {
        let rad = r.random_range(0.2..0.95);
        let th = r.random_range(0.1..3.0);
        roots.push((rad * f64::cos(th), rad * f64::sin(th)));
        roots.push((rad * f64::cos(th), -rad * f64::sin(th)));
    }
    if roots.len() < order {
        roots.push((r.random_range(-0.9..0.9), 0.0));
    }
    roots
}

fn exterior_point(r: &mut ChaCha8Rng) -> C64 {
    C64::from_polar(r.random_range(1.05..3.0), r.random_range(-PI..PI))
}

#[test]
fn random_models_reconstruct() {
    let mut r = rng(21);
    for trial in 0..100 {
        let order = 2 + trial % 5;
        let den = den_from_roots(&random_roots(&mut r, order));
        // Numerators with and without a leading z⁰ term and longer than the
        // denominator, so the direct part is exercised too.
        let len = order + (trial % 3);
        let mut num: Vec<f64> = (0..len).map(|_| gauss(&mut r)).collect();
        if trial % 2 == 0 {
            num[0] = 0.0;
        }
        let pf = partial_fractions_zinv(&num, &den).unwrap();
        for _ in 0..100 {
            let z = exterior_point(&mut r);
            let want = direct_eval(&num, &den, z);
            let got = pf.eval_z(z);
            assert!((got - want).norm() <= 1e-8 * want.norm().max(1e-12), "trial {trial}: {got} vs {want}");
        }
    }
}

#[test]
fn cover_up_by_hand() {
    // (2s + 5)/((s + 1)(s + 2)) = 3/(s + 1) − 1/(s + 2)
    let pf = residue(&[2.0, 5.0], &[1.0, 3.0, 2.0]).unwrap();
    let mut pr: Vec<(f64, f64)> = pf.poles.iter().zip(&pf.residues).map(|(p, r)| (p.re, r.re)).collect();
    pr.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!((pr[0].0 + 2.0).abs() < 1e-12 && (pr[0].1 + 1.0).abs() < 1e-12);
    assert!((pr[1].0 + 1.0).abs() < 1e-12 && (pr[1].1 - 3.0).abs() < 1e-12);
    assert!(pf.residues.iter().all(|r| r.im.abs() < 1e-12));
}

fn model_from(den: &[f64], nums: &[(usize, usize, Vec<f64>)], ts: f64) -> ArxCommonDen {
    let map: BTreeMap<Pair, Vec<f64>> = nums.iter().map(|(o, i, b)| (Pair::new(mid(*o), mid(*i)), b.clone())).collect();
    ArxCommonDen::from_coefficients(ts, den[1..].to_vec(), map).unwrap()
}

fn random_model(r: &mut ChaCha8Rng, order: usize, machines: usize) -> ArxCommonDen {
    let den = den_from_roots(&random_roots(r, order));
    let mut nums = Vec::new();
    for o in 1..=machines {
        for i in 1..=machines {
            nums.push((o, i, (0..=order).map(|_| gauss(r)).collect()));
        }
    }
    model_from(&den, &nums, 0.1)
}

fn assert_conjugate_closed(d: &ModalDecomposition) {
    for (j, z) in d.z_poles.iter().enumerate() {
        if z.im.abs() < 1e-12 {
            continue;
        }
        let mate = d
            .z_poles
            .iter()
            .position(|q| (q - z.conj()).norm() < 1e-9)
            .unwrap_or_else(|| panic!("pole {z} has no conjugate"));
        for r in d.residues.values() {
            assert!((r[mate] - r[j].conj()).norm() <= 1e-9 * r[j].norm().max(1e-12));
        }
    }
}

#[test]
fn conjugate_closure_survives_reduction() {
    let mut r = rng(22);
    for _ in 0..30 {
        let m = random_model(&mut r, 6, 2);
        let d = ModalDecomposition::new(&m).unwrap();
        assert_conjugate_closed(&d);
        let strength = d.pole_strength();
        let top = strength.iter().copied().fold(0.0, f64::max);
        let red = reduce_order(&d, 0.3).unwrap();
        assert_conjugate_closed(&red);
        for (j, s) in strength.iter().enumerate() {
            let kept = red.z_poles.contains(&d.z_poles[j]);
            let mate_strength = d
                .z_poles
                .iter()
                .position(|q| d.z_poles[j].im != 0.0 && (q - d.z_poles[j].conj()).norm() < 1e-9)
                .map_or(*s, |i| s.max(strength[i]));
            assert_eq!(kept, mate_strength >= 0.3 * top);
        }
    }
}

#[test]
fn reduced_model_round_trips_through_coefficients() {
    let mut r = rng(23);
    for _ in 0..20 {
        let m = random_model(&mut r, 5, 2);
        let d = ModalDecomposition::new(&m).unwrap();
        let back = d.to_model().unwrap();
        for p in m.pairs() {
            for _ in 0..10 {
                let z = exterior_point(&mut r);
                let a = m.eval(p, z).unwrap();
                let b = back.eval(p, z).unwrap();
                assert!((a - b).norm() <= 1e-8 * a.norm());
            }
        }
    }
}

#[test]
fn overfit_model_reduces_to_true_order() {
    let den = den_from_roots(&[(0.9, 0.3), (0.9, -0.3), (0.6, 0.6), (0.6, -0.6)]);
    let mut r = rng(24);
    let mut exps = Vec::new();
    let nums: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..2).map(|_| (0..5).map(|_| gauss(&mut r)).collect()).collect()).collect();
    for p in 0..2 {
        let u: Vec<f64> = (0..600).map(|_| gauss(&mut r)).collect();
        let cols: Vec<Vec<f64>> = (0..2).map(|o| simulate_arx(&den[1..], &nums[o][p], &u)).collect();
        let samples = DMatrix::from_fn(600, 2, |t, o| cols[o][t]);
        exps.push(ProbeExperiment {
            window: MeasurementWindow::new(0.1, 0.0, samples).unwrap(),
            probes: vec![ProbeSignal {
                machine: mid(p + 1),
                values: u,
            }],
        });
    }
    let full = identify_experiments(&exps, &IdentifyOptions { order_k: 10, ..Default::default() }).unwrap();
    let d = ModalDecomposition::new(&full).unwrap();
    let red = reduce_order(&d, DEFAULT_REDUCE_THRESHOLD).unwrap();
    assert_eq!(red.order(), 4, "kept {:?}", red.z_poles);
    // Frequency response over the probe band, as an energy ratio.
    for p in d.pairs() {
        let (mut err, mut sig) = (0.0, 0.0);
        for i in 0..200 {
            let hz = 0.05 + (2.0 - 0.05) * i as f64 / 199.0;
            let z = C64::from_polar(1.0, 2.0 * PI * hz * 0.1);
            let a = d.eval(p, z).unwrap();
            err += (a - red.eval(p, z).unwrap()).norm_sqr();
            sig += a.norm_sqr();
        }
        assert!(err < 0.01 * sig, "{p}: {}", err / sig);
    }
}

#[test]
fn reduction_keeps_response_when_dropping_small_modes() {
    let mut r = rng(25);
    for _ in 0..20 {
        let m = random_model(&mut r, 6, 2);
        let d = ModalDecomposition::new(&m).unwrap();
        let red = reduce_order(&d, 1e-3).unwrap();
        for p in d.pairs() {
            for i in 0..50 {
                let hz = 0.05 + 1.95 * i as f64 / 49.0;
                let z = C64::from_polar(1.0, 2.0 * PI * hz * 0.1);
                let a = d.eval(p, z).unwrap();
                let b = red.eval(p, z).unwrap();
                assert!((a - b).norm() <= 0.01 * a.norm());
            }
        }
    }
}

#[test]
fn input_scaling_leaves_normalized_residues() {
    let mut r = rng(26);
    let m = random_model(&mut r, 4, 3);
    let scaled = ArxCommonDen::from_coefficients(
        m.ts,
        m.den.clone(),
        m.num.iter().map(|(p, b)| (*p, b.iter().map(|v| v * 5.0).collect())).collect(),
    )
    .unwrap();
    let d = ModalDecomposition::new(&m).unwrap();
    let ds = ModalDecomposition::new(&scaled).unwrap();
    let mode = d.mode(d.s_poles.iter().position(|s| s.im > 0.0).unwrap());
    let a = residue_matrix_at_mode(&d, &mode).unwrap();
    let b = residue_matrix_at_mode(&ds, &mode).unwrap();
    assert_eq!(a.argmax, b.argmax);
    assert!((a.values - b.values).amax() < 1e-12);
}

#[test]
fn single_pair_matrix_is_one() {
    let den = den_from_roots(&[(0.8, 0.4), (0.8, -0.4)]);
    let m = model_from(&den, &[(1, 1, vec![0.3, -0.2, 0.1])], 0.1);
    let d = ModalDecomposition::new(&m).unwrap();
    let rm = residue_matrix_at_mode(&d, &d.mode(0)).unwrap();
    assert_eq!(rm.values.shape(), (1, 1));
    assert_eq!(rm.values[(0, 0)], 1.0);
}

fn grouping_of(assignment: &[usize]) -> CoherencyGrouping {
    let n = assignment.len();
    let k = *assignment.iter().max().unwrap();
    CoherencyGrouping {
        assignment: assignment.to_vec(),
        k,
        centers: DMatrix::zeros(k, 1),
        inertia: 0.0,
        elapsed: 0.0,
        seed: 0,
        empty_groups: Vec::new(),
        embedding: SpectralEmbedding {
            u_rows: DMatrix::zeros(n, 1),
            eigenvalues: vec![0.0],
            degree: DVector::from_element(n, 1.0),
            degenerate_rows: Vec::new(),
            spectrum: vec![0.0],
        },
        similarity: None,
    }
}

/// Every within-group pair, best per group, ties to the lowest (output, input).
fn brute_force(rm: &ResidueMatrix, assignment: &[usize]) -> Vec<(usize, usize, usize, f64)> {
    let k = *assignment.iter().max().unwrap();
    let mut out = Vec::new();
    for g in 1..=k {
        let mut best: Option<(usize, usize, usize, f64)> = None;
        for (r, o) in rm.outputs.iter().enumerate() {
            for (c, i) in rm.inputs.iter().enumerate() {
                if assignment[o.column()] != g || assignment[i.column()] != g {
                    continue;
                }
                let v = rm.values[(r, c)];
                let better = match best {
                    None => true,
                    Some((_, bo, bi, bv)) => v > bv || (v == bv && (o.index(), i.index()) < (bo, bi)),
                };
                if better {
                    best = Some((g, o.index(), i.index(), v));
                }
            }
        }
        if let Some(b) = best {
            out.push(b);
        }
    }
    out
}

fn selection_tuples(sel: &ControlLoopSelection) -> Vec<(usize, usize, usize, f64)> {
    let mut v: Vec<_> = sel
        .loops
        .iter()
        .chain(&sel.rejected)
        .map(|l| (l.group, l.output.index(), l.input.index(), l.residue))
        .collect();
    v.sort_by_key(|a| a.0);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn selection_matches_exhaustive_search(seed in any::<u64>(), n in 2usize..7, k in 1usize..4) {
        let mut r = rng(seed);
        let k = k.min(n);
        // Coarse values make ties likely.
        let raw = DMatrix::from_fn(n, n, |_, _| r.random_range(0..6) as f64 + 1.0);
        let ids: Vec<MachineId> = (1..=n).map(mid).collect();
        let mode = ModeDescriptor { frequency_hz: 0.6, damping_ratio: 0.05, pole_index: 0 };
        let rm = ResidueMatrix::from_magnitudes(raw, ids.clone(), ids, mode).unwrap();
        let assignment: Vec<usize> = (0..n).map(|i| if i < k { i + 1 } else { r.random_range(1..=k) }).collect();
        let sel = select_loops(&rm, &grouping_of(&assignment), 0.0).unwrap();
        prop_assert!(sel.rejected.is_empty());
        prop_assert_eq!(selection_tuples(&sel), brute_force(&rm, &assignment));
    }

    #[test]
    fn one_group_picks_global_argmax(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let raw = DMatrix::from_fn(n, n, |_, _| r.random::<f64>() + 1e-3);
        let ids: Vec<MachineId> = (1..=n).map(mid).collect();
        let mode = ModeDescriptor { frequency_hz: 0.6, damping_ratio: 0.05, pole_index: 0 };
        let rm = ResidueMatrix::from_magnitudes(raw, ids.clone(), ids, mode).unwrap();
        let sel = select_loops(&rm, &grouping_of(&vec![1; n]), DEFAULT_REJECT_BELOW).unwrap();
        prop_assert_eq!(sel.loops.len(), 1);
        let l = sel.loops[0];
        prop_assert_eq!((l.output.column(), l.input.column()), rm.argmax);
        prop_assert_eq!(l.residue, 1.0);
    }
}

struct TwoAreaChain {
    plant: PlantModel,
    windows: Vec<ProbeExperiment>,
    red: ModalDecomposition,
    mode: ModeDescriptor,
    rm: ResidueMatrix,
}

fn reduced(exps: &[ProbeExperiment], tol: f64) -> (ModalDecomposition, ModeDescriptor, ResidueMatrix) {
    let model = identify_experiments(exps, &IdentifyOptions { tol, ..Default::default() }).unwrap();
    let red = reduce_order(&ModalDecomposition::new(&model).unwrap(), DEFAULT_REDUCE_THRESHOLD).unwrap();
    let mode = dominant_mode(&red, INTER_AREA_BAND).unwrap();
    let rm = residue_matrix_at_mode(&red, &mode).unwrap();
    (red, mode, rm)
}

fn two_area() -> &'static TwoAreaChain {
    static CHAIN: OnceLock<TwoAreaChain> = OnceLock::new();
    CHAIN.get_or_init(|| {
        let plant = build_two_area(&TwoAreaParams::default()).unwrap();
        let spec = SimulationSpec::sequential_probe(4, 0.01, 30.0, 0.02, 10, 0);
        let sim = simulate(&plant, &spec).unwrap();
        let w = sim.window.decimate(10).unwrap();
        let probes: Vec<_> = sim.inputs.iter().map(|p| p.decimate(10)).collect();
        let windows = segment_experiments(&w, &probes).unwrap();
        let (red, mode, rm) = reduced(&windows, 1e-4);
        TwoAreaChain {
            plant,
            windows,
            red,
            mode,
            rm,
        }
    })
}

#[test]
fn dominant_mode_matches_plant_eigenvalue() {
    let c = two_area();
    let truth = c.plant.inter_area_mode().unwrap();
    assert!((c.mode.frequency_hz - truth.hz).abs() <= 0.02 * truth.hz, "{} vs {}", c.mode.frequency_hz, truth.hz);
    assert!(c.red.order() < 10);
    assert_conjugate_closed(&c.red);
}

#[test]
fn two_area_selection_is_exhaustive_optimum() {
    let c = two_area();
    let assignment = [1, 1, 2, 2];
    let sel = select_loops(&c.rm, &grouping_of(&assignment), DEFAULT_REJECT_BELOW).unwrap();
    assert_eq!(selection_tuples(&sel), brute_force(&c.rm, &assignment));
    // Strongest loop pairs machines of the same area.
    let (o, i) = c.rm.argmax;
    assert_eq!(assignment[o], assignment[i]);
    assert_eq!(sel.loops.len(), 2);
}

#[test]
fn measurement_scaling_keeps_selection() {
    // Identified synthetic system with well separated residues.
    let den = den_from_roots(&[(0.9, 0.3), (0.9, -0.3), (0.5, 0.0)]);
    let mut r = rng(27);
    let nums: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|o| (0..3).map(|i| (0..4).map(|_| gauss(&mut r) * (1.0 + (o * 3 + i) as f64)).collect()).collect())
        .collect();
    let exps: Vec<ProbeExperiment> = (0..3)
        .map(|p| {
            let u: Vec<f64> = (0..400).map(|_| gauss(&mut r)).collect();
            let cols: Vec<Vec<f64>> = (0..3).map(|o| simulate_arx(&den[1..], &nums[o][p], &u)).collect();
            ProbeExperiment {
                window: MeasurementWindow::new(0.1, 0.0, DMatrix::from_fn(400, 3, |t, o| cols[o][t])).unwrap(),
                probes: vec![ProbeSignal { machine: mid(p + 1), values: u }],
            }
        })
        .collect();
    let g = grouping_of(&[1, 2, 2]);
    let (_, mode, base) = reduced(&exps, 1e-4);
    let a = select_loops(&base, &g, 0.0).unwrap();
    for c in [1e-3, 0.5, 37.0, 1e4] {
        let scaled: Vec<ProbeExperiment> = exps
            .iter()
            .map(|e| ProbeExperiment { window: e.window.scaled(c), probes: e.probes.clone() })
            .collect();
        let (_, m, rm) = reduced(&scaled, 1e-4);
        assert!((m.frequency_hz - mode.frequency_hz).abs() < 1e-8);
        assert_eq!(rm.argmax, base.argmax);
        assert!((&rm.values - &base.values).amax() < 1e-6);
        let b = select_loops(&rm, &g, 0.0).unwrap();
        assert_eq!(selection_tuples(&a).iter().map(|t| (t.1, t.2)).collect::<Vec<_>>(), selection_tuples(&b).iter().map(|t| (t.1, t.2)).collect::<Vec<_>>());
    }
}

#[test]
fn two_area_scaling_changes_only_near_ties() {
    // Within an area the residues at the inter-area mode agree to ~1e-5,
    // finer than the order-10 fit resolves, so a rescaled fit may pick a
    // different but equally strong loop.
    let c = two_area();
    let scaled: Vec<ProbeExperiment> = c
        .windows
        .iter()
        .map(|e| ProbeExperiment {
            window: e.window.scaled(37.0),
            probes: e.probes.clone(),
        })
        .collect();
    let (_, mode, rm) = reduced(&scaled, 1e-4);
    assert!((mode.frequency_hz - c.mode.frequency_hz).abs() < 1e-4);
    assert!((&rm.values - &c.rm.values).amax() < 1e-3);
    let g = grouping_of(&[1, 1, 2, 2]);
    let a = select_loops(&c.rm, &g, DEFAULT_REJECT_BELOW).unwrap();
    let b = select_loops(&rm, &g, DEFAULT_REJECT_BELOW).unwrap();
    assert_eq!(a.loops.len(), b.loops.len());
    for (x, y) in a.loops.iter().zip(&b.loops) {
        assert_eq!(x.group, y.group);
        let other = c.rm.value(y.output, y.input).unwrap();
        assert!((x.residue - other).abs() < 1e-3);
    }
}

#[test]
fn two_area_grouping_feeds_selection() {
    let c = two_area();
    let mut spec = SimulationSpec::new(0.01, 7.0);
    spec.pulses.push(DisturbancePulse::fault(2, 1.0, 0.1, 0.5));
    let w = simulate(&c.plant, &spec).unwrap().window.slice(100, 500).unwrap();
    let g = group_machines(&w, 2, &GroupingParams::default(), &NoClock).unwrap();
    let sel = select_loops(&c.rm, &g, DEFAULT_REJECT_BELOW).unwrap();
    for l in &sel.loops {
        assert_eq!(g.group_of(l.output), g.group_of(l.input));
    }
}
