//! Injectable time source so stage timings can be recorded without `std`.

/// Monotonic time source in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that never advances; elapsed times come out as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Runs `f` and returns its result with the elapsed time on `clock`.
pub fn timed<T>(clock: &dyn Clock, f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = clock.now();
    let out = f();
    let dt = clock.now() - t0;
    (out, if dt > 0.0 { dt } else { 0.0 })
}
