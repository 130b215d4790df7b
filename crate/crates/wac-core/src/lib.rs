//! Measurement-driven wide-area damping control for multi-machine power systems.
//!
//! The crate is `no_std` (with `alloc`) and covers the numerical pipeline:
//! coherency grouping of machines from speed measurements, common-denominator
//! MIMO ARX identification, residue-based control loop selection, and per-group
//! LQR/Kalman controller synthesis. A linearized swing-dynamics plant is
//! included so the whole loop can be exercised in simulation.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod clock;
pub mod coherency;
mod error;
pub mod linalg;
pub mod measurements;
pub mod modal;
pub mod plant;
pub mod sysid;
pub mod wac;

pub use error::{Error, Result};
pub use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;
