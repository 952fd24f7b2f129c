//! Simulation and tomography of multi-time quantum processes (quantum combs).
//!
//! The crate builds process matrices from system-environment dilations,
//! constructs probe families (including correlated probes mediated by a
//! single qubit ancilla), and reconstructs process matrices by linear
//! inversion over the dual frame.
//!
//! Modules, bottom-up:
//! - [`tensor`]: labeled dense operators, partial traces/transposes, PSD roots, pseudoinverses.
//! - [`choi`]: vectorization, Choi operators, the link product, comb validation.
//! - [`basis`]: Weyl-Heisenberg bases, the qubit Clifford 2-design, Haar twirls, span analysis.
//! - [`process`]: process matrices, the generalized Born rule, synthetic data.
//! - [`probe`]: probe families and the qubit-ancilla construction.
//! - [`tomography`]: frames, duals, linear inversion, functional estimation.

pub mod basis;
pub mod choi;
pub mod error;
pub mod probe;
pub mod process;
pub mod random;
pub mod tensor;
pub mod tomography;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::{LabeledOperator, Role, SpaceLabel};

pub type C64 = num_complex::Complex64;
pub type CMatrix = nalgebra::DMatrix<C64>;
pub type CVector = nalgebra::DVector<C64>;
