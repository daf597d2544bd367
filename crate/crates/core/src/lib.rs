//! Simulation toolkit for a driven, lossy two-level block (|e>, |f>) living
//! inside a four-level ladder (|g>, |e>, |f>, |h>).
//!
//! The crate is organised bottom-up:
//!
//! * [`spectra`]: the 2x2 block Hamiltonian, its closed-form eigensystem and
//!   the degeneracy points of the complex spectrum.
//! * [`paths`]: closed control loops in the (coupling, detuning) plane and
//!   the count of degeneracies they enclose.
//! * [`evolve`]: fixed-step propagation, either of a two-component amplitude
//!   under the lossy block Hamiltonian or of the full four-level density
//!   matrix, plus post-selection and ideal pulsed rotations.
//! * [`analysis`]: Bloch components, mode decomposition in the non-orthogonal
//!   eigenbasis, fringe fitting and finite-shot sampling.
//! * [`protocols`]: the three measurement sequences built from the layers
//!   above (state tomography around a loop, phase interferometry against an
//!   idle reference level, and transfer maps over loop-parameter grids).
//!
//! Units everywhere: time in us, couplings and detunings in rad/us, decay
//! rates in 1/us.

pub mod analysis;
pub mod error;
pub mod evolve;
pub mod paths;
pub mod protocols;
pub mod spectra;

pub use error::{Error, Result};
pub use evolve::{DissipationRates, IntegratorConfig};
pub use num_complex::Complex64 as C64;
pub use paths::{Direction, ParameterLoop};
pub use spectra::{Eigenpair, HamiltonianParams};
