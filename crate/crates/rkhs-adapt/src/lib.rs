//! Adaptive estimation of unknown nonlinearities in affine dynamical systems
//! by embedding in a reproducing kernel Hilbert space, together with two
//! kernel-center selection algorithms (centroidal Voronoi tessellations and
//! Kohonen self-organizing maps) and the diagnostics that justify center
//! placement: fill distance, minimal separation, Grammian conditioning, and
//! persistence-of-excitation occupancy.
//!
//! The crate is organized as a substrate (`numerics`), domain layers
//! (`kernels`, `dynamics`, `estimator`), the two center-selection methods
//! (`cvt`, `som`), quantitative checks (`diagnostics`), and an experiment
//! runner (`experiment`) that backs the `rkhs-adapt` binary.

pub mod cvt;
pub mod diagnostics;
pub mod dynamics;
pub mod estimator;
pub mod experiment;
pub mod kernels;
pub mod numerics;
pub mod som;

pub use numerics::{Matrix, Vector};
