//! Numerical laboratory for linear cocycles over minimal base dynamics.
//!
//! The crate computes the quasiconformal-distortion functionals ζ, κ, K, Z,
//! K_fine and Z_fine of matrix cocycles over circle rotations and torus
//! translations, detects dominated splittings from singular-value gap growth,
//! and implements two constructive perturbation algorithms: a segment-level
//! perturbation that provably lowers the ζ-rate of a long product, and a
//! global castle-patching construction that blends segment perturbations
//! into a continuous perturbed cocycle.
//!
//! Modules:
//! - [`linalg`]: per-matrix spectrum records (σ-graph, ζ, κ, half-gaps),
//!   exterior powers, dimension constants.
//! - [`dynamics`]: circle rotations, torus translations, orbit grids,
//!   Rokhlin castles, visit counts.
//! - [`cocycle`]: cocycle families, stable long products, K/Z estimators,
//!   Lyapunov spectra, domination detection and splitting frames.
//! - [`perturb`]: vector-chain interpolation, window search, subspace
//!   merging, and the segment perturbation plan.
//! - [`patch`]: partition-of-unity blending of segment plans into a global
//!   perturbed cocycle, and the conformalize iteration.
//! - [`verify`]: the seeded invariant suite behind `verify` runs.

pub mod cocycle;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod patch;
pub mod perturb;
pub mod sampling;
pub mod verify;

pub use cocycle::{
    Cocycle, DominationReport, FunctionalEstimate, GeneratorConfig, SegmentProduct,
    SplittingFrame, SusaetReport,
};
pub use dynamics::{BaseSystem, Castle, CircleSet, Point};
pub use error::{Error, Result};
pub use linalg::{DimensionConstants, SingularData};
pub use patch::BlendedCocycle;
pub use perturb::PerturbationPlan;

/// Dense square matrix of reals; all cocycle fibers are ℝ^d with d small.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector of reals.
pub type Vector = nalgebra::DVector<f64>;
