//! Numerical laboratory for square functions of Schrödinger operators
//! `L = -Δ + V` with nonnegative reverse-Hölder potentials.
//!
//! Modules, bottom-up:
//!
//! - [`grid`]: box discretization, ball integrals, dilations.
//! - [`potential`]: potentials, critical radius `rho`, region N, critical covering.
//! - [`semigroup`]: dense discretized operator, spectral decomposition, heat and
//!   Poisson kernels, closed-form classical and Mehler kernels.
//! - [`squarefn`]: the square function `g^{L,q}`, its global/local split, the
//!   dominating kernels and the localization audits.
//! - [`spaces`]: `l^r_n` surrogates, `L^p`, weak-`L^1`, `BMO_L`, atoms.
//! - [`lab`]: run configs, operator-norm probing, envelope fits, reports.

pub mod error;
pub mod grid;
pub mod lab;
pub mod potential;
pub mod quad;
pub mod semigroup;
pub mod spaces;
pub mod squarefn;

pub use error::{Error, Result};
pub use grid::{Ball, Grid, GridSpec, ScalarField};
pub use potential::{CriticalCovering, PotentialKind, PotentialProfile, PotentialSpec, RhoComparison};
pub use semigroup::{KernelKind, KernelMatrix, OperatorMatrix, SpectralDecomposition};
pub use spaces::{Atom, AtomKind, BallFamily, BanachSurrogate, VectorField};
pub use squarefn::{SemigroupKind, SquareFunctionConfig};
