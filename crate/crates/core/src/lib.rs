//! Dirac-Fock and electron-positron Hartree-Fock models on finite-dimensional
//! discretizations.
//!
//! The crate is organised bottom-up:
//!
//! - [`params`]: physical parameters, derived constants and assumption checks.
//! - [`model`]: the free Dirac operator, nuclear attraction, pair kernel and
//!   kinetic functional calculus for a chosen backend.
//! - [`density`]: density matrices, their trace norms and constraint sets.
//! - [`meanfield`]: the self-consistent operator, energy and projector calculus.
//! - [`retraction`]: the map `γ ↦ P⁺_γ γ P⁺_γ`, its fixed point and the DF energy.
//! - [`solvers`]: DF and ep-HF minimization and the max-min loop over seas.
//! - [`verify`]: the claim harness with scaling fits.

pub mod density;
pub mod error;
pub mod linalg;
pub mod meanfield;
pub mod model;
pub mod params;
pub mod retraction;
pub mod solvers;
pub mod verify;

pub use density::{DensityMatrix, Membership, NormReport};
pub use error::{Error, Result};
pub use meanfield::{MeanField, Sea};
pub use model::{build_model, Backend, ModelConfig, ModelSpace, OpKind};
pub use params::{derive_constants, DerivedConstants, PhysParams};
pub use retraction::{RetractionOptions, RetractionTrace, UrCertificate};
pub use solvers::{SolveOptions, SolveReport};
pub use verify::{ClaimId, ClaimResult, SweepSpec, VerifyConfig};
