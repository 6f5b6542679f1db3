//! Filippov systems with a planar switching manifold, built around the
//! invisible two-fold (T-singularity) model `Z0` and its perturbation
//! families.
//!
//! Module map:
//! - [`system`]: piecewise systems, Σ-region classification, Lie derivatives, folds.
//! - [`sliding`]: Filippov sliding field, its normalized form, equilibrium analysis.
//! - [`models`]: bump function, perturbations, the built-in models and their flows.
//! - [`integrate`]: event-driven integration with crossing/sliding concatenation.
//! - [`returnmap`]: half-return maps, first return, cycles and their stability.
//! - [`fate`]: Σ partition and asymptotic fate classification.
//! - [`cli`]: configuration and command implementations behind the binary.

pub mod cli;
pub mod fate;
pub mod integrate;
pub mod linalg;
pub mod models;
pub mod returnmap;
pub mod sliding;
pub mod system;

pub use integrate::{advance, ArcMode, EscapingPolicy, StepperConfig, Trajectory};
pub use models::{model_z0, model_z_eps, Model, ModelSpec, PerturbationSpec, Rho};
pub use system::{PiecewiseSystem, Point3, Side, SigmaRegion, Vec3};
