//! Built-in models: the two-fold normal form `Z0` and its perturbations
//! `Z_ε`, together with their closed-form flows.
//!
//! The perturbed lower field carries `x + (∂_x − ∂_y)F` in its third
//! component: the derivative of `F` along the lower flow direction `(1, −1)`.
//! This is the field whose orbits are exactly
//! `z(t) = z₀ + x₀t + t²/2 + F(x₀+t, y₀−t) − F(x₀, y₀)`.

mod jet;
mod perturbation;

use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jet::Jet2;
pub use perturbation::{
    bump_h, bump_jet, f_finite, f_infinite, finite_root_slope, infinite_root_slope, PerturbationSpec, Rho,
    W_UNDERFLOW,
};

use crate::system::{HeightSwitching, PiecewiseSystem, Point3, Side, Vec3, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model id {0:?} (expected z0, z-eps-finite, z-eps-infinite)")]
    UnknownId(String),
    #[error("model {0:?} needs a perturbation spec")]
    MissingSpec(String),
    #[error("epsilon must be finite, got {0}")]
    BadEpsilon(f64),
}

/// `X(x,y,z) = (−1 − (x+y), 1 − (x+y), −y)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Z0Upper;

impl VectorField for Z0Upper {
    fn name(&self) -> &str {
        "z0-upper"
    }
    fn eval(&self, p: &Point3) -> Vec3 {
        let s = p.x + p.y;
        Vec3::new(-1.0 - s, 1.0 - s, -p.y)
    }
    fn jacobian(&self, _p: &Point3) -> Option<Matrix3<f64>> {
        Some(Matrix3::new(-1.0, -1.0, 0.0, -1.0, -1.0, 0.0, 0.0, -1.0, 0.0))
    }
}

/// `Y(x,y,z) = (1, −1, x + (∂_x − ∂_y)F)`; `F ≡ 0` without a perturbation.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerturbedLower {
    pub perturbation: Option<PerturbationSpec>,
}

impl VectorField for PerturbedLower {
    fn name(&self) -> &str {
        match self.perturbation {
            None => "z0-lower",
            Some(PerturbationSpec { rho: Rho::Finite(_), .. }) => "z-eps-finite-lower",
            Some(PerturbationSpec { rho: Rho::Infinite, .. }) => "z-eps-infinite-lower",
        }
    }
    fn eval(&self, p: &Point3) -> Vec3 {
        let extra = match &self.perturbation {
            Some(s) => {
                let (fx, fy) = s.partials(p.x, p.y);
                fx - fy
            }
            None => 0.0,
        };
        Vec3::new(1.0, -1.0, p.x + extra)
    }
    fn jacobian(&self, p: &Point3) -> Option<Matrix3<f64>> {
        let (a, b) = match &self.perturbation {
            Some(s) => {
                let j = s.jet(p.x, p.y);
                (j.dxx - j.dxy, j.dxy - j.dyy)
            }
            None => (0.0, 0.0),
        };
        Some(Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0 + a, b, 0.0))
    }
}

/// Closed-form flow of one smooth field of a model.
pub trait AnalyticFlow: Send + Sync {
    fn side(&self) -> Side;
    fn flow(&self, t: f64, p0: &Point3) -> Point3;
}

/// With `s = x+y`, `d = x−y`: `s(t) = s₀e^{−2t}`, `d(t) = d₀ − 2t`,
/// `z(t) = z₀ + (s₀/4)(e^{−2t} − 1) + (d₀/2)t − t²/2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Z0UpperFlow;

impl AnalyticFlow for Z0UpperFlow {
    fn side(&self) -> Side {
        Side::Upper
    }
    fn flow(&self, t: f64, p0: &Point3) -> Point3 {
        let s = p0.x + p0.y;
        let d = p0.x - p0.y;
        let em = (-2.0 * t).exp_m1();
        let half = 0.5 * s * em;
        Point3::new(
            p0.x + half - t,
            p0.y + half + t,
            p0.z + 0.25 * s * em + 0.5 * d * t - 0.5 * t * t,
        )
    }
}

/// `(x₀ + t, y₀ − t, z₀ + x₀t + t²/2 + F(x₀+t, y₀−t) − F(x₀, y₀))`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LowerFlow {
    pub perturbation: Option<PerturbationSpec>,
}

impl AnalyticFlow for LowerFlow {
    fn side(&self) -> Side {
        Side::Lower
    }
    fn flow(&self, t: f64, p0: &Point3) -> Point3 {
        let x = p0.x + t;
        let y = p0.y - t;
        let df = match &self.perturbation {
            Some(s) => s.value(x, y) - s.value(p0.x, p0.y),
            None => 0.0,
        };
        Point3::new(x, y, p0.z + p0.x * t + 0.5 * t * t + df)
    }
}

/// Registry entry; serialized as `{"id": ..., "k": ..., "epsilon": ...}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub enum ModelSpec {
    Z0,
    ZEpsFinite { k: u32, epsilon: f64 },
    ZEpsInfinite { epsilon: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = String;
    fn try_from(r: RawModelSpec) -> Result<Self, String> {
        match (r.id.as_str(), r.k, r.epsilon) {
            ("z0", None, None) => Ok(ModelSpec::Z0),
            ("z-eps-finite", Some(k), Some(epsilon)) => Ok(ModelSpec::ZEpsFinite { k, epsilon }),
            ("z-eps-infinite", None, Some(epsilon)) => Ok(ModelSpec::ZEpsInfinite { epsilon }),
            ("z0", ..) => Err("model z0 takes no k or epsilon".into()),
            ("z-eps-finite", ..) => Err("model z-eps-finite needs k and epsilon".into()),
            ("z-eps-infinite", ..) => Err("model z-eps-infinite needs epsilon and no k".into()),
            (other, ..) => Err(format!("unknown model id {other:?} (expected z0, z-eps-finite, z-eps-infinite)")),
        }
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(m: ModelSpec) -> Self {
        let id = m.id().to_string();
        match m {
            ModelSpec::Z0 => RawModelSpec { id, k: None, epsilon: None },
            ModelSpec::ZEpsFinite { k, epsilon } => RawModelSpec { id, k: Some(k), epsilon: Some(epsilon) },
            ModelSpec::ZEpsInfinite { epsilon } => RawModelSpec { id, k: None, epsilon: Some(epsilon) },
        }
    }
}

impl ModelSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Z0 => "z0",
            ModelSpec::ZEpsFinite { .. } => "z-eps-finite",
            ModelSpec::ZEpsInfinite { .. } => "z-eps-infinite",
        }
    }

    pub fn perturbation(&self) -> Option<PerturbationSpec> {
        match *self {
            ModelSpec::Z0 => None,
            ModelSpec::ZEpsFinite { k, epsilon } => Some(PerturbationSpec::finite(k, epsilon)),
            ModelSpec::ZEpsInfinite { epsilon } => Some(PerturbationSpec::infinite(epsilon)),
        }
    }

    pub fn from_perturbation(spec: Option<PerturbationSpec>) -> Self {
        match spec {
            None => ModelSpec::Z0,
            Some(PerturbationSpec { rho: Rho::Finite(k), epsilon }) => ModelSpec::ZEpsFinite { k, epsilon },
            Some(PerturbationSpec { rho: Rho::Infinite, epsilon }) => ModelSpec::ZEpsInfinite { epsilon },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.perturbation() {
            Some(s) if !s.epsilon.is_finite() => Err(ModelError::BadEpsilon(s.epsilon)),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Model {
        match self.perturbation() {
            None => model_z0(),
            Some(s) => model_z_eps(s),
        }
    }
}

#[derive(Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub system: PiecewiseSystem,
    pub upper_flow: Arc<dyn AnalyticFlow>,
    pub lower_flow: Arc<dyn AnalyticFlow>,
}

impl Model {
    pub fn perturbation(&self) -> Option<PerturbationSpec> {
        self.spec.perturbation()
    }

    pub fn flow(&self, side: Side) -> &dyn AnalyticFlow {
        match side {
            Side::Upper => self.upper_flow.as_ref(),
            Side::Lower => self.lower_flow.as_ref(),
        }
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("spec", &self.spec).finish()
    }
}

pub fn model_z0() -> Model {
    Model {
        spec: ModelSpec::Z0,
        system: PiecewiseSystem::new(
            Arc::new(Z0Upper),
            Arc::new(PerturbedLower { perturbation: None }),
            Arc::new(HeightSwitching),
        ),
        upper_flow: Arc::new(Z0UpperFlow),
        lower_flow: Arc::new(LowerFlow { perturbation: None }),
    }
}

pub fn model_z_eps(spec: PerturbationSpec) -> Model {
    let perturbation = Some(spec);
    Model {
        spec: ModelSpec::from_perturbation(perturbation),
        system: PiecewiseSystem::new(
            Arc::new(Z0Upper),
            Arc::new(PerturbedLower { perturbation }),
            Arc::new(HeightSwitching),
        ),
        upper_flow: Arc::new(Z0UpperFlow),
        lower_flow: Arc::new(LowerFlow { perturbation }),
    }
}

/// Look a model up by its registry id.
pub fn model_from_id(id: &str, spec: Option<PerturbationSpec>) -> Result<Model, ModelError> {
    match (id, spec) {
        ("z0", _) => Ok(model_z0()),
        ("z-eps-finite", Some(s @ PerturbationSpec { rho: Rho::Finite(_), .. }))
        | ("z-eps-infinite", Some(s @ PerturbationSpec { rho: Rho::Infinite, .. })) => Ok(model_z_eps(s)),
        ("z-eps-finite" | "z-eps-infinite", _) => Err(ModelError::MissingSpec(id.to_string())),
        _ => Err(ModelError::UnknownId(id.to_string())),
    }
}
