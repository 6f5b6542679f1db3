//! Piecewise-smooth systems `Z = (X, Y)` split by the zero set of a scalar
//! switching function, with Σ-region classification and tangency analysis.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
/// A state in phase space. Operations reject non-finite coordinates.
pub type Point3 = Vec3;

pub const TOL_ON_SIGMA: f64 = 1e-10;
pub const TOL_TANGENCY: f64 = 1e-9;
pub const TOL_TRANSVERSAL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("non-finite point ({0}, {1}, {2})")]
    NonFinite(f64, f64, f64),
    #[error("switching gradient vanishes on Σ at ({0}, {1}, {2})")]
    NonRegularSwitching(f64, f64, f64),
    #[error("point is off Σ: |f| = {0:e}")]
    NotOnSigma(f64),
    #[error("Lie derivative order must be 1 or 2, got {0}")]
    InvalidOrder(u8),
    #[error("not a two-fold: X.f = {upper:e}, Y.f = {lower:e}")]
    NotTwoFold { upper: f64, lower: f64 },
}

pub fn check_finite(p: &Point3) -> Result<(), SystemError> {
    if p.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(SystemError::NonFinite(p.x, p.y, p.z))
    }
}

/// A smooth vector field. Evaluation must be deterministic and pure.
pub trait VectorField: Send + Sync {
    fn name(&self) -> &str;
    fn eval(&self, p: &Point3) -> Vec3;
    /// Analytic Jacobian `∂F_i/∂x_j`, when the model registers one.
    fn jacobian(&self, _p: &Point3) -> Option<Matrix3<f64>> {
        None
    }
}

pub trait SwitchingFunction: Send + Sync {
    fn value(&self, p: &Point3) -> f64;
    fn gradient(&self, p: &Point3) -> Vec3;
    fn hessian(&self, _p: &Point3) -> Option<Matrix3<f64>> {
        None
    }
}

/// `f(x, y, z) = z`.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeightSwitching;

impl SwitchingFunction for HeightSwitching {
    fn value(&self, p: &Point3) -> f64 {
        p.z
    }
    fn gradient(&self, _p: &Point3) -> Vec3 {
        Vec3::z()
    }
    fn hessian(&self, _p: &Point3) -> Option<Matrix3<f64>> {
        Some(Matrix3::zeros())
    }
}

/// Closure-backed field, the entry point for user models.
pub struct FnField<F> {
    name: String,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&Point3) -> Vec3 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&Point3) -> Vec3 + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn eval(&self, p: &Point3) -> Vec3 {
        (self.f)(p)
    }
}

/// Closure-backed switching function with a user-supplied gradient.
pub struct FnSwitching<F, G> {
    f: F,
    grad: G,
}

impl<F, G> FnSwitching<F, G> {
    pub fn new(f: F, grad: G) -> Self {
        Self { f, grad }
    }
}

impl<F, G> SwitchingFunction for FnSwitching<F, G>
where
    F: Fn(&Point3) -> f64 + Send + Sync,
    G: Fn(&Point3) -> Vec3 + Send + Sync,
{
    fn value(&self, p: &Point3) -> f64 {
        (self.f)(p)
    }
    fn gradient(&self, p: &Point3) -> Vec3 {
        (self.grad)(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Upper => "upper",
            Side::Lower => "lower",
        })
    }
}

/// `Z = (X, Y)`: `upper` governs `f ≥ 0`, `lower` governs `f ≤ 0`.
#[derive(Clone)]
pub struct PiecewiseSystem {
    pub upper: Arc<dyn VectorField>,
    pub lower: Arc<dyn VectorField>,
    pub switching: Arc<dyn SwitchingFunction>,
}

impl fmt::Debug for PiecewiseSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PiecewiseSystem")
            .field("upper", &self.upper.name())
            .field("lower", &self.lower.name())
            .finish()
    }
}

impl PiecewiseSystem {
    pub fn new(
        upper: Arc<dyn VectorField>,
        lower: Arc<dyn VectorField>,
        switching: Arc<dyn SwitchingFunction>,
    ) -> Self {
        Self { upper, lower, switching }
    }

    pub fn field(&self, side: Side) -> &dyn VectorField {
        match side {
            Side::Upper => self.upper.as_ref(),
            Side::Lower => self.lower.as_ref(),
        }
    }

    pub fn f(&self, p: &Point3) -> f64 {
        self.switching.value(p)
    }

    /// Gradient of `f`, rejecting critical points on Σ.
    pub fn regular_gradient(&self, p: &Point3) -> Result<Vec3, SystemError> {
        let g = self.switching.gradient(p);
        if g.norm() == 0.0 && self.f(p).abs() <= TOL_ON_SIGMA {
            return Err(SystemError::NonRegularSwitching(p.x, p.y, p.z));
        }
        Ok(g)
    }

    pub fn on_sigma(&self, p: &Point3) -> Result<(), SystemError> {
        check_finite(p)?;
        let v = self.f(p);
        if v.abs() > TOL_ON_SIGMA {
            return Err(SystemError::NotOnSigma(v.abs()));
        }
        Ok(())
    }

    /// `F.f` for the field on `side`.
    pub fn lie1(&self, side: Side, p: &Point3) -> Result<f64, SystemError> {
        lie_derivative(self, side, p, 1)
    }
}

/// `F.f(p)` (order 1) or `F².f(p)` (order 2) for the field on `side`.
///
/// The gradient of `F.f` is analytic when both the field and the switching
/// function register derivatives, otherwise central differences with step
/// `1e-5·max(1, ‖p‖)`.
pub fn lie_derivative(
    system: &PiecewiseSystem,
    side: Side,
    p: &Point3,
    order: u8,
) -> Result<f64, SystemError> {
    check_finite(p)?;
    let field = system.field(side);
    match order {
        1 => {
            let g = system.regular_gradient(p)?;
            Ok(g.dot(&field.eval(p)))
        }
        2 => {
            let grad = lie1_gradient(system, field, p)?;
            Ok(grad.dot(&field.eval(p)))
        }
        o => Err(SystemError::InvalidOrder(o)),
    }
}

/// `∇(F.f)(p)`.
pub fn lie1_gradient(
    system: &PiecewiseSystem,
    field: &dyn VectorField,
    p: &Point3,
) -> Result<Vec3, SystemError> {
    let g = system.regular_gradient(p)?;
    if let (Some(j), Some(h)) = (field.jacobian(p), system.switching.hessian(p)) {
        return Ok(h * field.eval(p) + j.transpose() * g);
    }
    let step = 1e-5 * p.norm().max(1.0);
    let lie = |q: &Point3| system.switching.gradient(q).dot(&field.eval(q));
    let mut out = Vec3::zeros();
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = step;
        out[i] = (lie(&(p + e)) - lie(&(p - e))) / (2.0 * step);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SigmaRegion {
    CrossingPlus,
    CrossingMinus,
    Sliding,
    Escaping,
    TangencyUpper,
    TangencyLower,
    TwoFold,
}

impl SigmaRegion {
    pub fn from_lie(xf: f64, yf: f64) -> Self {
        let xz = xf.abs() <= TOL_TANGENCY;
        let yz = yf.abs() <= TOL_TANGENCY;
        match (xz, yz) {
            (true, true) => SigmaRegion::TwoFold,
            (true, false) => SigmaRegion::TangencyUpper,
            (false, true) => SigmaRegion::TangencyLower,
            _ => match (xf > 0.0, yf > 0.0) {
                (true, true) => SigmaRegion::CrossingPlus,
                (false, false) => SigmaRegion::CrossingMinus,
                (false, true) => SigmaRegion::Sliding,
                (true, false) => SigmaRegion::Escaping,
            },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SigmaRegion::CrossingPlus => "crossing+",
            SigmaRegion::CrossingMinus => "crossing-",
            SigmaRegion::Sliding => "sliding",
            SigmaRegion::Escaping => "escaping",
            SigmaRegion::TangencyUpper => "tangency-upper",
            SigmaRegion::TangencyLower => "tangency-lower",
            SigmaRegion::TwoFold => "two-fold",
        }
    }
}

pub fn classify_sigma_point(system: &PiecewiseSystem, p: &Point3) -> Result<SigmaRegion, SystemError> {
    system.on_sigma(p)?;
    let xf = system.lie1(Side::Upper, p)?;
    let yf = system.lie1(Side::Lower, p)?;
    Ok(SigmaRegion::from_lie(xf, yf))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldKind {
    NotTangent,
    VisibleFold,
    InvisibleFold,
    DegenerateTangency,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub field_side: Side,
    pub first_lie: f64,
    pub second_lie: f64,
    pub kind: FoldKind,
}

/// Fold type of the field on `side` at a Σ point. "Invisible" means the
/// tangent orbit curves into the opposite half-space, for either side.
pub fn fold_report(system: &PiecewiseSystem, side: Side, p: &Point3) -> Result<FoldReport, SystemError> {
    system.on_sigma(p)?;
    let first = lie_derivative(system, side, p, 1)?;
    let second = lie_derivative(system, side, p, 2)?;
    let kind = if first.abs() > TOL_TANGENCY {
        FoldKind::NotTangent
    } else if second.abs() <= TOL_TANGENCY {
        FoldKind::DegenerateTangency
    } else {
        let toward_other = match side {
            Side::Upper => second < 0.0,
            Side::Lower => second > 0.0,
        };
        if toward_other {
            FoldKind::InvisibleFold
        } else {
            FoldKind::VisibleFold
        }
    };
    Ok(FoldReport { field_side: side, first_lie: first, second_lie: second, kind })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TSingularityCertificate {
    pub is_t_singularity: bool,
    pub upper: FoldReport,
    pub lower: FoldReport,
    /// Unit tangent of the upper fold curve `S_X` within Σ.
    pub upper_direction: Vec3,
    /// Unit tangent of the lower fold curve `S_Y` within Σ.
    pub lower_direction: Vec3,
    /// `n · (t_X × t_Y)` with `n` the unit normal of Σ.
    pub determinant: f64,
}

pub fn detect_t_singularity(system: &PiecewiseSystem, p: &Point3) -> Result<TSingularityCertificate, SystemError> {
    system.on_sigma(p)?;
    let upper = fold_report(system, Side::Upper, p)?;
    let lower = fold_report(system, Side::Lower, p)?;
    if upper.first_lie.abs() > TOL_TANGENCY || lower.first_lie.abs() > TOL_TANGENCY {
        return Err(SystemError::NotTwoFold { upper: upper.first_lie, lower: lower.first_lie });
    }
    let n = system.regular_gradient(p)?.normalize();
    let fold_tangent = |side: Side| -> Result<Vec3, SystemError> {
        let g = lie1_gradient(system, system.field(side), p)?;
        let t = n.cross(&(g - n * g.dot(&n)));
        let norm = t.norm();
        Ok(if norm > 0.0 { t / norm } else { t })
    };
    let tx = fold_tangent(Side::Upper)?;
    let ty = fold_tangent(Side::Lower)?;
    let determinant = n.dot(&tx.cross(&ty));
    let is_t_singularity = upper.kind == FoldKind::InvisibleFold
        && lower.kind == FoldKind::InvisibleFold
        && determinant.abs() > TOL_TRANSVERSAL;
    Ok(TSingularityCertificate {
        is_t_singularity,
        upper,
        lower,
        upper_direction: tx,
        lower_direction: ty,
        determinant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::model_z0;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    #[test]
    fn lie_derivatives_at_origin() {
        let z = model_z0().system;
        let o = p(0.0, 0.0, 0.0);
        assert_eq!(lie_derivative(&z, Side::Upper, &o, 1).unwrap(), 0.0);
        assert_eq!(lie_derivative(&z, Side::Upper, &o, 2).unwrap(), -1.0);
        assert_eq!(lie_derivative(&z, Side::Lower, &o, 1).unwrap(), 0.0);
        assert_eq!(lie_derivative(&z, Side::Lower, &o, 2).unwrap(), 1.0);
        assert_eq!(lie_derivative(&z, Side::Upper, &p(0.0, 0.3, 0.0), 1).unwrap(), -0.3);
        assert!(matches!(lie_derivative(&z, Side::Upper, &o, 3), Err(SystemError::InvalidOrder(3))));
    }

    #[test]
    fn finite_difference_second_lie_matches_analytic() {
        // Same Z0 fields, but without registered Jacobians.
        let z = model_z0().system;
        let up = z.upper.clone();
        let lo = z.lower.clone();
        let bare = PiecewiseSystem::new(
            Arc::new(FnField::new("x", move |q: &Point3| up.eval(q))),
            Arc::new(FnField::new("y", move |q: &Point3| lo.eval(q))),
            Arc::new(HeightSwitching),
        );
        for &(x, y) in &[(0.0, 0.0), (0.5, 0.0), (-0.3, 0.7), (2.0, -3.0)] {
            let q = p(x, y, 0.0);
            for side in [Side::Upper, Side::Lower] {
                let a = lie_derivative(&z, side, &q, 2).unwrap();
                let b = lie_derivative(&bare, side, &q, 2).unwrap();
                assert!((a - b).abs() < 1e-9, "{side} {x} {y}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn classification_examples() {
        let z = model_z0().system;
        assert_eq!(classify_sigma_point(&z, &p(0.1, 0.1, 0.0)).unwrap(), SigmaRegion::Sliding);
        assert_eq!(classify_sigma_point(&z, &p(-0.1, -0.1, 0.0)).unwrap(), SigmaRegion::Escaping);
        assert_eq!(classify_sigma_point(&z, &p(0.1, -0.3, 0.0)).unwrap(), SigmaRegion::CrossingPlus);
        assert_eq!(classify_sigma_point(&z, &p(-0.1, 0.3, 0.0)).unwrap(), SigmaRegion::CrossingMinus);
        assert_eq!(classify_sigma_point(&z, &p(0.0, 0.0, 0.0)).unwrap(), SigmaRegion::TwoFold);
        assert_eq!(classify_sigma_point(&z, &p(0.4, 0.0, 0.0)).unwrap(), SigmaRegion::TangencyUpper);
        assert_eq!(classify_sigma_point(&z, &p(0.0, 0.4, 0.0)).unwrap(), SigmaRegion::TangencyLower);
        assert!(matches!(classify_sigma_point(&z, &p(0.1, 0.1, 1e-6)), Err(SystemError::NotOnSigma(_))));
        assert!(matches!(classify_sigma_point(&z, &p(f64::NAN, 0.0, 0.0)), Err(SystemError::NonFinite(..))));
    }

    #[test]
    fn near_tangency_is_never_rounded_into_open_regions() {
        let z = model_z0().system;
        assert_eq!(classify_sigma_point(&z, &p(0.2, 5e-10, 0.0)).unwrap(), SigmaRegion::TangencyUpper);
        assert_eq!(classify_sigma_point(&z, &p(0.2, 2e-9, 0.0)).unwrap(), SigmaRegion::Sliding);
    }

    #[test]
    fn fold_examples() {
        let z = model_z0().system;
        let r = fold_report(&z, Side::Upper, &p(0.5, 0.0, 0.0)).unwrap();
        assert_eq!(r.kind, FoldKind::InvisibleFold);
        assert_eq!(r.second_lie, -0.5);
        let r = fold_report(&z, Side::Lower, &p(0.0, 0.5, 0.0)).unwrap();
        assert_eq!(r.kind, FoldKind::InvisibleFold);
        assert_eq!(r.second_lie, 1.0);
        assert_eq!(fold_report(&z, Side::Upper, &p(0.1, 0.2, 0.0)).unwrap().kind, FoldKind::NotTangent);
        // X².f = −(1 − x) vanishes at x = 1
        assert_eq!(fold_report(&z, Side::Upper, &p(1.0, 0.0, 0.0)).unwrap().kind, FoldKind::DegenerateTangency);
        assert_eq!(fold_report(&z, Side::Upper, &p(1.5, 0.0, 0.0)).unwrap().kind, FoldKind::VisibleFold);
    }

    #[test]
    fn origin_is_t_singularity() {
        let z = model_z0().system;
        let c = detect_t_singularity(&z, &Point3::zeros()).unwrap();
        assert!(c.is_t_singularity);
        assert!((c.determinant.abs() - 1.0).abs() < 1e-12);
        assert!((c.upper_direction.x.abs() - 1.0).abs() < 1e-12);
        assert!((c.lower_direction.y.abs() - 1.0).abs() < 1e-12);
        assert!(matches!(
            detect_t_singularity(&z, &p(0.3, 0.0, 0.0)),
            Err(SystemError::NotTwoFold { .. })
        ));
    }

    #[test]
    fn visible_upper_fold_breaks_t_singularity() {
        let z = model_z0().system;
        let flipped = PiecewiseSystem::new(
            Arc::new(FnField::new("x-visible", |q: &Point3| {
                Vec3::new(-1.0 - (q.x + q.y), 1.0 - (q.x + q.y), q.y)
            })),
            z.lower.clone(),
            z.switching.clone(),
        );
        let c = detect_t_singularity(&flipped, &Point3::zeros()).unwrap();
        assert!(!c.is_t_singularity);
        assert_eq!(c.upper.kind, FoldKind::VisibleFold);
    }

    #[test]
    fn degenerate_switching_gradient_is_rejected() {
        let z = model_z0().system;
        let flat = PiecewiseSystem::new(
            z.upper.clone(),
            z.lower.clone(),
            Arc::new(FnSwitching::new(|q: &Point3| q.z * q.z, |q: &Point3| Vec3::new(0.0, 0.0, 2.0 * q.z))),
        );
        assert!(matches!(
            lie_derivative(&flat, Side::Upper, &Point3::zeros(), 1),
            Err(SystemError::NonRegularSwitching(..))
        ));
    }
}
