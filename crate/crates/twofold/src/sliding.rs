//! Filippov sliding field on `Σ^s ∪ Σ^e` and equilibrium analysis of its
//! normalized planar form.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{eigen2, C64};
use crate::system::{classify_sigma_point, lie1_gradient, PiecewiseSystem, Point3, SigmaRegion, Side, SystemError, Vec3};

pub const TOL_DENOMINATOR: f64 = 1e-9;
pub const TOL_EQUILIBRIUM: f64 = 1e-9;
/// `λ` counts as zero when `|λ| < ZERO_EIGEN·max(1, |λ_other|)`.
pub const ZERO_EIGEN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlidingError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("point lies in {0:?}, outside the sliding and escaping regions")]
    OutsideSlidingSet(SigmaRegion),
    #[error("|Y.f − X.f| = {0:e} is below the denominator tolerance")]
    DenominatorNearZero(f64),
    #[error("normalized sliding field has magnitude {0:e}; not an equilibrium")]
    NotEquilibrium(f64),
    #[error("planar analysis needs Σ to be a horizontal plane")]
    UnsupportedChart,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlidingVector {
    pub value: Vec3,
    pub region: SigmaRegion,
    /// Set on `Σ^e`, where the normalized field runs against the Filippov one.
    pub reversed_orientation: bool,
}

/// `N(q) = (Y.f)X − (X.f)Y`, without region checks.
pub fn normalized_raw(system: &PiecewiseSystem, q: &Point3) -> Result<(Vec3, f64, f64), SystemError> {
    let x = system.upper.eval(q);
    let y = system.lower.eval(q);
    let g = system.regular_gradient(q)?;
    let xf = g.dot(&x);
    let yf = g.dot(&y);
    Ok((x * yf - y * xf, xf, yf))
}

/// Normalized field `N` or the Filippov field `N/(Y.f − X.f)` at a point of
/// `Σ^s ∪ Σ^e`.
pub fn sliding_field(system: &PiecewiseSystem, q: &Point3, normalized: bool) -> Result<SlidingVector, SlidingError> {
    let region = classify_sigma_point(system, q)?;
    let (n, xf, yf) = normalized_raw(system, q)?;
    let den = yf - xf;
    if !normalized && den.abs() <= TOL_DENOMINATOR {
        return Err(SlidingError::DenominatorNearZero(den.abs()));
    }
    if !matches!(region, SigmaRegion::Sliding | SigmaRegion::Escaping) {
        return Err(SlidingError::OutsideSlidingSet(region));
    }
    let value = if normalized { n } else { n / den };
    Ok(SlidingVector { value, region, reversed_orientation: region == SigmaRegion::Escaping })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumClass {
    SaddleNode,
    HyperbolicSaddle,
    Node,
    Focus,
    Degenerate,
    LineOfEquilibria,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub location: Point3,
    pub jacobian: Matrix2<f64>,
    pub eigenvalues: [C64; 2],
    /// In `(x, y)` coordinates of Σ.
    pub eigenvectors: [[C64; 2]; 2],
    pub classification: EquilibriumClass,
}

impl EquilibriumReport {
    pub fn residual(&self, i: usize) -> f64 {
        crate::linalg::Eigen2 { values: self.eigenvalues, vectors: self.eigenvectors }.residual(&self.jacobian, i)
    }

    /// Eigenvectors mapped to `(u, v) = (x + y, x − y)` and renormalized.
    pub fn eigenvectors_uv(&self) -> [[C64; 2]; 2] {
        self.eigenvectors.map(|v| {
            let w = [v[0] + v[1], v[0] - v[1]];
            let n = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
            [w[0] / n, w[1] / n]
        })
    }
}

/// Planar `(x, y)` Jacobian of `N` at `q`.
pub fn normalized_jacobian(system: &PiecewiseSystem, q: &Point3) -> Result<Matrix2<f64>, SlidingError> {
    let x = system.upper.eval(q);
    let y = system.lower.eval(q);
    let g = system.regular_gradient(q)?;
    if let (Some(jx), Some(jy)) = (system.upper.jacobian(q), system.lower.jacobian(q)) {
        let gx = lie1_gradient(system, system.field(Side::Upper), q)?;
        let gy = lie1_gradient(system, system.field(Side::Lower), q)?;
        let xf = g.dot(&x);
        let yf = g.dot(&y);
        let full = x * gy.transpose() + jx * yf - y * gx.transpose() - jy * xf;
        return Ok(Matrix2::new(full[(0, 0)], full[(0, 1)], full[(1, 0)], full[(1, 1)]));
    }
    let h = 1e-6 * q.norm().max(1.0);
    let mut m = Matrix2::zeros();
    for c in 0..2 {
        let mut e = Vec3::zeros();
        e[c] = h;
        let a = normalized_raw(system, &(q + e))?.0;
        let b = normalized_raw(system, &(q - e))?.0;
        for r in 0..2 {
            m[(r, c)] = (a[r] - b[r]) / (2.0 * h);
        }
    }
    Ok(m)
}

pub fn analyze_equilibrium(system: &PiecewiseSystem, q: &Point3) -> Result<EquilibriumReport, SlidingError> {
    system.on_sigma(q)?;
    let g = system.regular_gradient(q)?;
    if g.x != 0.0 || g.y != 0.0 {
        return Err(SlidingError::UnsupportedChart);
    }
    let (n, _, _) = normalized_raw(system, q)?;
    if n.norm() > TOL_EQUILIBRIUM {
        return Err(SlidingError::NotEquilibrium(n.norm()));
    }
    let jacobian = normalized_jacobian(system, q)?;
    let eig = eigen2(&jacobian);
    let classification = classify(system, q, &eig);
    Ok(EquilibriumReport {
        location: *q,
        jacobian,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        classification,
    })
}

fn classify(system: &PiecewiseSystem, q: &Point3, eig: &crate::linalg::Eigen2) -> EquilibriumClass {
    let [l0, l1] = eig.values;
    let zero = |a: C64, b: C64| a.norm() < ZERO_EIGEN * b.norm().max(1.0);
    if !eig.is_real() {
        return if zero(C64::new(l0.re, 0.0), C64::new(l0.im, 0.0)) {
            EquilibriumClass::Degenerate
        } else {
            EquilibriumClass::Focus
        };
    }
    let (z0, z1) = (zero(l0, l1), zero(l1, l0));
    match (z0, z1) {
        (true, true) => EquilibriumClass::Degenerate,
        (true, false) | (false, true) => {
            // the field either vanishes along the kernel direction or drifts
            let k = if z0 { eig.vectors[0] } else { eig.vectors[1] };
            let dir = Vec3::new(k[0].re, k[1].re, 0.0);
            let step = 1e-3;
            let drift = [step, -step]
                .iter()
                .filter_map(|s| normalized_raw(system, &(q + dir * *s)).ok())
                .map(|(n, _, _)| n.norm())
                .fold(0.0, f64::max);
            if drift < 1e-12 {
                EquilibriumClass::LineOfEquilibria
            } else {
                EquilibriumClass::SaddleNode
            }
        }
        (false, false) => {
            if l0.re * l1.re < 0.0 {
                EquilibriumClass::HyperbolicSaddle
            } else {
                EquilibriumClass::Node
            }
        }
    }
}

/// `(x, y, z) ↦ (x + y, x − y, z)`.
pub fn uv_transform(p: &Point3) -> Point3 {
    Point3::new(p.x + p.y, p.x - p.y, p.z)
}

pub fn uv_inverse(q: &Point3) -> Point3 {
    Point3::new(0.5 * (q.x + q.y), 0.5 * (q.x - q.y), q.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::model_z0;
    use crate::system::{FnField, HeightSwitching};
    use std::sync::Arc;

    fn p(x: f64, y: f64) -> Point3 {
        Point3::new(x, y, 0.0)
    }

    #[test]
    fn normalized_examples() {
        let z = model_z0().system;
        let v = sliding_field(&z, &p(0.1, 0.1), true).unwrap();
        assert!((v.value - Vec3::new(-0.02, -0.02, 0.0)).norm() < 1e-15);
        assert!(!v.reversed_orientation);
        let v = sliding_field(&z, &p(0.2, 0.2), true).unwrap();
        assert!((v.value - Vec3::new(-0.08, -0.08, 0.0)).norm() < 1e-15);
        let v = sliding_field(&z, &p(-0.2, -0.1), true).unwrap();
        assert!(v.reversed_orientation);
    }

    #[test]
    fn r0_denominator_and_crossing_rejection() {
        let z = model_z0().system;
        for x in [0.3, -0.7, 1e-3] {
            assert!(matches!(sliding_field(&z, &p(x, -x), false), Err(SlidingError::DenominatorNearZero(_))));
        }
        assert!(matches!(
            sliding_field(&z, &p(0.1, -0.3), true),
            Err(SlidingError::OutsideSlidingSet(SigmaRegion::CrossingPlus))
        ));
    }

    #[test]
    fn origin_is_a_saddle_node() {
        let z = model_z0().system;
        let r = analyze_equilibrium(&z, &Point3::zeros()).unwrap();
        assert_eq!(r.classification, EquilibriumClass::SaddleNode);
        assert_eq!(r.eigenvalues[0].re, 0.0);
        assert_eq!(r.eigenvalues[1].re, -2.0);
        assert!(r.residual(0) < 1e-8 && r.residual(1) < 1e-8);
        let uv = r.eigenvectors_uv();
        assert!((uv[0][0].norm() - 1.0).abs() < 1e-12 && uv[0][1].norm() < 1e-12);
        assert!(uv[1][0].norm() < 1e-12 && (uv[1][1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_system_is_a_node() {
        // sliding field (−u, −2v) with u = x, v = y: N = (Y.f)X − (X.f)Y
        // with X = (−x, −2y, −1), Y = (0, 0, 1) gives N = X restricted.
        let sys = PiecewiseSystem::new(
            Arc::new(FnField::new("x", |q: &Point3| Vec3::new(-q.x, -2.0 * q.y, -1.0))),
            Arc::new(FnField::new("y", |_: &Point3| Vec3::new(0.0, 0.0, 1.0))),
            Arc::new(HeightSwitching),
        );
        let r = analyze_equilibrium(&sys, &Point3::zeros()).unwrap();
        assert_eq!(r.classification, EquilibriumClass::Node);
        assert!((r.eigenvalues[0].re + 1.0).abs() < 1e-8);
        assert!((r.eigenvalues[1].re + 2.0).abs() < 1e-8);
    }

    #[test]
    fn not_an_equilibrium() {
        let z = model_z0().system;
        assert!(matches!(analyze_equilibrium(&z, &p(0.1, 0.1)), Err(SlidingError::NotEquilibrium(_))));
    }

    #[test]
    fn r0_points_have_singular_filippov_field_and_tangent_normalized_field() {
        // N(x, −x) = (−2x, 2x): nonzero, tangent to r0 — r0 is not an equilibrium line
        let z = model_z0().system;
        for x in [0.1, 0.4, -0.3] {
            let (n, _, _) = normalized_raw(&z, &p(x, -x)).unwrap();
            assert!((n - Vec3::new(-2.0 * x, 2.0 * x, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn uv_examples() {
        assert_eq!(uv_transform(&Point3::new(1.0, -1.0, 0.0)), Point3::new(0.0, 2.0, 0.0));
        let q = uv_transform(&Point3::new(0.3, 0.1, 0.2));
        assert!((q - Point3::new(0.4, 0.2, 0.2)).norm() < 1e-15);
    }
}
