//! The flat bump `h` and the perturbation families built from it.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::jet::Jet2;

/// Below this argument `e^{-1/w}` underflows, so `h` is exactly 0.
pub const W_UNDERFLOW: f64 = 1.0 / 745.0;

/// `h(w) = e^{-1/w}` for `w > 0`, else 0.
pub fn bump_h(w: f64) -> f64 {
    if w < W_UNDERFLOW {
        0.0
    } else {
        (-1.0 / w).exp()
    }
}

/// `h` composed with a jet; `h' = h/w²`, `h'' = h(1 − 2w)/w⁴`.
pub fn bump_jet(w: Jet2) -> Jet2 {
    let h = bump_h(w.v);
    if h == 0.0 {
        return Jet2::ZERO;
    }
    let w2 = w.v * w.v;
    w.map(h, h / w2, h * (1.0 - 2.0 * w.v) / (w2 * w2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho {
    /// `F = −ε h(x) h(−y) ∏_{j=1..k} (jε − x)`
    Finite(u32),
    /// `F = h(x) h(−y) sin(πε²/x)`
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub rho: Rho,
    pub epsilon: f64,
}

impl PerturbationSpec {
    pub fn finite(k: u32, epsilon: f64) -> Self {
        Self { rho: Rho::Finite(k), epsilon }
    }

    pub fn infinite(epsilon: f64) -> Self {
        Self { rho: Rho::Infinite, epsilon }
    }

    /// `F` at `(x, y)` with first and second partials.
    pub fn jet(&self, x: f64, y: f64) -> Jet2 {
        let hx = bump_jet(Jet2::var_x(x));
        if hx.is_zero() {
            return Jet2::ZERO;
        }
        let hy = bump_jet(-Jet2::var_y(y));
        if hy.is_zero() {
            return Jet2::ZERO;
        }
        let eps = self.epsilon;
        let shape = match self.rho {
            Rho::Finite(k) => {
                let xj = Jet2::var_x(x);
                let mut prod = Jet2::constant(-eps);
                for j in 1..=k {
                    prod = prod * (-xj + j as f64 * eps);
                }
                prod
            }
            Rho::Infinite => (Jet2::var_x(x).recip() * (PI * eps * eps)).sin(),
        };
        hx * hy * shape
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.jet(x, y).v
    }

    /// `(∂F/∂x, ∂F/∂y)`.
    pub fn partials(&self, x: f64, y: f64) -> (f64, f64) {
        let j = self.jet(x, y);
        (j.dx, j.dy)
    }

    /// True when `F ≡ 0` (ε = 0).
    pub fn is_trivial(&self) -> bool {
        self.epsilon == 0.0
    }

    /// Positive roots of `F(·, y)` for `y < 0` as predicted by the family's
    /// structure, ordered by `j`, restricted to `(a, b)`.
    pub fn predicted_roots(&self, a: f64, b: f64) -> Vec<(u32, f64)> {
        let eps = self.epsilon;
        let mut out = Vec::new();
        match self.rho {
            Rho::Finite(k) => {
                if eps > 0.0 {
                    for j in 1..=k {
                        let x = j as f64 * eps;
                        if x > a && x < b {
                            out.push((j, x));
                        }
                    }
                }
            }
            Rho::Infinite => {
                if eps != 0.0 {
                    let e2 = eps * eps;
                    let mut j = 1u32;
                    loop {
                        let x = e2 / j as f64;
                        if x <= a || j > 1_000_000 {
                            break;
                        }
                        if x < b {
                            out.push((j, x));
                        }
                        j += 1;
                    }
                }
            }
        }
        out
    }
}

/// `F^f(x, y)` and `∂F^f/∂x`.
pub fn f_finite(x: f64, y: f64, eps: f64, k: u32) -> (f64, f64) {
    let j = PerturbationSpec::finite(k, eps).jet(x, y);
    (j.v, j.dx)
}

/// `F^i(x, y)` and `∂F^i/∂x`.
pub fn f_infinite(x: f64, y: f64, eps: f64) -> (f64, f64) {
    let j = PerturbationSpec::infinite(eps).jet(x, y);
    (j.v, j.dx)
}

/// Closed form of `∂F^f/∂x(jε, y)`:
/// `−(−1)^j ε^k h(−y) h(jε) (j−1)! (k−j)!`.
pub fn finite_root_slope(j: u32, k: u32, eps: f64, y: f64) -> f64 {
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    -sign * eps.powi(k as i32) * bump_h(-y) * bump_h(j as f64 * eps) * fact(j - 1) * fact(k - j)
}

/// Closed form of `∂F^i/∂x(ε²/j, y) = (−1)^j (−πj²/ε²) h(−y) h(ε²/j)`.
pub fn infinite_root_slope(j: u32, eps: f64, y: f64) -> f64 {
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    let jf = j as f64;
    sign * (-PI * jf * jf / (eps * eps)) * bump_h(-y) * bump_h(eps * eps / jf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_values() {
        assert_eq!(bump_h(-1.0), 0.0);
        assert_eq!(bump_h(0.0), 0.0);
        assert_eq!(bump_h(1.0), (-1.0f64).exp());
        assert!((bump_h(0.1) - 4.539_992_976_248_485e-5).abs() < 1e-18);
        assert_eq!(bump_h(W_UNDERFLOW * 0.999), 0.0);
        assert!(bump_h(W_UNDERFLOW * 1.001) > 0.0);
    }

    #[test]
    fn bump_jet_derivatives_match_differences() {
        for &w in &[0.05, 0.2, 0.5, 1.0, 3.0] {
            let j = bump_jet(Jet2::var_x(w));
            let s = 1e-6 * w;
            let d1 = (bump_h(w + s) - bump_h(w - s)) / (2.0 * s);
            let s2 = 1e-3 * w;
            let d2 = (bump_h(w + s2) - 2.0 * bump_h(w) + bump_h(w - s2)) / (s2 * s2);
            assert!((j.dx - d1).abs() <= 1e-7 * d1.abs(), "w={w}");
            assert!((j.dxx - d2).abs() <= 1e-2 * d2.abs().max(1e-3), "w={w}");
        }
    }

    #[test]
    fn finite_examples() {
        assert_eq!(f_finite(0.1, -1.0, 0.1, 2).0, 0.0);
        assert_eq!(f_finite(-0.5, -1.0, 0.1, 2), (0.0, 0.0));
        assert!(f_finite(0.1, -1.0, 0.1, 2).1 > 0.0);
        assert!(f_finite(0.2, -1.0, 0.1, 2).1 < 0.0);
        // k = 0: empty product
        let (v, _) = f_finite(0.3, -0.5, 0.1, 0);
        assert_eq!(v, -0.1 * bump_h(0.3) * bump_h(0.5));
    }

    #[test]
    fn negative_epsilon_has_no_positive_roots() {
        // below 1/745 the bump is exactly zero
        let mut prev = f_finite(3e-3, -1.0, -0.1, 2).0;
        let mut x = 4e-3;
        while x < 1.0 {
            let v = f_finite(x, -1.0, -0.1, 2).0;
            assert!(prev > 0.0 && v > 0.0, "x={x}");
            prev = v;
            x += 1e-3;
        }
    }

    #[test]
    fn infinite_examples() {
        assert!(f_infinite(0.25, -1.0, 0.5).0.abs() < 1e-15);
        assert!(f_infinite(0.125, -1.0, 0.5).0.abs() < 1e-15);
        assert_eq!(f_infinite(-0.3, -1.0, 0.5), (0.0, 0.0));
        assert_eq!(f_infinite(-0.3, -1.0, 0.1), (0.0, 0.0));
        // h(x) underflow short-circuits the oscillating factor
        assert_eq!(f_infinite(1e-4, -1.0, 0.5), (0.0, 0.0));
    }

    #[test]
    fn root_slopes_match_closed_forms() {
        for k in 1..=5 {
            for j in 1..=k {
                let eps = 0.1;
                let x = j as f64 * eps;
                let (_, dx) = f_finite(x, -1.0, eps, k);
                let cf = finite_root_slope(j, k, eps, -1.0);
                assert!((dx - cf).abs() <= 1e-12 * cf.abs(), "k={k} j={j}: {dx} vs {cf}");
            }
        }
        for j in 1..=6 {
            let eps = 0.5;
            let x = eps * eps / j as f64;
            let (_, dx) = f_infinite(x, -1.0, eps);
            let cf = infinite_root_slope(j, eps, -1.0);
            assert!((dx - cf).abs() <= 1e-9 * cf.abs(), "j={j}: {dx} vs {cf}");
        }
    }

    #[test]
    fn predicted_roots_listing() {
        let r = PerturbationSpec::finite(3, 0.1).predicted_roots(0.01, 0.5);
        assert_eq!(r.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 2, 3]);
        let r = PerturbationSpec::infinite(0.5).predicted_roots(0.03, 0.3);
        assert_eq!(r.len(), 8);
        assert!(PerturbationSpec::finite(3, -0.1).predicted_roots(0.0, 1.0).is_empty());
    }
}
