//! Closed-form eigen-decomposition of real 2×2 matrices.

use nalgebra::{Complex, Matrix2};
use serde::{Deserialize, Serialize};

pub type C64 = Complex<f64>;

/// Eigenvalues ordered by decreasing real part, with unit eigenvectors
/// in matching order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigen2 {
    pub values: [C64; 2],
    pub vectors: [[C64; 2]; 2],
}

impl Eigen2 {
    /// ‖M v − λ v‖ for the i-th pair.
    pub fn residual(&self, m: &Matrix2<f64>, i: usize) -> f64 {
        let l = self.values[i];
        let v = self.vectors[i];
        let r0 = v[0] * m[(0, 0)] + v[1] * m[(0, 1)] - l * v[0];
        let r1 = v[0] * m[(1, 0)] + v[1] * m[(1, 1)] - l * v[1];
        (r0.norm_sqr() + r1.norm_sqr()).sqrt()
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|l| l.im == 0.0)
    }
}

pub fn eigen2(m: &Matrix2<f64>) -> Eigen2 {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let half = 0.5 * (a + d);
    let det = a * d - b * c;
    let hd = 0.5 * (a - d);
    let disc = hd * hd + b * c;

    let values = if disc >= 0.0 {
        let r = disc.sqrt();
        // larger-magnitude root first, the other through the determinant
        let big = if half >= 0.0 { half + r } else { half - r };
        let small = if big != 0.0 { det / big } else { half - r };
        let (hi, lo) = if big >= small { (big, small) } else { (small, big) };
        [C64::new(hi, 0.0), C64::new(lo, 0.0)]
    } else {
        let w = (-disc).sqrt();
        [C64::new(half, w), C64::new(half, -w)]
    };

    let vectors = [0, 1].map(|i| eigenvector(a, b, c, d, values[i], i));
    Eigen2 { values, vectors }
}

fn eigenvector(a: f64, b: f64, c: f64, d: f64, l: C64, index: usize) -> [C64; 2] {
    let one = C64::new(1.0, 0.0);
    let u = [C64::new(b, 0.0), l - a];
    let w = [l - d, C64::new(c, 0.0)];
    let nu = (u[0].norm_sqr() + u[1].norm_sqr()).sqrt();
    let nw = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
    let (v, n) = if nu >= nw { (u, nu) } else { (w, nw) };
    if n == 0.0 {
        // scalar matrix: every vector is an eigenvector
        return if index == 0 { [one, C64::new(0.0, 0.0)] } else { [C64::new(0.0, 0.0), one] };
    }
    [v[0] / n, v[1] / n]
}
