//! Second-order forward-mode jets in two variables.

use std::ops::{Add, Mul, Neg, Sub};

/// Value of a function of `(x, y)` with its first and second partials.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 { v: 0.0, dx: 0.0, dy: 0.0, dxx: 0.0, dxy: 0.0, dyy: 0.0 };

    pub fn constant(c: f64) -> Self {
        Jet2 { v: c, ..Self::ZERO }
    }

    pub fn var_x(x: f64) -> Self {
        Jet2 { v: x, dx: 1.0, ..Self::ZERO }
    }

    pub fn var_y(y: f64) -> Self {
        Jet2 { v: y, dy: 1.0, ..Self::ZERO }
    }

    /// `g ∘ self` given `g(v)`, `g'(v)`, `g''(v)`.
    pub fn map(self, g: f64, g1: f64, g2: f64) -> Self {
        Jet2 {
            v: g,
            dx: g1 * self.dx,
            dy: g1 * self.dy,
            dxx: g2 * self.dx * self.dx + g1 * self.dxx,
            dxy: g2 * self.dx * self.dy + g1 * self.dxy,
            dyy: g2 * self.dy * self.dy + g1 * self.dyy,
        }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.map(s, c, -s)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.map(r, -r * r, 2.0 * r * r * r)
    }

    pub fn scale(self, c: f64) -> Self {
        Jet2 {
            v: c * self.v,
            dx: c * self.dx,
            dy: c * self.dy,
            dxx: c * self.dxx,
            dxy: c * self.dxy,
            dyy: c * self.dyy,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            dx: self.dx + o.dx,
            dy: self.dy + o.dy,
            dxx: self.dxx + o.dxx,
            dxy: self.dxy + o.dxy,
            dyy: self.dyy + o.dyy,
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        self + (-o)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            dx: self.dx * o.v + self.v * o.dx,
            dy: self.dy * o.v + self.v * o.dy,
            dxx: self.dxx * o.v + 2.0 * self.dx * o.dx + self.v * o.dxx,
            dxy: self.dxy * o.v + self.dx * o.dy + self.dy * o.dx + self.v * o.dxy,
            dyy: self.dyy * o.v + 2.0 * self.dy * o.dy + self.v * o.dyy,
        }
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(self, c: f64) -> Jet2 {
        Jet2 { v: self.v + c, ..self }
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, c: f64) -> Jet2 {
        self.scale(c)
    }
}
