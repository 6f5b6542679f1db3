//! Dormand–Prince 5(4) steps with FSAL and 4th-order dense output.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub(crate) type State = [f64; 4];

fn axpy(y: &State, terms: &[(f64, &State)], h: f64) -> State {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..4 {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// One attempted step from `y0` of size `h`, with its error norm and the
/// coefficients of the dense-output polynomial.
pub(crate) struct Step {
    pub y1: State,
    pub k7: State,
    pub err: f64,
    rcont: [State; 5],
}

impl Step {
    /// Interpolated state at fraction `theta ∈ [0, 1]` of the step.
    pub fn at(&self, theta: f64) -> State {
        let t1 = 1.0 - theta;
        let r = &self.rcont;
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = r[0][i] + theta * (r[1][i] + t1 * (r[2][i] + theta * (r[3][i] + t1 * r[4][i])));
        }
        out
    }
}

pub(crate) fn step<F: Fn(&State) -> State>(f: &F, y0: &State, k1: &State, h: f64, rtol: f64, atol: f64) -> Step {
    let k2 = f(&axpy(y0, &[(A21, k1)], h));
    let k3 = f(&axpy(y0, &[(A31, k1), (A32, &k2)], h));
    let k4 = f(&axpy(y0, &[(A41, k1), (A42, &k2), (A43, &k3)], h));
    let k5 = f(&axpy(y0, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)], h));
    let k6 = f(&axpy(y0, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h));
    let y1 = axpy(y0, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], h);
    let k7 = f(&y1);

    let mut acc = 0.0;
    for i in 0..4 {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        acc += (e / sc) * (e / sc);
    }
    let err = (acc / 4.0).sqrt();

    let mut rcont = [[0.0; 4]; 5];
    for i in 0..4 {
        let ydiff = y1[i] - y0[i];
        let bspl = h * k1[i] - ydiff;
        rcont[0][i] = y0[i];
        rcont[1][i] = ydiff;
        rcont[2][i] = bspl;
        rcont[3][i] = ydiff - h * k7[i] - bspl;
        rcont[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Step { y1, k7, err, rcont }
}

/// Step-size factor from an error norm.
pub(crate) fn factor(err: f64) -> f64 {
    if err == 0.0 {
        10.0
    } else {
        (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
    }
}
