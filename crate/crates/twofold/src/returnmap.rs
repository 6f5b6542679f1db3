//! Half-return maps of the two smooth flows, their composition, and limit
//! cycles of the perturbed families on the invariant plane `x + y = 0`.
//!
//! Σ points are written in the chart `(x, y)` of `z = 0`. The upper map is
//! the involution of the upper flow; the lower map that of the (possibly
//! perturbed) lower flow. Both accept points on either side of their fold
//! line: the return is taken forward in time when the field leaves Σ into
//! its own half-space and backward otherwise.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{eigen2, Eigen2};
use crate::models::PerturbationSpec;
use crate::system::TOL_TANGENCY;

pub type SigmaPoint = Vector2<f64>;

/// The trivial root `t = 0` is excluded below this time.
pub const T_EXCLUSION: f64 = 1e-8;
pub const T_SCAN_STEP: f64 = 0.05;
pub const T_SCAN_MAX: f64 = 50.0;
pub const CYCLE_DEDUP: f64 = 1e-8;
pub const CYCLE_ROOT_WIDTH: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReturnMapError {
    #[error("{map} map: no return to Σ from ({x}, {y}) within |t| ≤ {T_SCAN_MAX}")]
    NoReturn { map: &'static str, x: f64, y: f64 },
    #[error("{map} map: ({x}, {y}) is outside its domain")]
    NotInDomain { map: &'static str, x: f64, y: f64 },
    #[error("iterate {index} left the return-map domain at ({x}, {y})")]
    DomainExit { index: usize, x: f64, y: f64 },
    #[error("invalid interval ({0}, {1})")]
    InvalidInterval(f64, f64),
    #[error("grid needs at least 2 points")]
    InvalidGrid,
    #[error("non-finite input")]
    NonFinite,
}

type Result<T> = std::result::Result<T, ReturnMapError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlyTimeResult {
    pub t: f64,
    pub residual: f64,
    pub iterations: u32,
    pub bracket: (f64, f64),
}

/// Landing point of a half-return and its signed fly time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfReturn {
    pub point: SigmaPoint,
    pub t: f64,
    /// Lower map only: `t − (−2x₀)`, the fly-time shift caused by the
    /// perturbation, solved for directly so it keeps full relative accuracy.
    pub shift: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirstReturn {
    pub point: SigmaPoint,
    pub upper: HalfReturn,
    pub lower: HalfReturn,
}

impl FirstReturn {
    pub fn period(&self) -> f64 {
        self.upper.t + self.lower.t
    }
}

/// `(√2/2)|x + y|`, the distance from a Σ point to r₀.
pub fn distance_to_r0(p: &SigmaPoint) -> f64 {
    std::f64::consts::FRAC_1_SQRT_2 * (p.x + p.y).abs()
}

fn check(p: &SigmaPoint) -> Result<()> {
    if p.x.is_finite() && p.y.is_finite() {
        Ok(())
    } else {
        Err(ReturnMapError::NonFinite)
    }
}

/// Scan `q` on `dir·[T_EXCLUSION, T_SCAN_MAX]` for its first sign change.
fn scan_bracket<Q: Fn(f64) -> f64>(q: &Q, dir: f64, step: f64) -> Option<(f64, f64)> {
    let mut a = dir * T_EXCLUSION;
    let mut qa = q(a);
    let n = (T_SCAN_MAX / step).ceil() as usize;
    for i in 1..=n {
        let b = dir * (i as f64 * step).min(T_SCAN_MAX);
        let qb = q(b);
        if qb == 0.0 || qa.signum() != qb.signum() {
            return Some((a, b));
        }
        a = b;
        qa = qb;
    }
    None
}

/// Bisection until the midpoint no longer moves; returns the endpoint with
/// the smaller `|g|` and the iteration count.
fn bisect<G: Fn(f64) -> f64>(g: &G, lo: f64, hi: f64, width: f64) -> (f64, u32) {
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (g(a), g(b));
    let mut it = 0;
    if ga == 0.0 {
        return (a, 0);
    }
    if gb == 0.0 {
        return (b, 0);
    }
    while (b - a).abs() > width {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        it += 1;
        let gm = g(m);
        if gm == 0.0 {
            return (m, it);
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
            gb = gm;
        }
    }
    (if ga.abs() <= gb.abs() { a } else { b }, it)
}

/// `z`-component of the upper flow from `(x₀, y₀, 0)`.
fn upper_g(s: f64, d: f64, t: f64) -> f64 {
    -0.5 * t * t + 0.25 * s * (-2.0 * t).exp_m1() + 0.5 * d * t
}

/// `g(t)/t`, with the removable singularity at 0 filled in.
fn upper_q(s: f64, d: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.5 * (d - s);
    }
    -0.5 * t + 0.25 * s * (-2.0 * t).exp_m1() / t + 0.5 * d
}

fn upper_fly_time_signed(p: &SigmaPoint) -> Result<FlyTimeResult> {
    let (s, d) = (p.x + p.y, p.x - p.y);
    let dir = if p.y < 0.0 { 1.0 } else { -1.0 };
    if s == 0.0 {
        // on r₀ the return equation is −t²/2 + dt/2 = 0
        return Ok(FlyTimeResult { t: d, residual: 0.0, iterations: 0, bracket: (d, d) });
    }
    let q = |t: f64| upper_q(s, d, t);
    let (lo, hi) =
        scan_bracket(&q, dir, T_SCAN_STEP).ok_or(ReturnMapError::NoReturn { map: "upper", x: p.x, y: p.y })?;
    let (mut t, iterations) = bisect(&q, lo, hi, 0.0);
    // one Newton polish on g, kept only if it helps
    let g = |t: f64| upper_g(s, d, t);
    let dg = -t - 0.5 * s * (-2.0 * t).exp() + 0.5 * d;
    if dg != 0.0 {
        let tn = t - g(t) / dg;
        if g(tn).abs() < g(t).abs() && tn.abs() > T_EXCLUSION {
            t = tn;
        }
    }
    Ok(FlyTimeResult { t, residual: g(t).abs(), iterations, bracket: (lo.min(hi), lo.max(hi)) })
}

/// Positive return time of the upper flow from `p ∈ Σ^{c+}` (`X.f = −y > 0`).
pub fn x_fly_time(p: &SigmaPoint) -> Result<FlyTimeResult> {
    check(p)?;
    if -p.y <= TOL_TANGENCY {
        return Err(ReturnMapError::NotInDomain { map: "upper", x: p.x, y: p.y });
    }
    upper_fly_time_signed(p)
}

/// The involution `φ_X`; fixes the fold line `y = 0`.
pub fn half_return_x(p: &SigmaPoint) -> Result<HalfReturn> {
    check(p)?;
    if p.y.abs() <= TOL_TANGENCY {
        return Ok(HalfReturn { point: *p, t: 0.0, shift: 0.0 });
    }
    let t = upper_fly_time_signed(p)?.t;
    let (s, d) = (p.x + p.y, p.x - p.y);
    let half = 0.5 * s * (-2.0 * t).exp();
    Ok(HalfReturn { point: SigmaPoint::new(-t + half + 0.5 * d, t + half - 0.5 * d), t, shift: 0.0 })
}

/// The involution `φ_Y` of the lower flow, perturbed by `spec` if given;
/// fixes the fold line `x = 0`.
pub fn half_return_y(p: &SigmaPoint, spec: Option<&PerturbationSpec>) -> Result<HalfReturn> {
    check(p)?;
    let (a, b) = (p.x, p.y);
    let tu = -2.0 * a;
    let spec = spec.filter(|s| !s.is_trivial());
    let Some(spec) = spec else {
        if a.abs() <= TOL_TANGENCY {
            return Ok(HalfReturn { point: *p, t: 0.0, shift: 0.0 });
        }
        return Ok(HalfReturn { point: SigmaPoint::new(-a, b + 2.0 * a), t: tu, shift: 0.0 });
    };
    let (fx, fy) = spec.partials(a, b);
    let lie = a + fx - fy;
    if lie.abs() <= TOL_TANGENCY {
        return Ok(HalfReturn { point: *p, t: 0.0, shift: 0.0 });
    }
    let f0 = spec.value(a, b);
    let dir = if lie < 0.0 { 1.0 } else { -1.0 };
    let q = |t: f64| {
        if t == 0.0 {
            return lie;
        }
        a + 0.5 * t + (spec.value(a + t, b - t) - f0) / t
    };
    let step = T_SCAN_STEP.min(tu.abs() / 8.0).max(T_EXCLUSION);
    let (lo, hi) = scan_bracket(&q, dir, step).ok_or(ReturnMapError::NoReturn { map: "lower", x: a, y: b })?;
    // z along the flow in terms of δ = t − tu; exact cancellation of the
    // unperturbed part leaves −aδ + δ²/2 + ΔF
    let g = |dl: f64| -a * dl + 0.5 * dl * dl + spec.value(-a + dl, b + 2.0 * a - dl) - f0;
    let (dl, _) = bisect(&g, lo - tu, hi - tu, 0.0);
    Ok(HalfReturn { point: SigmaPoint::new(-a + dl, b + 2.0 * a - dl), t: tu + dl, shift: dl })
}

/// `φ_Y ∘ φ_X` for `p` with `X.f > 0` whose upper image has `Y.f < 0`.
pub fn first_return(p: &SigmaPoint, spec: Option<&PerturbationSpec>) -> Result<FirstReturn> {
    check(p)?;
    if -p.y <= TOL_TANGENCY {
        return Err(ReturnMapError::NotInDomain { map: "upper", x: p.x, y: p.y });
    }
    let upper = half_return_x(p)?;
    let m = upper.point;
    if m.x >= -TOL_TANGENCY {
        return Err(ReturnMapError::NotInDomain { map: "lower", x: m.x, y: m.y });
    }
    let lower = half_return_y(&m, spec)?;
    Ok(FirstReturn { point: lower.point, upper, lower })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateReport {
    /// Starting point followed by each successful return.
    pub points: Vec<SigmaPoint>,
    pub distances: Vec<f64>,
    /// Upper fly time of each return.
    pub fly_times: Vec<f64>,
    /// Index of the first point the map could not be applied to, if the
    /// sequence stopped early.
    pub exit: Option<usize>,
}

impl IterateReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.distances.windows(2).all(|w| w[1] < w[0])
    }
}

/// Up to `n` returns from `p`; stops early (with `exit` set) when an
/// iterate leaves the domain of the composition.
pub fn iterate_return(p: &SigmaPoint, n: usize, spec: Option<&PerturbationSpec>) -> Result<IterateReport> {
    check(p)?;
    let mut rep = IterateReport { points: vec![*p], distances: vec![distance_to_r0(p)], fly_times: vec![], exit: None };
    let mut cur = *p;
    for i in 0..n {
        match first_return(&cur, spec) {
            Ok(r) => {
                cur = r.point;
                rep.points.push(cur);
                rep.distances.push(distance_to_r0(&cur));
                rep.fly_times.push(r.upper.t);
            }
            Err(ReturnMapError::NotInDomain { .. }) if i > 0 => {
                rep.exit = Some(i);
                break;
            }
            Err(ReturnMapError::NotInDomain { .. }) => {
                return Err(ReturnMapError::DomainExit { index: 0, x: p.x, y: p.y });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnLinearization {
    pub base: (f64, f64),
    pub jacobian: Matrix2<f64>,
    pub eigen: Eigen2,
}

impl ReturnLinearization {
    pub fn max_residual(&self) -> f64 {
        (0..2).map(|i| self.eigen.residual(&self.jacobian, i)).fold(0.0, f64::max)
    }
}

/// Central-difference Jacobian of the first return at `(x₀, −x₀)`.
pub fn linearized_return(x0: f64, spec: Option<&PerturbationSpec>) -> Result<ReturnLinearization> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(ReturnMapError::NotInDomain { map: "upper", x: x0, y: -x0 });
    }
    let h = 1e-6 * x0.max(1.0);
    let base = SigmaPoint::new(x0, -x0);
    let f = |dx: f64, dy: f64| first_return(&SigmaPoint::new(x0 + dx, -x0 + dy), spec).map(|r| r.point);
    let cx = (f(h, 0.0)? - f(-h, 0.0)?) / (2.0 * h);
    let cy = (f(0.0, h)? - f(0.0, -h)?) / (2.0 * h);
    let jacobian = Matrix2::new(cx.x, cy.x, cx.y, cy.y);
    Ok(ReturnLinearization { base: (base.x, base.y), jacobian, eigen: eigen2(&jacobian) })
}

/// Displacement of the return map restricted to r₀: the first return of
/// `(x, −x)` is `(x + D(x), −x − D(x))`.
pub fn pi0_displacement(x: f64, spec: Option<&PerturbationSpec>) -> Result<f64> {
    Ok(first_return(&SigmaPoint::new(x, -x), spec)?.lower.shift)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Attractor,
    Repeller,
    NonHyperbolic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub x0: f64,
    pub period: f64,
    pub multiplier: f64,
    /// `multiplier − 1` without the cancellation, since it can be tiny.
    pub multiplier_minus_one: f64,
    pub stability: Stability,
    pub j: Option<u32>,
    pub spec: PerturbationSpec,
}

/// `D'(x₀)` by central difference at step `h`.
fn displacement_slope(x0: f64, h: f64, spec: &PerturbationSpec) -> Result<f64> {
    Ok((pi0_displacement(x0 + h, Some(spec))? - pi0_displacement(x0 - h, Some(spec))?) / (2.0 * h))
}

/// Classify a fixed point of the r₀ return by `D'`; "hyperbolic" means the
/// difference quotient is resolved: the steps `h` and `h/2` agree in sign
/// and to within half their size.
pub fn classify_multiplier(slope: f64, slope_half: f64) -> Stability {
    let resolved = slope != 0.0
        && slope.signum() == slope_half.signum()
        && (slope - slope_half).abs() <= 0.5 * slope.abs().max(slope_half.abs());
    if !resolved {
        Stability::NonHyperbolic
    } else if slope < 0.0 {
        Stability::Attractor
    } else {
        Stability::Repeller
    }
}

fn cycle_at(x0: f64, spec: &PerturbationSpec) -> Result<LimitCycle> {
    let h = 1e-6 * x0.max(1.0);
    let slope = displacement_slope(x0, h, spec)?;
    let slope_half = displacement_slope(x0, 0.5 * h, spec)?;
    let r = first_return(&SigmaPoint::new(x0, -x0), Some(spec))?;
    let j = spec
        .predicted_roots(0.0, f64::INFINITY)
        .into_iter()
        .find(|(_, x)| (x - x0).abs() <= 1e-6 * x.max(1e-3))
        .map(|(j, _)| j);
    Ok(LimitCycle {
        x0,
        period: r.period(),
        multiplier: 1.0 + slope,
        multiplier_minus_one: slope,
        stability: classify_multiplier(slope, slope_half),
        j,
        spec: *spec,
    })
}

fn check_interval(a: f64, b: f64, grid_n: usize) -> Result<()> {
    if !(a > 0.0 && b > a && b.is_finite()) {
        return Err(ReturnMapError::InvalidInterval(a, b));
    }
    if grid_n < 2 {
        return Err(ReturnMapError::InvalidGrid);
    }
    Ok(())
}

/// Sign-change roots of `f` on a uniform grid over `[a, b]`, bisected to
/// `CYCLE_ROOT_WIDTH` and deduplicated.
fn grid_roots<F: Fn(f64) -> Result<f64> + Sync>(f: F, a: f64, b: f64, grid_n: usize) -> Result<Vec<f64>> {
    let xs: Vec<f64> = (0..grid_n).map(|i| a + (b - a) * i as f64 / (grid_n - 1) as f64).collect();
    let vals: Vec<f64> = xs.par_iter().map(|&x| f(x)).collect::<Result<_>>()?;
    let brackets: Vec<(f64, f64)> = (0..grid_n - 1)
        .filter(|&i| vals[i] == 0.0 || (vals[i] != 0.0 && vals[i + 1] != 0.0 && vals[i].signum() != vals[i + 1].signum()))
        .map(|i| (xs[i], xs[i + 1]))
        .collect();
    let mut roots: Vec<f64> = brackets
        .par_iter()
        .map(|&(lo, hi)| {
            let g = |x: f64| f(x).unwrap_or(f64::NAN);
            bisect(&g, lo, hi, CYCLE_ROOT_WIDTH).0
        })
        .collect();
    if vals[grid_n - 1] == 0.0 {
        roots.push(xs[grid_n - 1]);
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| (*x - *y).abs() <= CYCLE_DEDUP);
    Ok(roots)
}

/// Limit cycles of the perturbed model crossing Σ at `(x₀, −x₀)`,
/// `x₀ ∈ (a, b)`, from sign changes of the r₀ displacement.
pub fn find_cycles(spec: &PerturbationSpec, interval: (f64, f64), grid_n: usize) -> Result<Vec<LimitCycle>> {
    let (a, b) = interval;
    check_interval(a, b, grid_n)?;
    if spec.is_trivial() {
        return Ok(vec![]);
    }
    let roots = grid_roots(|x| pi0_displacement(x, Some(spec)), a, b, grid_n)?;
    roots.par_iter().map(|&x| cycle_at(x, spec)).collect()
}

/// Independent detector: sign-change roots of `x ↦ F(x, −x)` on the same
/// grid.
pub fn perturbation_roots_on_r0(spec: &PerturbationSpec, interval: (f64, f64), grid_n: usize) -> Result<Vec<f64>> {
    let (a, b) = interval;
    check_interval(a, b, grid_n)?;
    if spec.is_trivial() {
        return Ok(vec![]);
    }
    grid_roots(|x| Ok(spec.value(x, -x)), a, b, grid_n)
}

pub const CYCLE_REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub schema_version: u32,
    pub spec: PerturbationSpec,
    pub interval: (f64, f64),
    pub grid_n: usize,
    pub cycles: Vec<LimitCycle>,
    /// Largest distance from a cycle to the nearest root of `F(x, −x)`.
    pub cross_check_gap: Option<f64>,
    pub cross_check_count: usize,
    pub notes: Vec<String>,
}

/// `find_cycles` with the `F(x, −x)` cross-check folded in.
pub fn cycle_report(spec: &PerturbationSpec, interval: (f64, f64), grid_n: usize) -> Result<CycleReport> {
    let cycles = find_cycles(spec, interval, grid_n)?;
    let check = perturbation_roots_on_r0(spec, interval, grid_n)?;
    let gap = cycles
        .iter()
        .map(|c| check.iter().map(|r| (r - c.x0).abs()).fold(f64::INFINITY, f64::min))
        .fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.max(g))));
    let mut notes = vec![];
    if cycles.is_empty() {
        notes.push("no limit cycles in the interval".to_string());
        if matches!(spec.rho, crate::models::Rho::Finite(0)) && spec.epsilon > 0.0 {
            notes.push("origin asymptotically stable".to_string());
        }
    }
    if check.len() != cycles.len() {
        notes.push(format!("cross-check found {} roots of F(x, -x) against {} cycles", check.len(), cycles.len()));
    }
    Ok(CycleReport {
        schema_version: CYCLE_REPORT_SCHEMA,
        spec: *spec,
        interval,
        grid_n,
        cycles,
        cross_check_gap: gap,
        cross_check_count: check.len(),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> SigmaPoint {
        SigmaPoint::new(x, y)
    }

    #[test]
    fn fly_time_on_r0_is_exact() {
        assert_eq!(x_fly_time(&p(0.5, -0.5)).unwrap().t, 1.0);
        assert_eq!(x_fly_time(&p(0.25, -0.25)).unwrap().t, 0.5);
    }

    #[test]
    fn fly_time_off_r0() {
        let r = x_fly_time(&p(1.0, -0.5)).unwrap();
        let g = |t: f64| -0.5 * t * t + 0.125 * (-2.0 * t).exp() + 0.75 * t - 0.125;
        let (oracle, _) = bisect(&g, 1.0, 1.5, 1e-15);
        assert!((r.t - oracle).abs() < 1e-12, "{} {}", r.t, oracle);
        assert!(r.residual <= 1e-12);
        assert!(r.bracket.0 <= r.t && r.t <= r.bracket.1);
    }

    #[test]
    fn upper_domain() {
        assert!(matches!(x_fly_time(&p(0.3, 0.2)), Err(ReturnMapError::NotInDomain { .. })));
        assert_eq!(half_return_x(&p(0.3, 0.0)).unwrap().point, p(0.3, 0.0));
        assert!(matches!(x_fly_time(&p(f64::NAN, -1.0)), Err(ReturnMapError::NonFinite)));
    }

    #[test]
    fn lower_closed_form() {
        assert_eq!(half_return_y(&p(-0.5, 0.5), None).unwrap().point, p(0.5, -0.5));
        assert_eq!(half_return_y(&p(-1.0, 0.0), None).unwrap().point, p(1.0, -2.0));
        assert_eq!(half_return_y(&p(0.0, 0.4), None).unwrap().point, p(0.0, 0.4));
    }

    #[test]
    fn perturbed_lower_return_at_a_root() {
        let s = PerturbationSpec::finite(3, 0.1);
        let r = half_return_y(&p(-0.1, 0.1), Some(&s)).unwrap();
        assert!((r.t - 0.2).abs() < 1e-15);
        assert!((r.point - p(0.1, -0.1)).norm() < 1e-15);
    }

    #[test]
    fn r0_is_fixed_for_z0() {
        for x in [0.01, 0.3, 1.0] {
            let r = first_return(&p(x, -x), None).unwrap();
            assert_eq!(r.point, p(x, -x));
            assert_eq!(r.period(), 4.0 * x);
        }
    }

    #[test]
    fn multiplier_classification() {
        assert_eq!(classify_multiplier(-1e-9, -1.1e-9), Stability::Attractor);
        assert_eq!(classify_multiplier(2e-9, 2e-9), Stability::Repeller);
        assert_eq!(classify_multiplier(1e-12, -3e-12), Stability::NonHyperbolic);
        assert_eq!(classify_multiplier(0.0, 0.0), Stability::NonHyperbolic);
    }

    #[test]
    fn bad_intervals() {
        let s = PerturbationSpec::finite(2, 0.1);
        assert!(matches!(find_cycles(&s, (0.5, 0.1), 10), Err(ReturnMapError::InvalidInterval(..))));
        assert!(matches!(find_cycles(&s, (0.0, 0.1), 10), Err(ReturnMapError::InvalidInterval(..))));
        assert!(matches!(find_cycles(&s, (0.1, 0.5), 1), Err(ReturnMapError::InvalidGrid)));
    }
}
