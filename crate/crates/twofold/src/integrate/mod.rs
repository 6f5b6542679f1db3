//! Event-driven integration of a piecewise system: smooth arcs on either
//! side, sliding arcs on Σ, and the concatenation rules between them.
//!
//! All arcs run through one Dormand–Prince driver on the augmented state
//! `(x, y, z, t)`. Smooth arcs use `t' = 1`; sliding arcs are integrated in
//! the normalized time `τ` of `N = (Y.f)X − (X.f)Y` with
//! `q' = σN(q)`, `t' = σ(Y.f − X.f)`, `σ = sign(Y.f − X.f)`, which traces the
//! Filippov field `N/(Y.f − X.f)` in physical time without its blow-up
//! towards the two-fold.

mod dopri;
mod events;
mod output;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use events::{locate_event, locate_grazing, EventError};
pub use output::{fmt_f64, trajectory_csv, write_csv, write_trajectory_csv, CSV_HEADER};

use crate::sliding::{normalized_raw, TOL_DENOMINATOR, TOL_EQUILIBRIUM};
use crate::system::{
    check_finite, lie_derivative, PiecewiseSystem, Point3, Side, SigmaRegion, SystemError, Vec3, VectorField,
    TOL_ON_SIGMA, TOL_TANGENCY,
};
use dopri::State;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcMode {
    #[serde(rename = "upper")]
    UpperFlow,
    #[serde(rename = "lower")]
    LowerFlow,
    #[serde(rename = "sliding")]
    SlidingFlow,
    Stationary,
}

impl ArcMode {
    pub fn label(&self) -> &'static str {
        match self {
            ArcMode::UpperFlow => "upper",
            ArcMode::LowerFlow => "lower",
            ArcMode::SlidingFlow => "sliding",
            ArcMode::Stationary => "stationary",
        }
    }
}

/// Forward continuation from escaping points, where both fields leave Σ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EscapingPolicy {
    #[default]
    #[serde(rename = "upper")]
    FollowUpper,
    #[serde(rename = "lower")]
    FollowLower,
    #[serde(rename = "sliding")]
    FollowSliding,
}

impl EscapingPolicy {
    pub const ALL: [EscapingPolicy; 3] =
        [EscapingPolicy::FollowUpper, EscapingPolicy::FollowLower, EscapingPolicy::FollowSliding];

    pub fn label(&self) -> &'static str {
        match self {
            EscapingPolicy::FollowUpper => "upper",
            EscapingPolicy::FollowLower => "lower",
            EscapingPolicy::FollowSliding => "sliding",
        }
    }
}

impl fmt::Display for EscapingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EscapingPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "upper" => Ok(EscapingPolicy::FollowUpper),
            "lower" => Ok(EscapingPolicy::FollowLower),
            "sliding" => Ok(EscapingPolicy::FollowSliding),
            other => Err(format!("unknown escaping policy {other:?} (expected upper, lower, sliding)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest step in physical time.
    pub max_step: f64,
    /// `|f|` (or `|g|` for exit conditions) accepted at a refined event.
    pub event_tol: f64,
    pub escape_radius: f64,
    pub max_events: usize,
    pub escaping_policy: EscapingPolicy,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.1,
            event_tol: 1e-12,
            escape_radius: 10.0,
            max_events: 100_000,
            escaping_policy: EscapingPolicy::FollowUpper,
        }
    }
}

impl StepperConfig {
    pub fn with_policy(mut self, policy: EscapingPolicy) -> Self {
        self.escaping_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let pos = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("event_tol", self.event_tol),
            ("escape_radius", self.escape_radius),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IntegrateError::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_events == 0 {
            return Err(IntegrateError::InvalidConfig("max_events must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Transversal crossing from one side to the other.
    Crossing,
    SlidingEntry,
    /// A sliding arc reached a tangency line and left Σ.
    SlidingExit,
    /// Both fields leave Σ; the escaping policy chose the continuation.
    Branch,
    /// Tangential touch of Σ without crossing.
    Grazing,
    DenominatorNearZero,
    /// Singular two-fold reached; the orbit stops.
    TwoFold,
    /// The sliding vector fell below the equilibrium tolerance; the orbit
    /// is held at that point.
    Equilibrium,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub point: Point3,
    pub region: SigmaRegion,
    pub kind: EventKind,
    pub from: ArcMode,
    /// Continuation applied; `None` when the trajectory ends here.
    pub to: Option<ArcMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryArc {
    pub mode: ArcMode,
    pub samples: Vec<(f64, Point3)>,
    pub entry_event: Option<usize>,
    pub exit_event: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    TimeLimit,
    Stationary,
    DenominatorNearZero,
    Escaped,
    EventBudget,
    StepUnderflow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub arcs: Vec<TrajectoryArc>,
    pub events: Vec<EventRecord>,
    pub policy: EscapingPolicy,
    pub termination: Termination,
    /// Set when integration stopped before `t_max`.
    pub truncated: bool,
}

impl Trajectory {
    fn new(policy: EscapingPolicy) -> Self {
        Self { arcs: Vec::new(), events: Vec::new(), policy, termination: Termination::TimeLimit, truncated: false }
    }

    pub fn final_state(&self) -> (f64, Point3) {
        self.arcs.last().and_then(|a| a.samples.last().copied()).expect("trajectory has at least one sample")
    }

    pub fn final_point(&self) -> Point3 {
        self.final_state().1
    }

    pub fn samples(&self) -> impl Iterator<Item = (ArcMode, f64, Point3)> + '_ {
        self.arcs.iter().flat_map(|a| a.samples.iter().map(move |&(t, p)| (a.mode, t, p)))
    }

    /// Points of events of `kind` whose continuation was `to`.
    pub fn event_points(&self, kind: EventKind, to: Option<ArcMode>) -> Vec<(f64, Point3)> {
        self.events.iter().filter(|e| e.kind == kind && e.to == to).map(|e| (e.t, e.point)).collect()
    }

    /// Crossings from below into the upper field.
    pub fn upward_crossings(&self) -> Vec<(f64, Point3)> {
        self.event_points(EventKind::Crossing, Some(ArcMode::UpperFlow))
    }
}

#[derive(Debug, Error, Clone)]
pub enum IntegrateError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("invalid stepper configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory left the ball of radius escape_radius")]
    EscapedDomain(Box<Trajectory>),
    #[error("more than max_events Σ events (possible Zeno accumulation)")]
    EventBudgetExceeded(Box<Trajectory>),
    #[error("step size underflow")]
    StepUnderflow(Box<Trajectory>),
    #[error("ambiguous continuation at ({}, {}, {}): {detail}", point.x, point.y, point.z)]
    AmbiguousContinuation { point: Point3, detail: String },
}

impl IntegrateError {
    /// The partial trajectory, for errors that carry one.
    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            IntegrateError::EscapedDomain(t)
            | IntegrateError::EventBudgetExceeded(t)
            | IntegrateError::StepUnderflow(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Push {
    /// The field's orbit moves into its own half-space.
    Leaves,
    /// The field's orbit moves into Σ or across it.
    Enters,
    Degenerate,
}

fn push_state(system: &PiecewiseSystem, side: Side, p: &Point3) -> Result<Push, SystemError> {
    let first = lie_derivative(system, side, p, 1)?;
    let outward = match side {
        Side::Upper => 1.0,
        Side::Lower => -1.0,
    };
    if first.abs() > TOL_TANGENCY {
        return Ok(if outward * first > 0.0 { Push::Leaves } else { Push::Enters });
    }
    let second = lie_derivative(system, side, p, 2)?;
    if second.abs() <= TOL_TANGENCY {
        return Ok(Push::Degenerate);
    }
    Ok(if outward * second > 0.0 { Push::Leaves } else { Push::Enters })
}

/// The unique forward continuation from a Σ point, decided by which fields
/// leave Σ into their own side (folds by their visibility).
pub fn continuation(
    system: &PiecewiseSystem,
    p: &Point3,
    policy: EscapingPolicy,
) -> Result<(SigmaRegion, ArcMode), IntegrateError> {
    let xf = lie_derivative(system, Side::Upper, p, 1)?;
    let yf = lie_derivative(system, Side::Lower, p, 1)?;
    let region = SigmaRegion::from_lie(xf, yf);
    let x = push_state(system, Side::Upper, p)?;
    let y = push_state(system, Side::Lower, p)?;
    let mode = match (x, y) {
        (Push::Leaves, Push::Enters) => ArcMode::UpperFlow,
        (Push::Enters, Push::Leaves) => ArcMode::LowerFlow,
        (Push::Enters, Push::Enters) if region == SigmaRegion::TwoFold => ArcMode::Stationary,
        (Push::Enters, Push::Enters) => ArcMode::SlidingFlow,
        (Push::Leaves, Push::Leaves) => match policy {
            EscapingPolicy::FollowUpper => ArcMode::UpperFlow,
            EscapingPolicy::FollowLower => ArcMode::LowerFlow,
            EscapingPolicy::FollowSliding if region == SigmaRegion::TwoFold => ArcMode::Stationary,
            EscapingPolicy::FollowSliding => ArcMode::SlidingFlow,
        },
        _ => {
            return Err(IntegrateError::AmbiguousContinuation {
                point: *p,
                detail: format!("degenerate tangency (upper {x:?}, lower {y:?})"),
            })
        }
    };
    Ok((region, mode))
}

fn project_to_sigma(system: &PiecewiseSystem, p: &Point3) -> Point3 {
    let g = system.switching.gradient(p);
    let n2 = g.norm_squared();
    if n2 == 0.0 {
        return *p;
    }
    let mut q = p - g * (system.f(p) / n2);
    // one Newton step is exact for planar Σ; a second covers curved ones
    let g2 = system.switching.gradient(&q);
    let n2 = g2.norm_squared();
    if n2 > 0.0 {
        q -= g2 * (system.f(&q) / n2);
    }
    q
}

fn point(y: &State) -> Point3 {
    Point3::new(y[0], y[1], y[2])
}

fn state(p: &Point3, t: f64) -> State {
    [p.x, p.y, p.z, t]
}

enum ArcEnd {
    Event(usize, State),
    Grazing(State),
    Escaped,
    Underflow,
}

type EventFn<'a> = Box<dyn Fn(&State) -> f64 + 'a>;

/// Integrate until one of `events` turns negative (each is assumed
/// non-negative at the start), recording accepted steps.
fn run_arc<F: Fn(&State) -> State>(
    rhs: &F,
    y0: State,
    events: &[EventFn<'_>],
    graze: Option<usize>,
    cfg: &StepperConfig,
    project: Option<&dyn Fn(&mut State)>,
    samples: &mut Vec<(f64, Point3)>,
) -> ArcEnd {
    const SUB: usize = 8;
    let mut y = y0;
    let mut k1 = rhs(&y);
    let mut h: f64 = 0.01;
    loop {
        let rate = k1[3].abs().max(1e-300);
        h = h.min(cfg.max_step / rate);
        let st = dopri::step(rhs, &y, &k1, h, cfg.rel_tol, cfg.abs_tol);
        if !st.err.is_finite() || st.err > 1.0 {
            h *= if st.err.is_finite() { dopri::factor(st.err).min(1.0) } else { 0.2 };
            if h < 1e-14 {
                return ArcEnd::Underflow;
            }
            continue;
        }

        // earliest sub-interval where an event function turns negative
        let mut values = [[0.0f64; SUB + 1]; 8];
        let mut first_neg = [None::<usize>; 8];
        for (e, g) in events.iter().enumerate() {
            values[e][0] = g(&y);
            for i in 1..=SUB {
                let v = g(&st.at(i as f64 / SUB as f64));
                values[e][i] = v;
                if v < 0.0 {
                    first_neg[e] = Some(i);
                    break;
                }
            }
        }
        if let Some(fi) = first_neg[..events.len()].iter().flatten().min().copied() {
            let width = 1e-13 / h;
            let lo = (fi - 1) as f64 / SUB as f64;
            let hi = fi as f64 / SUB as f64;
            let mut best: Option<(usize, f64)> = None;
            for (e, g) in events.iter().enumerate() {
                if first_neg[e] != Some(fi) {
                    continue;
                }
                let th = events::bisect_transition(|th| g(&st.at(th)) >= 0.0, lo, hi, width);
                if best.is_none_or(|(_, b)| th < b) {
                    best = Some((e, th));
                }
            }
            let (e, mut th) = best.expect("an event was bracketed");
            let g = &events[e];
            let fresh = |th: f64| -> State {
                if th <= 0.0 {
                    y
                } else {
                    dopri::step(rhs, &y, &k1, th * h, cfg.rel_tol, cfg.abs_tol).y1
                }
            };
            let mut ye = fresh(th);
            for _ in 0..4 {
                let gv = g(&ye);
                if gv.abs() <= cfg.event_tol {
                    break;
                }
                let d = 1e-7;
                let dg = (g(&st.at((th + d).min(1.0))) - g(&st.at((th - d).max(0.0)))) / ((th + d).min(1.0) - (th - d).max(0.0));
                if dg == 0.0 || !dg.is_finite() {
                    break;
                }
                th = (th - gv / dg).clamp(0.0, 1.0);
                ye = fresh(th);
            }
            samples.push((ye[3], point(&ye)));
            return ArcEnd::Event(e, ye);
        }

        if let Some(gi) = graze {
            // interior near-zero minimum of the crossing function
            let v = &values[gi];
            for i in 1..SUB {
                if v[i] <= v[i - 1] && v[i] <= v[i + 1] && v[i] < 1e3 * cfg.event_tol {
                    let g = &events[gi];
                    let lo = (i - 1) as f64 / SUB as f64;
                    let hi = (i + 1) as f64 / SUB as f64;
                    if let Some(th) = locate_grazing(|th| g(&st.at(th)), lo, hi, cfg.event_tol, 1e-10) {
                        let ye = dopri::step(rhs, &y, &k1, th * h, cfg.rel_tol, cfg.abs_tol).y1;
                        samples.push((ye[3], point(&ye)));
                        return ArcEnd::Grazing(ye);
                    }
                }
            }
        }

        y = st.y1;
        k1 = st.k7;
        if let Some(pr) = project {
            let before = y;
            pr(&mut y);
            if y != before {
                k1 = rhs(&y);
            }
        }
        samples.push((y[3], point(&y)));
        if point(&y).norm() > cfg.escape_radius {
            return ArcEnd::Escaped;
        }
        h *= dopri::factor(st.err);
    }
}

struct Run<'a> {
    system: &'a PiecewiseSystem,
    cfg: &'a StepperConfig,
    t_max: f64,
    traj: Trajectory,
    hits: usize,
}

impl Run<'_> {
    fn push_arc(&mut self, mode: ArcMode, samples: Vec<(f64, Point3)>, entry: Option<usize>, exit: Option<usize>) {
        self.traj.arcs.push(TrajectoryArc { mode, samples, entry_event: entry, exit_event: exit });
    }

    fn record(&mut self, ev: EventRecord) -> Result<usize, IntegrateError> {
        self.traj.events.push(ev);
        self.hits += 1;
        if self.hits > self.cfg.max_events {
            self.traj.termination = Termination::EventBudget;
            self.traj.truncated = true;
            return Err(IntegrateError::EventBudgetExceeded(Box::new(self.traj.clone())));
        }
        Ok(self.traj.events.len() - 1)
    }

    fn fail(&mut self, term: Termination) -> IntegrateError {
        self.traj.termination = term;
        self.traj.truncated = true;
        let t = Box::new(self.traj.clone());
        match term {
            Termination::Escaped => IntegrateError::EscapedDomain(t),
            _ => IntegrateError::StepUnderflow(t),
        }
    }
}

fn event_kind(from: ArcMode, to: ArcMode, region: SigmaRegion) -> EventKind {
    match (from, to) {
        (_, ArcMode::Stationary) => EventKind::TwoFold,
        (ArcMode::SlidingFlow, _) => EventKind::SlidingExit,
        (_, ArcMode::SlidingFlow) => EventKind::SlidingEntry,
        _ if region == SigmaRegion::Escaping => EventKind::Branch,
        (ArcMode::UpperFlow, ArcMode::UpperFlow) | (ArcMode::LowerFlow, ArcMode::LowerFlow) => EventKind::Grazing,
        _ => EventKind::Crossing,
    }
}

/// Integrate `system` from `p0` over `[0, t_max]`.
pub fn advance(system: &PiecewiseSystem, p0: &Point3, t_max: f64, cfg: &StepperConfig) -> Result<Trajectory, IntegrateError> {
    check_finite(p0)?;
    cfg.validate()?;
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(IntegrateError::InvalidConfig(format!("t_max must be positive and finite, got {t_max}")));
    }
    let mut run = Run { system, cfg, t_max, traj: Trajectory::new(cfg.escaping_policy), hits: 0 };

    let f0 = system.f(p0);
    let (mut mode, mut p) = if f0 > TOL_ON_SIGMA {
        (ArcMode::UpperFlow, *p0)
    } else if f0 < -TOL_ON_SIGMA {
        (ArcMode::LowerFlow, *p0)
    } else {
        let (_, m) = continuation(system, p0, cfg.escaping_policy)?;
        let start = if matches!(m, ArcMode::SlidingFlow | ArcMode::Stationary) { project_to_sigma(system, p0) } else { *p0 };
        (m, start)
    };
    let mut t = 0.0;
    let mut entry: Option<usize> = None;

    loop {
        match mode {
            ArcMode::Stationary => {
                run.push_arc(mode, vec![(t, p), (t_max.max(t), p)], entry, None);
                run.traj.termination = Termination::Stationary;
                break;
            }
            ArcMode::UpperFlow | ArcMode::LowerFlow => {
                let side = if mode == ArcMode::UpperFlow { Side::Upper } else { Side::Lower };
                let field = system.field(side);
                let sign = if side == Side::Upper { 1.0 } else { -1.0 };
                let mut samples = vec![(t, p)];
                let mut start = state(&p, t);
                if system.f(&p).abs() <= (10.0 * cfg.event_tol).max(TOL_ON_SIGMA) {
                    let v = field.eval(&p);
                    let n = v.norm();
                    if n > 0.0 {
                        let dt = 10.0 * cfg.event_tol / n;
                        let q = p + v * dt;
                        start = state(&q, t + dt);
                        samples.push((t + dt, q));
                    }
                }
                let rhs = |y: &State| {
                    let v = field.eval(&point(y));
                    [v.x, v.y, v.z, 1.0]
                };
                let events: Vec<EventFn<'_>> = vec![
                    Box::new(move |y: &State| sign * system.f(&point(y))),
                    Box::new(move |y: &State| t_max - y[3]),
                ];
                let end = run_arc(&rhs, start, &events, Some(0), cfg, None, &mut samples);
                match end {
                    ArcEnd::Event(1, _) => {
                        run.push_arc(mode, samples, entry, None);
                        break;
                    }
                    ArcEnd::Escaped => {
                        run.push_arc(mode, samples, entry, None);
                        return Err(run.fail(Termination::Escaped));
                    }
                    ArcEnd::Underflow => {
                        run.push_arc(mode, samples, entry, None);
                        return Err(run.fail(Termination::StepUnderflow));
                    }
                    ArcEnd::Grazing(ye) => {
                        let pe = point(&ye);
                        let ps = project_to_sigma(system, &pe);
                        let region = SigmaRegion::from_lie(
                            lie_derivative(system, Side::Upper, &ps, 1)?,
                            lie_derivative(system, Side::Lower, &ps, 1)?,
                        );
                        let idx = run.record(EventRecord {
                            t: ye[3],
                            point: pe,
                            region,
                            kind: EventKind::Grazing,
                            from: mode,
                            to: Some(mode),
                        })?;
                        run.push_arc(mode, samples, entry, Some(idx));
                        entry = Some(idx);
                        t = ye[3];
                        p = pe;
                    }
                    ArcEnd::Event(_, ye) => {
                        let pe = point(&ye);
                        let ps = project_to_sigma(system, &pe);
                        let (region, next) = continuation(system, &ps, cfg.escaping_policy)?;
                        let idx = run.record(EventRecord {
                            t: ye[3],
                            point: pe,
                            region,
                            kind: event_kind(mode, next, region),
                            from: mode,
                            to: Some(next),
                        })?;
                        run.push_arc(mode, samples, entry, Some(idx));
                        entry = Some(idx);
                        t = ye[3];
                        p = if matches!(next, ArcMode::SlidingFlow | ArcMode::Stationary) { ps } else { pe };
                        mode = next;
                    }
                }
            }
            ArcMode::SlidingFlow => {
                let den = |q: &Point3| -> f64 {
                    let g = system.switching.gradient(q);
                    g.dot(&system.lower.eval(q)) - g.dot(&system.upper.eval(q))
                };
                let d0 = den(&p);
                let mut samples = vec![(t, p)];
                if d0.abs() <= TOL_DENOMINATOR {
                    match denominator_stop(&mut run, &p, t, mode, entry, samples)? {
                        Some(next) => {
                            mode = next;
                            entry = Some(run.traj.events.len() - 1);
                            continue;
                        }
                        None => break,
                    }
                }
                let sigma = d0.signum();
                let rhs = |y: &State| -> State {
                    let q = point(y);
                    match normalized_raw(system, &q) {
                        Ok((n, xf, yf)) => [sigma * n.x, sigma * n.y, sigma * n.z, sigma * (yf - xf)],
                        Err(_) => [f64::NAN; 4],
                    }
                };
                let gx = move |y: &State| {
                    let q = point(y);
                    -sigma * system.switching.gradient(&q).dot(&system.upper.eval(&q))
                };
                let gy = move |y: &State| {
                    let q = point(y);
                    sigma * system.switching.gradient(&q).dot(&system.lower.eval(&q))
                };
                let events: Vec<EventFn<'_>> = vec![
                    Box::new(gx),
                    Box::new(gy),
                    Box::new(move |y: &State| sigma * den(&point(y)) - TOL_DENOMINATOR),
                    Box::new(move |y: &State| t_max - y[3]),
                    // normalized sliding vector vanishing: the saddle-node at a
                    // two-fold is approached only algebraically in τ
                    Box::new(move |y: &State| match normalized_raw(system, &point(y)) {
                        Ok((n, _, _)) => n.norm() - TOL_EQUILIBRIUM,
                        Err(_) => -1.0,
                    }),
                ];
                let proj = |y: &mut State| {
                    let q = point(y);
                    if system.f(&q).abs() > cfg.event_tol {
                        let r = project_to_sigma(system, &q);
                        y[0] = r.x;
                        y[1] = r.y;
                        y[2] = r.z;
                    }
                };
                let end = run_arc(&rhs, state(&p, t), &events, None, cfg, Some(&proj), &mut samples);
                match end {
                    ArcEnd::Event(3, _) => {
                        run.push_arc(mode, samples, entry, None);
                        break;
                    }
                    ArcEnd::Escaped => {
                        run.push_arc(mode, samples, entry, None);
                        return Err(run.fail(Termination::Escaped));
                    }
                    ArcEnd::Underflow | ArcEnd::Grazing(_) => {
                        run.push_arc(mode, samples, entry, None);
                        return Err(run.fail(Termination::StepUnderflow));
                    }
                    ArcEnd::Event(4, ye) => {
                        let pe = point(&ye);
                        let (xf, yf) = (
                            lie_derivative(system, Side::Upper, &pe, 1)?,
                            lie_derivative(system, Side::Lower, &pe, 1)?,
                        );
                        let idx = run.record(EventRecord {
                            t: ye[3],
                            point: pe,
                            region: SigmaRegion::from_lie(xf, yf),
                            kind: EventKind::Equilibrium,
                            from: mode,
                            to: Some(ArcMode::Stationary),
                        })?;
                        run.push_arc(mode, samples, entry, Some(idx));
                        entry = Some(idx);
                        t = ye[3];
                        p = pe;
                        mode = ArcMode::Stationary;
                    }
                    ArcEnd::Event(2, ye) => {
                        let pe = point(&ye);
                        match denominator_stop(&mut run, &pe, ye[3], mode, entry, samples)? {
                            Some(next) => {
                                mode = next;
                                p = pe;
                                t = ye[3];
                                entry = Some(run.traj.events.len() - 1);
                            }
                            None => break,
                        }
                    }
                    ArcEnd::Event(_, ye) => {
                        let pe = project_to_sigma(system, &point(&ye));
                        let (region, next) = continuation(system, &pe, cfg.escaping_policy)?;
                        let idx = run.record(EventRecord {
                            t: ye[3],
                            point: pe,
                            region,
                            kind: event_kind(mode, next, region),
                            from: mode,
                            to: Some(next),
                        })?;
                        run.push_arc(mode, samples, entry, Some(idx));
                        entry = Some(idx);
                        t = ye[3];
                        p = pe;
                        mode = next;
                    }
                }
            }
        }
    }
    Ok(run.traj)
}

/// Sliding reached `|Y.f − X.f| ≤ tol`: stop at a singular two-fold,
/// otherwise end the trajectory there.
fn denominator_stop(
    run: &mut Run<'_>,
    p: &Point3,
    t: f64,
    mode: ArcMode,
    entry: Option<usize>,
    samples: Vec<(f64, Point3)>,
) -> Result<Option<ArcMode>, IntegrateError> {
    let system = run.system;
    let xf = lie_derivative(system, Side::Upper, p, 1)?;
    let yf = lie_derivative(system, Side::Lower, p, 1)?;
    let region = SigmaRegion::from_lie(xf, yf);
    let singular = region == SigmaRegion::TwoFold
        && push_state(system, Side::Upper, p)? == Push::Enters
        && push_state(system, Side::Lower, p)? == Push::Enters;
    let (kind, to) = if singular {
        (EventKind::TwoFold, Some(ArcMode::Stationary))
    } else {
        (EventKind::DenominatorNearZero, None)
    };
    let idx = run.record(EventRecord { t, point: *p, region, kind, from: mode, to })?;
    run.push_arc(mode, samples, entry, Some(idx));
    if to.is_none() {
        run.traj.termination = Termination::DenominatorNearZero;
        run.traj.truncated = t < run.t_max;
    }
    Ok(to)
}

/// A field with the opposite sign, for time-reversed integration.
pub struct NegatedField(pub Arc<dyn VectorField>);

impl VectorField for NegatedField {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn eval(&self, p: &Point3) -> Vec3 {
        -self.0.eval(p)
    }
    fn jacobian(&self, p: &Point3) -> Option<Matrix3<f64>> {
        self.0.jacobian(p).map(|j| -j)
    }
}

impl PiecewiseSystem {
    /// `(−X, −Y)`: forward orbits of the result are backward orbits of `self`.
    pub fn reversed(&self) -> PiecewiseSystem {
        PiecewiseSystem::new(
            Arc::new(NegatedField(self.upper.clone())),
            Arc::new(NegatedField(self.lower.clone())),
            self.switching.clone(),
        )
    }
}
