//! Partition of Σ around the two-fold and asymptotic fates of orbits
//! started there, predicted from the cell and observed by simulation.

use serde::{Deserialize, Serialize};

use crate::integrate::{advance, ArcMode, EscapingPolicy, EventKind, IntegrateError, StepperConfig, Termination, Trajectory};
use crate::models::{Model, ModelSpec, Rho};
use crate::returnmap::LimitCycle;
use crate::system::Point3;

/// Membership tolerance for the partition lines `x = 0`, `y = 0`, `x + y = 0`.
pub const LINE_TOL: f64 = 1e-12;

/// Cells of Σ for `Z₀` (`X.f = −y`, `Y.f = x`), split by the sign of
/// `x + y` where that decides the fate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionCell {
    /// Crossing upwards (`x > 0 > y`) with `x + y > 0`.
    CPlusS,
    /// Crossing upwards with `x + y < 0`.
    CPlusE,
    Escaping,
    /// Crossing downwards (`x < 0 < y`) with `x + y < 0`.
    CMinusE,
    /// Crossing downwards with `x + y > 0`.
    CMinusS,
    Sliding,
    R0Plus,
    R0Minus,
    SyPlus,
    SyMinus,
    SxPlus,
    SxMinus,
    Origin,
}

impl PartitionCell {
    pub const ALL: [PartitionCell; 13] = [
        PartitionCell::CPlusS,
        PartitionCell::CPlusE,
        PartitionCell::Escaping,
        PartitionCell::CMinusE,
        PartitionCell::CMinusS,
        PartitionCell::Sliding,
        PartitionCell::R0Plus,
        PartitionCell::R0Minus,
        PartitionCell::SyPlus,
        PartitionCell::SyMinus,
        PartitionCell::SxPlus,
        PartitionCell::SxMinus,
        PartitionCell::Origin,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PartitionCell::CPlusS => "c_plus_s",
            PartitionCell::CPlusE => "c_plus_e",
            PartitionCell::Escaping => "escaping",
            PartitionCell::CMinusE => "c_minus_e",
            PartitionCell::CMinusS => "c_minus_s",
            PartitionCell::Sliding => "sliding",
            PartitionCell::R0Plus => "r0_plus",
            PartitionCell::R0Minus => "r0_minus",
            PartitionCell::SyPlus => "sy_plus",
            PartitionCell::SyMinus => "sy_minus",
            PartitionCell::SxPlus => "sx_plus",
            PartitionCell::SxMinus => "sx_minus",
            PartitionCell::Origin => "origin",
        }
    }

    /// Cell of the Σ point `(x, y)`; lines take precedence over open cells.
    pub fn of(x: f64, y: f64) -> PartitionCell {
        let on = |v: f64| v.abs() <= LINE_TOL;
        let s = x + y;
        match (on(x), on(y)) {
            (true, true) => PartitionCell::Origin,
            (true, false) => {
                if y > 0.0 {
                    PartitionCell::SyPlus
                } else {
                    PartitionCell::SyMinus
                }
            }
            (false, true) => {
                if x > 0.0 {
                    PartitionCell::SxPlus
                } else {
                    PartitionCell::SxMinus
                }
            }
            (false, false) if on(s) => {
                if x > 0.0 {
                    PartitionCell::R0Plus
                } else {
                    PartitionCell::R0Minus
                }
            }
            _ => match (x > 0.0, y > 0.0) {
                (true, true) => PartitionCell::Sliding,
                (false, false) => PartitionCell::Escaping,
                (true, false) => {
                    if s > 0.0 {
                        PartitionCell::CPlusS
                    } else {
                        PartitionCell::CPlusE
                    }
                }
                (false, true) => {
                    if s > 0.0 {
                        PartitionCell::CMinusS
                    } else {
                        PartitionCell::CMinusE
                    }
                }
            },
        }
    }
}

/// Distance from `(x, y)` to the nearest partition line.
pub fn boundary_distance(x: f64, y: f64) -> f64 {
    x.abs().min(y.abs()).min((x + y).abs() * std::f64::consts::FRAC_1_SQRT_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fate", rename_all = "snake_case")]
pub enum Fate {
    Periodic,
    ToOrigin,
    ToCycle { x0: f64 },
    Escapes,
    Stationary,
    Unresolved,
}

impl Fate {
    pub fn label(&self) -> &'static str {
        match self {
            Fate::Periodic => "periodic",
            Fate::ToOrigin => "to_origin",
            Fate::ToCycle { .. } => "to_cycle",
            Fate::Escapes => "escapes",
            Fate::Stationary => "stationary",
            Fate::Unresolved => "unresolved",
        }
    }

    /// Same kind of fate (cycle locations are not compared).
    pub fn same_kind(&self, other: &Fate) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

/// Fate of the orbit through a Σ point predicted from its cell. Known for
/// `Z₀` and for the cycle-free family `Finite(0)`; `None` otherwise.
pub fn predicted_fate(spec: &ModelSpec, cell: PartitionCell, x: f64, y: f64, policy: EscapingPolicy) -> Option<Fate> {
    use PartitionCell::*;
    if cell == Origin {
        return Some(Fate::Stationary);
    }
    match spec {
        ModelSpec::Z0 => {}
        ModelSpec::ZEpsFinite { k: 0, epsilon } if *epsilon > 0.0 => return Some(Fate::ToOrigin),
        s if s.perturbation().is_some_and(|p| p.is_trivial()) => {}
        _ => return None,
    }
    Some(match cell {
        Origin => Fate::Stationary,
        R0Plus | R0Minus => Fate::Periodic,
        Sliding | SxPlus | SyPlus | CPlusS | CMinusS => Fate::ToOrigin,
        CPlusE | SyMinus | CMinusE | SxMinus => Fate::Escapes,
        Escaping => match policy {
            EscapingPolicy::FollowUpper | EscapingPolicy::FollowLower => Fate::Escapes,
            EscapingPolicy::FollowSliding => {
                if (x - y).abs() <= LINE_TOL {
                    Fate::ToOrigin
                } else {
                    Fate::Escapes
                }
            }
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FateThresholds {
    pub t_max: f64,
    /// Radius of the ball around the origin that counts as arrival...
    pub origin_radius: f64,
    /// ...once the orbit has stayed inside for this long.
    pub origin_dwell: f64,
    /// Consecutive upward crossings this close mean a closed orbit.
    pub periodic_tol: f64,
    /// Crossings this close to `(x₀, −x₀)` lock onto that cycle.
    pub cycle_lock: f64,
    /// Half-width of the band around partition lines excluded from
    /// agreement checks.
    pub boundary_band: f64,
}

impl Default for FateThresholds {
    fn default() -> Self {
        Self {
            t_max: 200.0,
            origin_radius: 1e-3,
            origin_dwell: 5.0,
            periodic_tol: 1e-6,
            cycle_lock: 1e-5,
            boundary_band: 1e-2,
        }
    }
}

/// Fate read off a finished (or escaped) simulation.
pub fn observe_fate(
    outcome: &Result<Trajectory, IntegrateError>,
    cycles: &[LimitCycle],
    th: &FateThresholds,
) -> Fate {
    let tr = match outcome {
        Ok(t) => t,
        Err(IntegrateError::EscapedDomain(_)) => return Fate::Escapes,
        Err(_) => return Fate::Unresolved,
    };
    let (t_end, p_end) = tr.final_state();
    if tr.arcs.len() == 1 && tr.arcs[0].mode == ArcMode::Stationary {
        return Fate::Stationary;
    }
    if tr.termination == Termination::Stationary && p_end.norm() < th.origin_radius {
        return Fate::ToOrigin;
    }
    // time since the orbit last entered the origin ball for good
    let mut inside_since = None;
    for (_, t, p) in tr.samples() {
        if p.norm() < th.origin_radius {
            inside_since.get_or_insert(t);
        } else {
            inside_since = None;
        }
    }
    if inside_since.is_some_and(|t0| t_end - t0 >= th.origin_dwell) {
        return Fate::ToOrigin;
    }
    let ups = tr.upward_crossings();
    if let Some((_, last)) = ups.last() {
        if let Some(c) = cycles.iter().find(|c| (last - Point3::new(c.x0, -c.x0, 0.0)).norm() <= th.cycle_lock) {
            return Fate::ToCycle { x0: c.x0 };
        }
    }
    if ups.len() >= 2 {
        let (a, b) = (ups[ups.len() - 2].1, ups[ups.len() - 1].1);
        if (a - b).norm() < th.periodic_tol {
            return Fate::Periodic;
        }
    }
    Fate::Unresolved
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FateReport {
    pub x: f64,
    pub y: f64,
    pub cell: PartitionCell,
    pub predicted: Option<Fate>,
    pub observed: Fate,
    /// `None` when no prediction exists or the observation is unresolved.
    pub agree: Option<bool>,
    /// Within the boundary band of a partition line.
    pub near_boundary: bool,
    /// Upward crossings of Σ before the first sliding arc, when there is one.
    pub crossings_before_sliding: Option<usize>,
    pub events: usize,
}

/// Simulate from `(x, y, 0)` and compare against the cell's prediction.
pub fn classify_point(
    model: &Model,
    x: f64,
    y: f64,
    cfg: &StepperConfig,
    cycles: &[LimitCycle],
    th: &FateThresholds,
) -> FateReport {
    let cell = PartitionCell::of(x, y);
    let predicted = predicted_fate(&model.spec, cell, x, y, cfg.escaping_policy);
    let outcome = advance(&model.system, &Point3::new(x, y, 0.0), th.t_max, cfg);
    let observed = observe_fate(&outcome, cycles, th);
    let tr = match &outcome {
        Ok(t) => Some(t),
        Err(e) => e.trajectory(),
    };
    let crossings_before_sliding = tr.and_then(|tr| {
        let first = tr.events.iter().position(|e| e.to == Some(ArcMode::SlidingFlow))?;
        Some(
            tr.events[..first]
                .iter()
                .filter(|e| e.kind == EventKind::Crossing && e.to == Some(ArcMode::UpperFlow))
                .count(),
        )
    });
    let agree = match (&predicted, observed) {
        (_, Fate::Unresolved) | (None, _) => None,
        (Some(p), o) => Some(p.same_kind(&o)),
    };
    FateReport {
        x,
        y,
        cell,
        predicted,
        observed,
        agree,
        near_boundary: boundary_distance(x, y) < th.boundary_band,
        crossings_before_sliding,
        events: tr.map_or(0, |t| t.events.len()),
    }
}

/// Fraction of resolved, off-boundary points whose fates agree, with the
/// count it was computed over. `None` when nothing qualifies.
pub fn agreement_rate(reports: &[FateReport]) -> Option<(f64, usize)> {
    let eligible: Vec<bool> = reports.iter().filter(|r| !r.near_boundary).filter_map(|r| r.agree).collect();
    if eligible.is_empty() {
        return None;
    }
    let ok = eligible.iter().filter(|&&a| a).count();
    Some((ok as f64 / eligible.len() as f64, eligible.len()))
}

/// Whether `spec` is a family the predictions cover.
pub fn has_predictions(spec: &ModelSpec) -> bool {
    match spec.perturbation() {
        None => true,
        Some(p) => p.is_trivial() || (p.rho == Rho::Finite(0) && p.epsilon > 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::model_z0;

    #[test]
    fn cells_cover_the_plane() {
        use PartitionCell::*;
        let cases = [
            ((0.2, -0.1), CPlusS),
            ((0.1, -0.3), CPlusE),
            ((-0.1, -0.1), Escaping),
            ((-0.3, 0.1), CMinusE),
            ((-0.1, 0.3), CMinusS),
            ((0.1, 0.1), Sliding),
            ((0.2, -0.2), R0Plus),
            ((-0.2, 0.2), R0Minus),
            ((0.0, 0.2), SyPlus),
            ((0.0, -0.2), SyMinus),
            ((0.2, 0.0), SxPlus),
            ((-0.2, 0.0), SxMinus),
            ((0.0, 0.0), Origin),
        ];
        for ((x, y), c) in cases {
            assert_eq!(PartitionCell::of(x, y), c, "({x}, {y})");
        }
    }

    #[test]
    fn predictions() {
        let z = ModelSpec::Z0;
        let pol = EscapingPolicy::FollowUpper;
        assert_eq!(predicted_fate(&z, PartitionCell::Origin, 0.0, 0.0, pol), Some(Fate::Stationary));
        assert_eq!(predicted_fate(&z, PartitionCell::Sliding, 0.1, 0.1, pol), Some(Fate::ToOrigin));
        let f3 = ModelSpec::ZEpsFinite { k: 3, epsilon: 0.1 };
        assert_eq!(predicted_fate(&f3, PartitionCell::Sliding, 0.1, 0.1, pol), None);
        let f0 = ModelSpec::ZEpsFinite { k: 0, epsilon: 0.1 };
        assert_eq!(predicted_fate(&f0, PartitionCell::CPlusE, 0.1, -0.3, pol), Some(Fate::ToOrigin));
    }

    #[test]
    fn origin_is_stationary() {
        let r = classify_point(&model_z0(), 0.0, 0.0, &StepperConfig::default(), &[], &FateThresholds::default());
        assert_eq!(r.observed, Fate::Stationary);
        assert_eq!(r.agree, Some(true));
    }
}
