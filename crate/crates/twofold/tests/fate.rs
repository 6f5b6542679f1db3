use twofold::fate::{classify_point, predicted_fate, Fate, FateThresholds, PartitionCell};
use twofold::integrate::{EscapingPolicy, StepperConfig};
use twofold::models::{model_z0, model_z_eps, ModelSpec, PerturbationSpec};

fn z0_report(x: f64, y: f64) -> twofold::fate::FateReport {
    classify_point(&model_z0(), x, y, &StepperConfig::default(), &[], &FateThresholds::default())
}

#[test]
fn sliding_point_reaches_the_origin() {
    let r = z0_report(0.1, 0.1);
    assert_eq!(r.cell, PartitionCell::Sliding);
    assert_eq!(r.predicted, Some(Fate::ToOrigin));
    assert_eq!(r.observed, Fate::ToOrigin);
    assert_eq!(r.agree, Some(true));
}

#[test]
fn crossing_point_below_r0_escapes() {
    let r = z0_report(0.1, -0.3);
    assert_eq!(r.cell, PartitionCell::CPlusE);
    assert_eq!(r.predicted, Some(Fate::Escapes));
    assert_eq!(r.observed, Fate::Escapes, "observed {:?}", r.observed);
}

#[test]
fn r0_point_is_periodic() {
    let r = z0_report(0.2, -0.2);
    assert_eq!(r.cell, PartitionCell::R0Plus);
    assert_eq!(r.predicted, Some(Fate::Periodic));
    assert_eq!(r.observed, Fate::Periodic);
}

#[test]
fn origin_is_stationary() {
    let r = z0_report(0.0, 0.0);
    assert_eq!(r.cell, PartitionCell::Origin);
    assert_eq!(r.predicted, Some(Fate::Stationary));
    assert_eq!(r.observed, Fate::Stationary);
}

#[test]
fn crossing_point_above_r0_slides_home() {
    // Σ^{c+}_s well away from r₀: enters Σ^s after a few turns
    let r = z0_report(0.3, -0.1);
    assert_eq!(r.cell, PartitionCell::CPlusS);
    assert_eq!(r.observed, Fate::ToOrigin);
    assert!(r.crossings_before_sliding.is_some());
}

#[test]
fn cycles_lock_trajectories() {
    let spec = PerturbationSpec::finite(2, 0.1);
    let m = model_z_eps(spec);
    let cycles = twofold::returnmap::find_cycles(&spec, (0.01, 0.5), 2000).unwrap();
    // start on the attracting cycle at x₀ = 0.1
    let r = classify_point(&m, 0.1, -0.1, &StepperConfig::default(), &cycles, &FateThresholds::default());
    match r.observed {
        Fate::ToCycle { x0 } => assert!((x0 - 0.1).abs() < 1e-9),
        o => panic!("{o:?}"),
    }
    assert_eq!(r.predicted, None);
}

#[test]
fn predictions_per_policy() {
    let z0 = ModelSpec::Z0;
    let c = PartitionCell::Escaping;
    assert_eq!(predicted_fate(&z0, c, -0.1, -0.2, EscapingPolicy::FollowUpper), Some(Fate::Escapes));
    assert_eq!(predicted_fate(&z0, c, -0.1, -0.1, EscapingPolicy::FollowSliding), Some(Fate::ToOrigin));
    assert_eq!(predicted_fate(&z0, c, -0.1, -0.2, EscapingPolicy::FollowSliding), Some(Fate::Escapes));
    let f0 = ModelSpec::ZEpsFinite { k: 0, epsilon: 0.1 };
    assert_eq!(predicted_fate(&f0, PartitionCell::CMinusE, -0.2, 0.1, EscapingPolicy::FollowUpper), Some(Fate::ToOrigin));
    let f2 = ModelSpec::ZEpsFinite { k: 2, epsilon: 0.1 };
    assert_eq!(predicted_fate(&f2, PartitionCell::Sliding, 0.1, 0.1, EscapingPolicy::FollowUpper), None);
}
