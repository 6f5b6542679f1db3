use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{OutputFormat, RunConfig};
use super::{CliError, Command, ReturnMapAction};
use crate::fate::{agreement_rate, classify_point, has_predictions, FateReport};
use crate::integrate::{advance, fmt_f64, write_trajectory_csv, IntegrateError, Termination, Trajectory};
use crate::returnmap::{cycle_report, iterate_return, linearized_return, CycleReport, SigmaPoint, Stability};
use crate::sliding::{normalized_raw, TOL_DENOMINATOR};
use crate::system::{classify_sigma_point, Point3};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub initial: [f64; 3],
    pub file: Option<String>,
    /// `ok`, `escaped` or `failed`.
    pub status: String,
    pub termination: Option<Termination>,
    pub events: usize,
    pub event_counts: BTreeMap<String, usize>,
    /// `[t, x, y, z]` of the last sample.
    pub final_state: Option<[f64; 4]>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub files: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub failures: usize,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA,
            command: command.to_string(),
            config: cfg.clone(),
            files: vec![],
            entries: vec![],
            failures: 0,
            summary: BTreeMap::new(),
        }
    }

    fn note<V: Serialize>(&mut self, key: &str, v: V) {
        self.summary.insert(key.to_string(), serde_json::to_value(v).expect("summary value serializes"));
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Run(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let run = || -> csv::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    };
    run().map_err(|e| CliError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })
}

/// Write a table as CSV or as a JSON array of objects keyed by the header.
fn write_table(dir: &Path, stem: &str, fmt: OutputFormat, header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let name = format!("{stem}.{fmt}");
    let path = dir.join(&name);
    match fmt {
        OutputFormat::Csv => write_rows(&path, header, rows)?,
        OutputFormat::Json => {
            let objs: Vec<BTreeMap<&str, &str>> =
                rows.iter().map(|r| header.iter().copied().zip(r.iter().map(String::as_str)).collect()).collect();
            write_json(&path, &objs)?;
        }
    }
    Ok(name)
}

fn finish(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    write_json(&dir.join("manifest.json"), manifest)
}

fn prepare(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    Ok(cfg.output_dir.clone())
}

/// Returns whether some items failed.
pub(super) fn dispatch(cmd: &Command, cfg: &RunConfig, quiet: bool) -> Result<bool, CliError> {
    match cmd {
        Command::Simulate => simulate(cfg, quiet),
        Command::ClassifyFate => classify_fate(cfg, quiet),
        Command::Cycles => cycles(cfg, quiet),
        Command::SlidingPortrait => sliding_portrait(cfg, quiet),
        Command::ReturnMap { action: ReturnMapAction::Iterate } => return_iterate(cfg, quiet),
        Command::ReturnMap { action: ReturnMapAction::Linearize } => return_linearize(cfg, quiet),
    }
}

fn entry(index: usize, p: &Point3, outcome: &Result<Trajectory, IntegrateError>) -> ManifestEntry {
    let tr = match outcome {
        Ok(t) => Some(t),
        Err(e) => e.trajectory(),
    };
    let mut counts = BTreeMap::new();
    if let Some(t) = tr {
        for e in &t.events {
            let key = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    let (status, error) = match outcome {
        Ok(_) => ("ok", None),
        Err(IntegrateError::EscapedDomain(_)) => ("escaped", None),
        Err(e) => ("failed", Some(e.to_string())),
    };
    ManifestEntry {
        index,
        initial: [p.x, p.y, p.z],
        file: None,
        status: status.to_string(),
        termination: tr.map(|t| t.termination),
        events: tr.map_or(0, |t| t.events.len()),
        event_counts: counts,
        final_state: tr.map(|t| {
            let (s, q) = t.final_state();
            [s, q.x, q.y, q.z]
        }),
        error,
    }
}

fn simulate(cfg: &RunConfig, quiet: bool) -> Result<bool, CliError> {
    let dir = prepare(cfg)?;
    let model = cfg.model.build();
    let points = cfg.initial_conditions.points();
    let outcomes: Vec<_> = points.par_iter().map(|p| advance(&model.system, p, cfg.t_max, &cfg.stepper)).collect();

    let mut manifest = Manifest::new("simulate", cfg);
    for (i, (p, out)) in points.iter().zip(&outcomes).enumerate() {
        let mut e = entry(i, p, out);
        let tr = match out {
            Ok(t) => Some(t),
            Err(err) => err.trajectory(),
        };
        if let Some(t) = tr {
            let name = format!("traj_{i:04}.{}", cfg.format);
            let path = dir.join(&name);
            match cfg.format {
                OutputFormat::Csv => write_trajectory_csv(t, &path).map_err(io_err(&path))?,
                OutputFormat::Json => write_json(&path, t)?,
            }
            e.file = Some(name.clone());
            manifest.files.push(name);
        }
        if e.status == "failed" {
            manifest.failures += 1;
        }
        manifest.entries.push(e);
    }
    let gaps: Vec<f64> = outcomes
        .iter()
        .zip(&points)
        .filter_map(|(o, p)| o.as_ref().ok().map(|t| closure_gap(t, p)))
        .flatten()
        .collect();
    if let Some(g) = gaps.iter().copied().reduce(f64::max) {
        manifest.note("max_closure_gap", g);
    }
    manifest.note("trajectories", points.len());
    finish(&dir, &manifest)?;
    if !quiet {
        println!("simulated {} initial conditions into {}", points.len(), dir.display());
        for e in &manifest.entries {
            let term = e.termination.map_or("-".to_string(), |t| format!("{t:?}"));
            println!("  #{:<4} {:<8} {:<20} events={}", e.index, e.status, term, e.events);
        }
        if manifest.failures > 0 {
            println!("{} trajectories failed (see manifest.json)", manifest.failures);
        }
    }
    Ok(manifest.failures > 0)
}

/// Smallest distance from an upward Σ crossing back to the start; `None`
/// when the orbit never crosses upward.
fn closure_gap(t: &Trajectory, p: &Point3) -> Option<f64> {
    t.upward_crossings().iter().map(|(_, q)| (q - p).norm()).reduce(f64::min)
}

fn classify_fate(cfg: &RunConfig, quiet: bool) -> Result<bool, CliError> {
    let dir = prepare(cfg)?;
    let model = cfg.model.build();
    let cycles = match model.perturbation() {
        Some(spec) if !spec.is_trivial() => {
            cycle_report(&spec, cfg.cycles.interval, cfg.cycles.grid_n).map_err(|e| CliError::Run(e.to_string()))?.cycles
        }
        _ => vec![],
    };
    let reports: Vec<FateReport> = cfg
        .grid
        .points()
        .par_iter()
        .map(|&(x, y)| classify_point(&model, x, y, &cfg.stepper, &cycles, &cfg.fate))
        .collect();

    let header = ["x", "y", "cell", "predicted", "observed", "cycle_x0", "agree", "near_boundary", "crossings_before_sliding", "events"];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let cycle_x0 = match r.observed {
                crate::fate::Fate::ToCycle { x0 } => fmt_f64(x0),
                _ => String::new(),
            };
            vec![
                fmt_f64(r.x),
                fmt_f64(r.y),
                r.cell.label().to_string(),
                r.predicted.map_or(String::new(), |p| p.label().to_string()),
                r.observed.label().to_string(),
                cycle_x0,
                r.agree.map_or(String::new(), |a| a.to_string()),
                r.near_boundary.to_string(),
                r.crossings_before_sliding.map_or(String::new(), |n| n.to_string()),
                r.events.to_string(),
            ]
        })
        .collect();
    let name = write_table(&dir, "fates", cfg.format, &header, &rows)?;

    let mut manifest = Manifest::new("classify-fate", cfg);
    manifest.files.push(name);
    let unresolved = reports.iter().filter(|r| r.observed == crate::fate::Fate::Unresolved).count();
    manifest.failures = unresolved;
    let mut by_cell: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for r in &reports {
        *by_cell.entry(r.cell.label().into()).or_default().entry(r.observed.label().into()).or_default() += 1;
    }
    let rate = agreement_rate(&reports);
    manifest.note("points", reports.len());
    manifest.note("unresolved", unresolved);
    manifest.note("observed_by_cell", &by_cell);
    manifest.note("agreement_rate", rate.map(|r| r.0));
    manifest.note("agreement_points", rate.map(|r| r.1));
    manifest.note("predictions_available", has_predictions(&cfg.model));
    finish(&dir, &manifest)?;
    if !quiet {
        println!("{:<12} observed fates", "cell");
        for (cell, m) in &by_cell {
            let s: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("{cell:<12} {}", s.join(" "));
        }
        match rate {
            Some((r, n)) => println!("agreement {:.1}% over {n} resolved off-boundary points", 100.0 * r),
            None => println!("no predictions to compare for this model"),
        }
        if unresolved > 0 {
            println!("{unresolved} points unresolved within t_max");
        }
    }
    Ok(unresolved > 0)
}

fn stability_label(s: Stability) -> &'static str {
    match s {
        Stability::Attractor => "attractor",
        Stability::Repeller => "repeller",
        Stability::NonHyperbolic => "non-hyperbolic",
    }
}

fn cycles(cfg: &RunConfig, quiet: bool) -> Result<bool, CliError> {
    let dir = prepare(cfg)?;
    let mut manifest = Manifest::new("cycles", cfg);
    let report = match cfg.model.perturbation() {
        Some(spec) => cycle_report(&spec, cfg.cycles.interval, cfg.cycles.grid_n).map_err(|e| CliError::Run(e.to_string()))?,
        None => {
            // ε = 0 is the unperturbed model, whose r₀ is a continuum of
            // periodic orbits rather than isolated cycles
            let spec = crate::models::PerturbationSpec::finite(0, 0.0);
            let mut r = cycle_report(&spec, cfg.cycles.interval, cfg.cycles.grid_n).map_err(|e| CliError::Run(e.to_string()))?;
            r.notes.push("unperturbed model: every point of r0 lies on a periodic orbit".into());
            r
        }
    };
    write_json(&dir.join("cycles.json"), &report)?;
    manifest.files.push("cycles.json".into());
    if cfg.format == OutputFormat::Csv {
        let header = ["x0", "period", "multiplier", "multiplier_minus_one", "stability", "j"];
        let rows: Vec<Vec<String>> = report
            .cycles
            .iter()
            .map(|c| {
                vec![
                    fmt_f64(c.x0),
                    fmt_f64(c.period),
                    fmt_f64(c.multiplier),
                    fmt_f64(c.multiplier_minus_one),
                    stability_label(c.stability).into(),
                    c.j.map_or(String::new(), |j| j.to_string()),
                ]
            })
            .collect();
        manifest.files.push(write_table(&dir, "cycles", OutputFormat::Csv, &header, &rows)?);
    }
    manifest.note("cycles", report.cycles.len());
    finish(&dir, &manifest)?;
    if !quiet {
        print_cycles(&report);
    }
    Ok(false)
}

fn print_cycles(report: &CycleReport) {
    println!("{} cycle(s) on ({}, {})", report.cycles.len(), report.interval.0, report.interval.1);
    if !report.cycles.is_empty() {
        println!("{:>4}  {:>22}  {:>22}  {:>12}  stability", "j", "x0", "period", "mult - 1");
    }
    for c in &report.cycles {
        let j = c.j.map_or("-".into(), |j| j.to_string());
        println!(
            "{j:>4}  {:>22.16}  {:>22.16}  {:>12.4e}  {}",
            c.x0,
            c.period,
            c.multiplier_minus_one,
            stability_label(c.stability)
        );
    }
    for n in &report.notes {
        println!("note: {n}");
    }
}

fn sliding_portrait(cfg: &RunConfig, quiet: bool) -> Result<bool, CliError> {
    let dir = prepare(cfg)?;
    let model = cfg.model.build();
    let sys = &model.system;
    let header = ["x", "y", "x_dot", "y_dot", "u_dot", "v_dot", "region", "reversed", "singular"];
    let rows: Vec<Vec<String>> = cfg
        .grid
        .points()
        .iter()
        .map(|&(x, y)| {
            let q = Point3::new(x, y, 0.0);
            let (n, xf, yf) = normalized_raw(sys, &q).map_err(|e| CliError::Run(e.to_string()))?;
            let region = classify_sigma_point(sys, &q).map_err(|e| CliError::Run(e.to_string()))?;
            Ok(vec![
                fmt_f64(x),
                fmt_f64(y),
                fmt_f64(n.x),
                fmt_f64(n.y),
                fmt_f64(n.x + n.y),
                fmt_f64(n.x - n.y),
                region.label().to_string(),
                (region == crate::system::SigmaRegion::Escaping).to_string(),
                ((yf - xf).abs() <= TOL_DENOMINATOR).to_string(),
            ])
        })
        .collect::<Result<_, CliError>>()?;
    let mut manifest = Manifest::new("sliding-portrait", cfg);
    manifest.files.push(write_table(&dir, "sliding_portrait", cfg.format, &header, &rows)?);
    manifest.note("rows", rows.len());
    finish(&dir, &manifest)?;
    if !quiet {
        println!("wrote {} field samples to {}", rows.len(), dir.display());
    }
    Ok(false)
}

fn return_iterate(cfg: &RunConfig, quiet: bool) -> Result<bool, CliError> {
    let dir = prepare(cfg)?;
    let spec = cfg.model.perturbation();
    let mut rows = vec![];
    let mut failures = 0;
    let mut manifest = Manifest::new("return-map iterate", cfg);
    for (k, p) in cfg.return_map.points.iter().enumerate() {
        match iterate_return(&SigmaPoint::new(p[0], p[1]), cfg.return_map.iterations, spec.as_ref()) {
            Ok(rep) => {
                for (i, q) in rep.points.iter().enumerate() {
                    rows.push(vec![
                        k.to_string(),
                        i.to_string(),
                        fmt_f64(q.x),
                        fmt_f64(q.y),
                        fmt_f64(rep.distances[i]),
                        rep.fly_times.get(i).map_or(String::new(), |t| fmt_f64(*t)),
                    ]);
                }
                if !quiet {
                    let stop = rep.exit.map_or(String::new(), |i| format!(", left the domain at iterate {i}"));
                    println!("start #{k}: {} returns{stop}", rep.points.len() - 1);
                }
            }
            Err(e) => {
                failures += 1;
                manifest.note(&format!("error_{k}"), e.to_string());
                if !quiet {
                    println!("start #{k}: {e}");
                }
            }
        }
    }
    let header = ["start", "iterate", "x", "y", "distance_to_r0", "upper_fly_time"];
    manifest.files.push(write_table(&dir, "return_iterates", cfg.format, &header, &rows)?);
    manifest.failures = failures;
    finish(&dir, &manifest)?;
    Ok(failures > 0)
}

fn return_linearize(cfg: &RunConfig, quiet: bool) -> Result<bool, CliError> {
    let dir = prepare(cfg)?;
    let spec = cfg.model.perturbation();
    let mut rows = vec![];
    let mut failures = 0;
    let mut manifest = Manifest::new("return-map linearize", cfg);
    for &x0 in &cfg.return_map.x0 {
        match linearized_return(x0, spec.as_ref()) {
            Ok(l) => {
                let j = l.jacobian;
                let ev = &l.eigen;
                rows.push(vec![
                    fmt_f64(x0),
                    fmt_f64(j[(0, 0)]),
                    fmt_f64(j[(0, 1)]),
                    fmt_f64(j[(1, 0)]),
                    fmt_f64(j[(1, 1)]),
                    fmt_f64(ev.values[0].re),
                    fmt_f64(ev.values[0].im),
                    fmt_f64(ev.values[1].re),
                    fmt_f64(ev.values[1].im),
                    fmt_f64(ev.vectors[0][0].re),
                    fmt_f64(ev.vectors[0][1].re),
                    fmt_f64(ev.vectors[1][0].re),
                    fmt_f64(ev.vectors[1][1].re),
                    fmt_f64(l.max_residual()),
                ]);
                if !quiet {
                    println!("x0 = {x0}: eigenvalues {:.12}, {:.12}", ev.values[0], ev.values[1]);
                }
            }
            Err(e) => {
                failures += 1;
                manifest.note(&format!("error_{x0}"), e.to_string());
                if !quiet {
                    println!("x0 = {x0}: {e}");
                }
            }
        }
    }
    let header = [
        "x0", "j11", "j12", "j21", "j22", "mu1_re", "mu1_im", "mu2_re", "mu2_im", "v1_x", "v1_y", "v2_x", "v2_y", "residual",
    ];
    manifest.files.push(write_table(&dir, "return_linearization", cfg.format, &header, &rows)?);
    manifest.failures = failures;
    finish(&dir, &manifest)?;
    Ok(failures > 0)
}
