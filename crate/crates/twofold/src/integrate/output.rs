//! Trajectory export.

use std::io::Write;
use std::path::Path;

use super::Trajectory;

pub const CSV_HEADER: [&str; 6] = ["t", "x", "y", "z", "mode", "event_flag"];

/// 17 significant digits: round-trips any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per sample; `event_flag` is 1 on the sample where an arc ends at
/// a recorded Σ event.
pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for arc in &traj.arcs {
        let last = arc.samples.len().saturating_sub(1);
        for (i, (t, p)) in arc.samples.iter().enumerate() {
            let flag = if i == last && arc.exit_event.is_some() { "1" } else { "0" };
            w.write_record([fmt_f64(*t), fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z), arc.mode.label().into(), flag.into()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut buf = Vec::new();
    write_csv(traj, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(traj, std::io::BufWriter::new(file)).map_err(std::io::Error::other)
}
