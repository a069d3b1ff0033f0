use std::fmt::Write as _;
use std::path::Path;

use super::run::{RunOutput, Trajectory};
use crate::error::Result;

pub const CSV_HEADER: &str = "k,beta,rel_x_err,psi_norm,rel_psi_err,br_err,jhi_err,cons_err,wall_ms";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Trajectory as CSV; oracle-only and timing columns hold `NA` when off.
pub fn trajectory_csv(t: &Trajectory) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            r.beta,
            cell(r.rel_x_err),
            r.psi_norm,
            cell(r.rel_psi_err),
            cell(r.br_err),
            r.jhi_err,
            r.cons_err,
            cell(r.wall_ms)
        );
    }
    out
}

/// Writes `trajectory.csv`, `theory.json` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectory.csv"), trajectory_csv(&out.trajectory))?;
    std::fs::write(dir.join("theory.json"), serde_json::to_string_pretty(&out.theory)?)?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&out.manifest)?)?;
    Ok(())
}
