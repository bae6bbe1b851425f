//! Plain-data artifacts of a run: per-level grids and eigenvalues, the
//! projection summary, the error table, the surrogate and run metadata.
//!
//! Everything written here is a deterministic function of the run, so two
//! identical runs produce byte-identical files. Floats are printed with 17
//! significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use crate::config::RunConfig;
use crate::grid::{ParamBox, ParamPoint};
use crate::propagation::{level_labeling, ErrorRow, PropagationError, SurfaceLabeling};
use crate::refinement::{RunState, Termination};
use crate::snapshot::{SnapshotError, SnapshotSource};
use crate::surrogate::Surrogate;
use crate::verification::Verdict;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn mu_header(dim: usize) -> String {
    (1..=dim).map(|k| format!("mu_{k}")).collect::<Vec<_>>().join(",")
}

fn mu_fields(param_box: &ParamBox, p: &ParamPoint) -> String {
    param_box.to_physical(p).into_iter().map(f).collect::<Vec<_>>().join(",")
}

/// Grid of one level: exact key, physical coordinates, whether the point is new.
pub fn grid_csv(param_box: &ParamBox, state: &RunState, level: usize) -> String {
    let lvl = &state.levels[level];
    let mut out = format!("key,{},new\n", mu_header(param_box.dim()));
    for p in &lvl.points {
        let _ = writeln!(out, "{},{},{}", p.key(), mu_fields(param_box, p), u8::from(lvl.new_points.contains(p)));
    }
    out
}

/// `(surface id, μ, λ)` rows of a labeling, by surface then point.
pub fn eigen_csv(param_box: &ParamBox, labeling: &SurfaceLabeling, src: &dyn SnapshotSource) -> Result<String, ReportError> {
    let mut rows = Vec::new();
    for (node, p) in labeling.points.iter().enumerate() {
        let snap = src.snapshot(p)?;
        for (local, &id) in labeling.labels[node].iter().enumerate() {
            rows.push((id, node, snap.values[local]));
        }
    }
    rows.sort_by_key(|&(id, node, _)| (id, node));
    let mut out = format!("surface_id,{},lambda\n", mu_header(param_box.dim()));
    for (id, node, lambda) in rows {
        let _ = writeln!(out, "{id},{},{}", mu_fields(param_box, &labeling.points[node]), f(lambda));
    }
    Ok(out)
}

/// One row per checked subinterval. `clusters` lists each ambiguous group
/// as local indices on the `p` side and the `q` side.
pub fn projection_summary_csv(param_box: &ParamBox, state: &RunState) -> String {
    let dim = param_box.dim();
    let p_cols = (1..=dim).map(|k| format!("p_mu_{k}")).collect::<Vec<_>>().join(",");
    let q_cols = (1..=dim).map(|k| format!("q_mu_{k}")).collect::<Vec<_>>().join(",");
    let mut out = format!("level,p_key,q_key,{p_cols},{q_cols},rows,cols,verdict,failed_at,min_diagonal,clusters\n");
    for s in &state.checked {
        let r = &s.report;
        let verdict = match r.verdict {
            Verdict::Certified => "certified",
            Verdict::Refine => "refine",
        };
        let failed = r.failed_at.map(|j| (j + 1).to_string()).unwrap_or_default();
        let n = r.projection.rows.min(r.projection.cols);
        let min_diag = (0..n).map(|j| r.projection.get(j, j)).fold(f64::INFINITY, f64::min);
        let min_diag = if n == 0 { String::new() } else { f(min_diag) };
        let clusters = r
            .clusters
            .iter()
            .map(|c| {
                let side = |order: &[usize]| {
                    c.iter().filter_map(|&k| order.get(k)).map(|l| (l + 1).to_string()).collect::<Vec<_>>().join(" ")
                };
                format!("{}|{}", side(&s.pair.order_a), side(&s.pair.order_b))
            })
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{verdict},{failed},{min_diag},{clusters}",
            s.level,
            s.p.key(),
            s.q.key(),
            mu_fields(param_box, &s.p),
            mu_fields(param_box, &s.q),
            r.projection.rows,
            r.projection.cols,
        );
    }
    out
}

pub fn error_table_csv(rows: &[ErrorRow]) -> String {
    let mut out = String::from("level,points,wrongly_matched,subintervals_checked,subintervals_uncertified\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.level, r.points, r.wrongly_matched, r.subintervals_checked, r.subintervals_uncertified
        );
    }
    out
}

pub fn error_table_text(rows: &[ErrorRow]) -> String {
    let mut out = format!("{:>5} {:>7} {:>16} {:>13} {:>12}\n", "level", "points", "wrongly matched", "subintervals", "uncertified");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>5} {:>7} {:>16} {:>13} {:>12}",
            r.level, r.points, r.wrongly_matched, r.subintervals_checked, r.subintervals_uncertified
        );
    }
    out
}

/// Metadata without timestamps or cache statistics.
pub fn run_json(cfg: &RunConfig, state: &RunState, labeling: &SurfaceLabeling, fingerprint: &str) -> String {
    let termination = match state.termination {
        Some(Termination::Converged) => "converged",
        Some(Termination::MaxLevel) => "max_level",
        None => "incomplete",
    };
    let doc = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "fingerprint": fingerprint,
        "config": {
            "box": { "lower": cfg.param_box.lower, "upper": cfg.param_box.upper },
            "window": [cfg.window.min, cfg.window.max],
            "coefficient": cfg.coefficient.canonical(),
            "mesh_n": cfg.mesh_n,
            "w1": cfg.w1,
            "w2": cfg.w2,
            "t_pi": cfg.t_pi,
            "t_lambda": cfg.t_lambda,
            "initial_level": cfg.initial_level,
            "max_level": cfg.max_level,
        },
        "termination": termination,
        "final_level": state.current().level,
        "final_points": state.final_points().len(),
        "pending": state.pending.iter().map(|p| p.key()).collect::<Vec<_>>(),
        "subintervals_checked": state.checked.len(),
        "surfaces": labeling.surface_count,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("plain JSON values");
    s.push('\n');
    s
}

pub fn levels_json(state: &RunState) -> String {
    let mut s = serde_json::to_string_pretty(&state.records).expect("plain JSON values");
    s.push('\n');
    s
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(())
}

/// Everything a finished run reports on.
pub struct RunArtifacts<'a> {
    pub cfg: &'a RunConfig,
    pub state: &'a RunState,
    pub src: &'a dyn SnapshotSource,
    /// Final labeling; used for the last level's eigenvalue file.
    pub labeling: &'a SurfaceLabeling,
    pub surrogate: &'a Surrogate,
    pub errors: Option<&'a [ErrorRow]>,
    pub fingerprint: &'a str,
}

/// Writes all report files into `out_dir` and returns their paths.
pub fn emit_reports(a: &RunArtifacts<'_>, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io { path: out_dir.to_path_buf(), source })?;
    let bx = a.src.param_box();
    let mut written = Vec::new();
    let last = a.state.levels.len() - 1;
    for (i, lvl) in a.state.levels.iter().enumerate() {
        write(out_dir, &format!("grid_level_{}.csv", lvl.level), &grid_csv(bx, a.state, i), &mut written)?;
        let eigen = if i == last {
            eigen_csv(bx, a.labeling, a.src)?
        } else {
            eigen_csv(bx, &level_labeling(a.state, &lvl.points, a.src)?, a.src)?
        };
        write(out_dir, &format!("eigen_level_{}.csv", lvl.level), &eigen, &mut written)?;
    }
    write(out_dir, "projection_summary.csv", &projection_summary_csv(bx, a.state), &mut written)?;
    if let Some(rows) = a.errors {
        write(out_dir, "error_table.csv", &error_table_csv(rows), &mut written)?;
        write(out_dir, "error_table.txt", &error_table_text(rows), &mut written)?;
    }
    write(out_dir, "levels.json", &levels_json(a.state), &mut written)?;
    write(out_dir, "surrogate.csv", &a.surrogate.to_csv(), &mut written)?;
    write(out_dir, "run.json", &run_json(a.cfg, a.state, a.labeling, a.fingerprint), &mut written)?;
    Ok(written)
}
