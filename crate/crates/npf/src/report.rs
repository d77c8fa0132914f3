//! Plain-text report emission: CSV tables and the run manifest.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so a
//! byte comparison of two reports is a comparison of the exact binary
//! values that produced them.

use serde::Serialize;

use crate::backward::BackwardSolution;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::forward::{CouplingStats, PathBundle};
use crate::stats::deterministic_sum;

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_document(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub struct ForwardRow {
    pub n: u64,
    pub stats: CouplingStats,
}

pub fn forward_convergence_csv(rows: &[ForwardRow]) -> String {
    let header: Vec<String> = [
        "n",
        "mean_sup_X",
        "stderr_X",
        "mean_sup_K",
        "stderr_K",
        "mean_sup_k",
        "stderr_k",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                fmt_f64(r.stats.mean_sup_state.mean),
                fmt_f64(r.stats.mean_sup_state.stderr),
                fmt_f64(r.stats.mean_sup_compensator.mean),
                fmt_f64(r.stats.mean_sup_compensator.stderr),
                fmt_f64(r.stats.mean_sup_boundary.mean),
                fmt_f64(r.stats.mean_sup_boundary.stderr),
            ]
        })
        .collect();
    csv_document(&header, &body)
}

fn query_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for j in 0..dim {
        h.push(format!("x{j}"));
    }
    h
}

pub struct SweepRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub n: u64,
    pub u_n: f64,
    pub stderr: f64,
    pub u_ref: f64,
    pub stderr_ref: f64,
    pub gap: f64,
    pub gap_stderr: f64,
}

/// One row per (query, penalty level). Values are the first solution
/// component; the built-in problems are scalar.
pub fn pde_sweep_csv(dim: usize, rows: &[SweepRow]) -> String {
    let mut header = query_header(dim);
    header.extend(
        ["n", "u_n", "stderr", "u_ref", "stderr_ref", "gap", "gap_stderr"]
            .iter()
            .map(|s| s.to_string()),
    );
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![fmt_f64(r.t)];
            row.extend(r.x.iter().map(|v| fmt_f64(*v)));
            row.extend([
                r.n.to_string(),
                fmt_f64(r.u_n),
                fmt_f64(r.stderr),
                fmt_f64(r.u_ref),
                fmt_f64(r.stderr_ref),
                fmt_f64(r.gap),
                fmt_f64(r.gap_stderr),
            ]);
            row
        })
        .collect();
    csv_document(&header, &body)
}

pub struct BsdeGapRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub n: u64,
    pub mean_sup_y_sq: f64,
    pub stderr: f64,
}

pub fn bsde_gap_csv(dim: usize, rows: &[BsdeGapRow]) -> String {
    let mut header = query_header(dim);
    header.extend(["n", "mean_sup_Y_sq", "stderr"].iter().map(|s| s.to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![fmt_f64(r.t)];
            row.extend(r.x.iter().map(|v| fmt_f64(*v)));
            row.extend([r.n.to_string(), fmt_f64(r.mean_sup_y_sq), fmt_f64(r.stderr)]);
            row
        })
        .collect();
    csv_document(&header, &body)
}

pub struct SolveRow {
    pub t: f64,
    pub x: Vec<f64>,
    /// `None` for the reflected scheme.
    pub penalty: Option<u64>,
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

pub fn solve_csv(dim: usize, rows: &[SolveRow]) -> String {
    let mut header = query_header(dim);
    header.extend(
        ["scheme", "n", "value", "stderr", "n_paths", "dt", "seed"]
            .iter()
            .map(|s| s.to_string()),
    );
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![fmt_f64(r.t)];
            row.extend(r.x.iter().map(|v| fmt_f64(*v)));
            let (scheme, n) = match r.penalty {
                Some(n) => ("penalized".to_string(), n.to_string()),
                None => ("reflected".to_string(), String::new()),
            };
            row.extend([
                scheme,
                n,
                fmt_f64(r.value),
                fmt_f64(r.stderr),
                r.n_paths.to_string(),
                fmt_f64(r.dt),
                r.seed.to_string(),
            ]);
            row
        })
        .collect();
    csv_document(&header, &body)
}

/// Full trajectory dump: one row per (path, step).
pub fn path_bundle_csv(bundle: &PathBundle) -> String {
    let dim = bundle.dim;
    let mut header = vec!["path".to_string(), "step".to_string(), "time".to_string()];
    for j in 0..dim {
        header.push(format!("X_{j}"));
    }
    for j in 0..dim {
        header.push(format!("K_{j}"));
    }
    header.push("k".to_string());
    let mut rows = Vec::with_capacity(bundle.n_paths * (bundle.grid.steps + 1));
    for p in 0..bundle.n_paths {
        for i in 0..=bundle.grid.steps {
            let mut row = vec![p.to_string(), i.to_string(), fmt_f64(bundle.grid.node(i))];
            row.extend(bundle.state(p, i).iter().map(|v| fmt_f64(*v)));
            row.extend(bundle.compensator(p, i).iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(bundle.boundary_functional(p, i)));
            rows.push(row);
        }
    }
    csv_document(&header, &rows)
}

/// Backward-solve diagnostics, one row per time step.
pub fn bsde_diagnostics_csv(sol: &BackwardSolution) -> String {
    let header: Vec<String> = [
        "step",
        "time",
        "picard_residual",
        "condition_warning",
        "mean_Y",
        "mean_absZ",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let n = sol.n_paths;
    let mut rows = Vec::with_capacity(sol.grid.steps);
    for i in 0..sol.grid.steps {
        let mean_y = deterministic_sum(n, |p| {
            sol.value(p, i).iter().map(|v| v * v).sum::<f64>().sqrt()
        }) / n as f64;
        let mean_abs_z = deterministic_sum(n, |p| {
            sol.z_value(p, i).iter().map(|v| v * v).sum::<f64>().sqrt()
        }) / n as f64;
        let warning = sol
            .diagnostics
            .condition_warnings
            .iter()
            .find(|w| w.starts_with(&format!("step {i} ")))
            .cloned()
            .unwrap_or_default();
        rows.push(vec![
            i.to_string(),
            fmt_f64(sol.grid.node(i)),
            fmt_f64(sol.diagnostics.picard_residuals[i]),
            warning,
            fmt_f64(mean_y),
            fmt_f64(mean_abs_z),
        ]);
    }
    csv_document(&header, &rows)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    seed: u64,
    versions: Versions,
}

#[derive(Serialize)]
struct Versions {
    npf: &'static str,
}

/// Resolved-config manifest; re-running with this config reproduces the
/// numeric outputs byte for byte.
pub fn manifest_json(command: &str, config: &ExperimentConfig, seed: u64) -> Result<String> {
    let manifest = Manifest {
        command,
        config,
        seed,
        versions: Versions {
            npf: env!("CARGO_PKG_VERSION"),
        },
    };
    Ok(serde_json::to_string_pretty(&manifest).map_err(|e| crate::error::NpfError::config(e.to_string()))? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_the_csv_format() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -0.0, 12345.678901234567] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s}");
        }
    }

    #[test]
    fn fields_with_commas_are_quoted() {
        let doc = csv_document(
            &["a".into(), "b".into()],
            &[vec!["x,y".into(), "plain".into()]],
        );
        assert_eq!(doc, "a,b\n\"x,y\",plain\n");
    }
}
