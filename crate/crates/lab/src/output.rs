//! CSV and JSON encodings of trajectories and ensemble summaries.

use std::fmt::Write as _;

use reduction_core::ensemble::{EnsembleSummary, ModeSummary, Verdict};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

/// Fixed-width scientific notation with 17 significant digits.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header-first CSV of numeric rows.
pub fn csv(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{x:.16e}");
        }
        out.push('\n');
    }
    out
}

/// `t, H_t, V_t, purity, xi, W, pi_1..pi_D, |R_n_m|` for `n < m`.
pub fn trajectory_header(levels: usize, pairs: &[(usize, usize)]) -> Vec<String> {
    let mut h: Vec<String> = ["t", "H_t", "V_t", "purity", "xi", "W"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=levels).map(|r| format!("pi_{r}")));
    h.extend(pairs.iter().map(|(n, m)| format!("|R_{}_{}|", n + 1, m + 1)));
    h
}

/// Per-time means and standard errors of every recorded series.
pub fn series_csv(summary: &EnsembleSummary, mode: &ModeSummary) -> String {
    let mut header = vec![String::from("t")];
    for name in &summary.columns {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_stderr"));
    }
    let rows = mode.times.iter().enumerate().map(|(j, &t)| {
        let mut row = Vec::with_capacity(header.len());
        row.push(t);
        for c in 0..mode.width {
            row.push(mode.mean_at(j, c));
            row.push(mode.stderr_at(j, c));
        }
        row
    });
    csv(&header, rows)
}

pub fn series_file_name(mode: &ModeSummary) -> String {
    format!("series_{}.csv", mode.kind.name().replace('-', "_"))
}

fn verdict_json(v: &Verdict) -> Value {
    let metrics: Map<String, Value> = v.metrics.iter().map(|(k, x)| (k.clone(), json!(x))).collect();
    json!({
        "check": v.check.name(),
        "mode": v.mode.name(),
        "passed": v.passed,
        "statistic": v.statistic,
        "threshold": v.threshold,
        "detail": v.detail,
        "metrics": metrics,
    })
}

fn mode_json(m: &ModeSummary) -> Value {
    let luders: Vec<Value> = m
        .luders
        .iter()
        .map(|l| {
            json!({
                "level": l.level + 1,
                "count": l.count,
                "mean_trace_distance": l.mean_distance,
                "max_trace_distance": l.max_distance,
                "mean_purity": l.mean_purity,
                "target_purity": l.target_purity,
            })
        })
        .collect();
    let b = &m.brownian;
    json!({
        "mode": m.kind.name(),
        "n_paths": m.n_paths,
        "series_file": series_file_name(m),
        "born_counts": m.born_counts,
        "born_frequencies": m.born_frequencies,
        "sampled_level_counts": m.sampled_counts,
        "terminal_energy": {
            "mean": m.terminal_energy.mean,
            "stderr": m.terminal_energy.stderr,
            "variance": m.terminal_energy.variance,
            "variance_stderr": m.terminal_energy.variance_stderr,
        },
        "luders": luders,
        "concentrated_fraction": m.concentrated_fraction,
        "brownian": {
            "terminal_mean": b.terminal_mean,
            "terminal_stderr": b.terminal_stderr,
            "terminal_sq_mean": b.terminal_sq_mean,
            "terminal_sq_stderr": b.terminal_sq_stderr,
            "lag1_mean": b.lag1_mean,
            "lag1_stderr": b.lag1_stderr,
        },
        "min_increasing_process": m.min_a,
    })
}

/// Config echo, seed, verdicts and statistics.
pub fn summary_json(config: &RunConfig, summary: &EnsembleSummary) -> String {
    let oracle = summary.oracle_gap.map(|g| json!({ "mean": g.mean, "stderr": g.stderr, "max": g.max }));
    let value = json!({
        "config": config,
        "seed": summary.base_seed,
        "n_paths": summary.n_paths,
        "all_passed": summary.all_passed(),
        "verdicts": summary.verdicts.iter().map(verdict_json).collect::<Vec<_>>(),
        "statistics": {
            "energies": summary.energies,
            "probabilities": summary.probabilities,
            "initial_mean_energy": summary.h0,
            "initial_energy_variance": summary.v0,
            "modes": summary.modes.iter().map(mode_json).collect::<Vec<_>>(),
            "oracle_gap": oracle,
        },
        "columns": summary.columns,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("json values serialize");
    text.push('\n');
    text
}

/// Left-aligned plain-text table with a rule under the header.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        let padded: Vec<String> = cells.zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(&mut header.iter().copied());
    out.push('\n');
    out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

/// One row per verdict: claim, measured statistic, threshold, verdict.
pub fn verdict_table(summary: &EnsembleSummary) -> String {
    let rows: Vec<Vec<String>> = summary
        .verdicts
        .iter()
        .map(|v| {
            vec![
                format!("{} [{}]: {}", v.check.name(), v.mode.name(), v.detail),
                format!("{:.4e}", v.statistic),
                format!("{:.4e}", v.threshold),
                String::from(if v.passed { "PASS" } else { "FAIL" }),
            ]
        })
        .collect();
    table(&["claim", "measured", "threshold", "verdict"], &rows)
}
