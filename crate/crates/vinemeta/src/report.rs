//! Plain-text rendering of fit results, model comparisons, and
//! simulation-study metrics.
//!
//! Every table is derived from the structured types — the text is a view,
//! never a data source. Layouts follow the reference reporting
//! conventions: fit tables list estimate and standard error per parameter
//! in canonical order with the negative log-likelihood last; metrics
//! tables block rows by metric (Bias, SD, ASE, RMSE) with one row per
//! fitted model and one column per parameter.

use crate::estimation::{FitResult, ModelRank, Slot};
use crate::model::ModelSpec;
use crate::simstudy::MetricsTable;

/// Pad-align rows into columns: the first `left` columns are left-aligned,
/// the rest right-aligned. Empty rows become blank separator lines.
fn align(rows: &[Vec<String>], left: usize) -> String {
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; n_cols];
    for row in rows {
        for (c, cell) in row.iter().enumerate() {
            widths[c] = widths[c].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        if row.is_empty() {
            out.push('\n');
            continue;
        }
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            if c < left {
                line.push_str(&format!("{cell:<width$}", width = widths[c]));
            } else {
                line.push_str(&format!("{cell:>width$}", width = widths[c]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    match x {
        Some(v) => format!("{v:.prec$}"),
        None => "-".to_string(),
    }
}

/// Render one fit as a parameter/estimate/SE table, canonical parameter
/// order, negative log-likelihood last, with convergence and boundary
/// notes underneath.
pub fn fit_table(spec: &ModelSpec, result: &FitResult) -> String {
    let mut rows = vec![vec![
        "parameter".to_string(),
        "estimate".to_string(),
        "SE".to_string(),
    ]];
    for slot in Slot::canonical(spec.k) {
        rows.push(vec![
            slot.label(),
            format!("{:.4}", slot.get(&result.estimates)),
            fmt_opt(result.standard_errors.get(slot), 4),
        ]);
    }
    rows.push(vec![
        "-loglik".to_string(),
        format!("{:.4}", -result.max_loglik),
        String::new(),
    ]);

    let mut out = format!(
        "model {}+{} (link {}, {} quadrature points)\n\n",
        spec.family,
        spec.margin.family.name(),
        spec.margin.link.name(),
        spec.nq
    );
    out.push_str(&align(&rows, 1));
    out.push('\n');
    out.push_str(&format!(
        "converged: {}  (evaluations {}, gradient norm {:.2e}, free parameters {})\n",
        if result.converged { "yes" } else { "NO" },
        result.n_evaluations,
        result.gradient_norm,
        result.n_params,
    ));
    for &idx in &result.boundary_pairs {
        let k = spec.k;
        let label = if idx < k {
            Slot::TauSens(idx).label()
        } else {
            Slot::TauSpec(idx - k).label()
        };
        out.push_str(&format!(
            "note: {label} fixed at the Frechet bound; no standard error\n"
        ));
    }
    if let Some(w) = &result.se_warning {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

/// Render a model-comparison ranking (already ordered best first).
pub fn comparison_table(ranks: &[ModelRank]) -> String {
    let mut rows = vec![vec![
        "model".to_string(),
        "-loglik".to_string(),
        "params".to_string(),
        "AIC".to_string(),
        "converged".to_string(),
    ]];
    for r in ranks {
        rows.push(vec![
            r.label.clone(),
            format!("{:.4}", -r.max_loglik),
            r.n_params.to_string(),
            format!("{:.4}", r.aic),
            if r.converged { "yes" } else { "NO" }.to_string(),
        ]);
    }
    align(&rows, 1)
}

/// Render a simulation-study metrics table: one block per metric, one row
/// per fitted model, one column per parameter; a truth row under the
/// header. Cells without a value (no comparable truth, too few converged
/// replicates) print as `-`.
pub fn metrics_table(table: &MetricsTable) -> String {
    let mut out = format!(
        "simulation study: {} replications, metrics scaled by {}, true margin {}\n\n",
        table.replications,
        table.scale,
        table.truth_margin.name()
    );

    let mut header = vec![String::new(), String::new()];
    header.extend(table.parameters.iter().cloned());
    let mut truth_row = vec!["truth".to_string(), String::new()];
    truth_row.extend(
        Slot::canonical(table.truth.k())
            .into_iter()
            .map(|s| format!("{:.2}", s.get(&table.truth))),
    );

    let mut rows = vec![header, truth_row, Vec::new()];
    for (metric, pick) in [
        ("Bias", 0usize),
        ("SD", 1),
        ("ASE", 2),
        ("RMSE", 3),
    ] {
        for (f, fit) in table.fits.iter().enumerate() {
            let mut row = vec![
                if f == 0 { metric.to_string() } else { String::new() },
                fit.label.clone(),
            ];
            if fit.failed {
                row.push("(all replicates failed)".to_string());
            } else {
                row.extend(fit.cells.iter().map(|c| {
                    let v = match pick {
                        0 => c.bias,
                        1 => c.sd,
                        2 => c.ase,
                        _ => c.rmse,
                    };
                    fmt_opt(v, 2)
                }));
            }
            rows.push(row);
        }
        rows.push(Vec::new());
    }
    out.push_str(&align(&rows, 2));

    for fit in &table.fits {
        out.push_str(&format!(
            "{}: {} converged, {} failed\n",
            fit.label, fit.n_converged, fit.n_failed
        ));
    }
    out
}
