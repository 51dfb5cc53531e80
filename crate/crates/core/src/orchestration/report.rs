use crate::error::{ensure, Result};
use crate::metrics::{aggregate_folds, fmt_fixed, round_half_up, FoldSummary};

/// Fixed-width table with one column per fold and a `Mean ± SD` column.
///
/// Fold values are shown at two decimals, and the mean and (population)
/// SD are recomputed from those shown values, so every row re-derives from
/// what is printed.
pub fn render_report(rows: &[(String, FoldSummary)]) -> Result<String> {
    ensure!(!rows.is_empty(), "report has no rows");
    let k = rows[0].1.k();
    ensure!(k > 0, "report rows have no folds");
    for (label, s) in rows {
        ensure!(s.k() == k, "row {label:?} has {} folds, expected {k}", s.k());
    }
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap().max(5);
    let cells: Vec<(Vec<String>, String)> = rows
        .iter()
        .map(|(_, s)| {
            let shown: Vec<f64> = s.values.iter().map(|v| round_half_up(*v, 2)).collect();
            let agg = aggregate_folds(&shown)?;
            Ok((shown.iter().map(|v| fmt_fixed(*v, 2)).collect(), agg.render()))
        })
        .collect::<Result<_>>()?;
    let fold_w = cells.iter().flat_map(|(c, _)| c.iter().map(String::len)).max().unwrap().max(3);
    let mean_w = cells.iter().map(|(_, m)| m.chars().count()).max().unwrap().max(9);

    let mut out = format!("{:<label_w$}", "Model");
    for f in 1..=k {
        out.push_str(&format!("  {:>fold_w$}", format!("F{f}")));
    }
    out.push_str(&format!("  {:>mean_w$}\n", "Mean ± SD"));
    for ((label, _), (folds, mean)) in rows.iter().zip(&cells) {
        out.push_str(&format!("{label:<label_w$}"));
        for c in folds {
            out.push_str(&format!("  {c:>fold_w$}"));
        }
        out.push_str(&format!("  {mean:>mean_w$}\n"));
    }
    Ok(out)
}
