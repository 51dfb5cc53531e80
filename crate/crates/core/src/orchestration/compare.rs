use crate::error::{ensure, Result};
use crate::metrics::{fmt_fixed, FoldSummary};

use super::runner::RunArtifacts;

/// Paired fold summaries of two runs and their differences.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeComparison {
    pub metric: String,
    pub a_label: String,
    pub b_label: String,
    pub a: FoldSummary,
    pub b: FoldSummary,
    /// `a - b` per fold.
    pub deltas: Vec<f64>,
    /// `mean(a) - mean(b)`.
    pub mean_delta: f64,
}

impl RegimeComparison {
    pub fn render(&self) -> String {
        let mut out = format!("{} ({} - {})\n", self.metric, self.a_label, self.b_label);
        for (f, d) in self.deltas.iter().enumerate() {
            out.push_str(&format!("  fold {f}: {:+.2}\n", d));
        }
        out.push_str(&format!(
            "  mean: {} vs {}, delta {}{}\n",
            self.a.render(),
            self.b.render(),
            if self.mean_delta >= 0.0 { "+" } else { "" },
            fmt_fixed(self.mean_delta, 2)
        ));
        out
    }
}

/// Fold-wise comparison of two summaries of equal length.
pub fn compare_summaries(
    metric: &str,
    a_label: &str,
    a: &FoldSummary,
    b_label: &str,
    b: &FoldSummary,
) -> Result<RegimeComparison> {
    ensure!(a.k() == b.k(), "fold counts differ: {} vs {}", a.k(), b.k());
    ensure!(a.k() > 0, "nothing to compare");
    Ok(RegimeComparison {
        metric: metric.to_string(),
        a_label: a_label.to_string(),
        b_label: b_label.to_string(),
        a: a.clone(),
        b: b.clone(),
        deltas: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
        mean_delta: a.mean - b.mean,
    })
}

/// Compares `metric` between two finished runs. Both must use the same
/// backbone family and the identical fold assignment.
pub fn compare_regimes(a: &RunArtifacts, b: &RunArtifacts, metric: &str) -> Result<RegimeComparison> {
    ensure!(
        a.config.backbone.family == b.config.backbone.family,
        "runs use different backbones: {} vs {}",
        a.config.backbone.family.as_str(),
        b.config.backbone.family.as_str()
    );
    ensure!(a.k() == b.k(), "runs have different fold counts: {} vs {}", a.k(), b.k());
    ensure!(
        a.plan.k == b.plan.k && a.plan.assignment() == b.plan.assignment(),
        "runs use mismatched fold plans"
    );
    let sa = a.summary(metric).ok_or_else(|| crate::Error::invalid(format!("unknown metric {metric:?}")))?;
    let sb = b.summary(metric).expect("both runs carry the same metric set");
    compare_summaries(metric, &a.config.label, sa, &b.config.label, sb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::aggregate_folds;
    use proptest::prelude::*;

    #[test]
    fn identical_inputs_give_zero_deltas() {
        let s = aggregate_folds(&[91.0, 92.5, 93.0]).unwrap();
        let c = compare_summaries("auroc", "x", &s, "y", &s).unwrap();
        assert!(c.deltas.iter().all(|&d| d == 0.0));
        assert_eq!(c.mean_delta, 0.0);
        assert!(c.render().contains("delta +0.00"));
    }

    #[test]
    fn mismatched_k_is_an_error() {
        let a = aggregate_folds(&[1.0, 2.0]).unwrap();
        let b = aggregate_folds(&[1.0, 2.0, 3.0]).unwrap();
        assert!(compare_summaries("auroc", "a", &a, "b", &b).is_err());
    }

    proptest! {
        #[test]
        fn mean_delta_is_mean_of_deltas(vals in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..8)) {
            let (xa, xb): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            let c = compare_summaries("m", "a", &aggregate_folds(&xa).unwrap(), "b", &aggregate_folds(&xb).unwrap()).unwrap();
            let mean_of_deltas = c.deltas.iter().sum::<f64>() / c.deltas.len() as f64;
            prop_assert!((mean_of_deltas - c.mean_delta).abs() < 1e-9);
            for (i, d) in c.deltas.iter().enumerate() {
                prop_assert_eq!(*d, xa[i] - xb[i]);
            }
        }
    }
}
