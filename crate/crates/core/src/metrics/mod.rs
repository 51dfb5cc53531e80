//! Prevalence-robust evaluation metrics.
//!
//! Scores are computed as fractions; [`MetricsReport`] and [`FoldSummary`]
//! carry percentages, matching how results are tabulated.

mod auroc;
mod confusion;
mod ensemble;
mod summary;

pub use auroc::{auroc, auroc_pairwise};
pub use confusion::{balanced_accuracy, confusion_at, Confusion};
pub use ensemble::{ensemble_average, select_submission};
pub use summary::{aggregate_folds, aggregate_folds_with, round_half_up, fmt_fixed, FoldSummary, SdKind};

use crate::error::{ensure, Result};

/// Predicted probabilities with their binary ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    probabilities: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(probabilities: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        ensure!(
            probabilities.len() == labels.len(),
            "scored set length mismatch: {} probabilities, {} labels",
            probabilities.len(),
            labels.len()
        );
        ensure!(
            labels.iter().all(|&l| l <= 1),
            "labels must be 0 or 1"
        );
        ensure!(
            probabilities.iter().all(|p| p.is_finite()),
            "probabilities must be finite"
        );
        Ok(Self {
            probabilities,
            labels,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }
}

/// One evaluation's metric bundle, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub threshold: f64,
    pub auroc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
}

impl MetricsReport {
    pub const KEYS: [&'static str; 5] = [
        "auroc",
        "accuracy",
        "sensitivity",
        "specificity",
        "balanced_accuracy",
    ];

    pub fn evaluate(set: &ScoredSet, threshold: f64) -> Result<Self> {
        let auc = auroc(set)?;
        let c = confusion_at(set, threshold)?;
        let sens = c
            .sensitivity()
            .ok_or_else(|| crate::Error::invalid("sensitivity undefined: no positives"))?;
        let spec = c
            .specificity()
            .ok_or_else(|| crate::Error::invalid("specificity undefined: no negatives"))?;
        Ok(Self {
            threshold,
            auroc: 100.0 * auc,
            accuracy: 100.0 * c.accuracy(),
            sensitivity: 100.0 * sens,
            specificity: 100.0 * spec,
            balanced_accuracy: balanced_accuracy(Some(100.0 * sens), Some(100.0 * spec))?,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "threshold" => Some(self.threshold),
            "auroc" => Some(self.auroc),
            "accuracy" => Some(self.accuracy),
            "sensitivity" => Some(self.sensitivity),
            "specificity" => Some(self.specificity),
            "balanced_accuracy" => Some(self.balanced_accuracy),
            _ => None,
        }
    }

    /// Flat `key,value` record.
    pub fn to_record(&self) -> String {
        let mut out = String::from("key,value\n");
        out.push_str(&format!("threshold,{}\n", self.threshold));
        for key in Self::KEYS {
            out.push_str(&format!("{key},{}\n", self.get(key).unwrap()));
        }
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| crate::Error::invalid(format!("malformed metrics line {line:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| crate::Error::invalid(format!("bad metric value {v:?}")))?;
            fields.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| crate::Error::invalid(format!("metrics record missing {k}")))
        };
        Ok(Self {
            threshold: get("threshold")?,
            auroc: get("auroc")?,
            accuracy: get("accuracy")?,
            sensitivity: get("sensitivity")?,
            specificity: get("specificity")?,
            balanced_accuracy: get("balanced_accuracy")?,
        })
    }
}
