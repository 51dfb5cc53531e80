use super::ScoredSet;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `None` when the set has no positives.
    pub fn sensitivity(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    /// `None` when the set has no negatives.
    pub fn specificity(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

/// Thresholded confusion counts; a sample is called positive iff its
/// probability is `>= threshold`.
pub fn confusion_at(set: &ScoredSet, threshold: f64) -> Result<Confusion> {
    ensure!(!set.is_empty(), "confusion matrix of an empty set");
    ensure!(
        (0.0..=1.0).contains(&threshold),
        "threshold {threshold} outside [0, 1]"
    );
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &l) in set.probabilities().iter().zip(set.labels()) {
        match (p >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Mean of sensitivity and specificity, both in percent.
pub fn balanced_accuracy(sensitivity: Option<f64>, specificity: Option<f64>) -> Result<f64> {
    match (sensitivity, specificity) {
        (Some(se), Some(sp)) => Ok((se + sp) / 2.0),
        (None, _) => Err(Error::invalid("balanced accuracy: sensitivity undefined")),
        (_, None) => Err(Error::invalid("balanced accuracy: specificity undefined")),
    }
}
