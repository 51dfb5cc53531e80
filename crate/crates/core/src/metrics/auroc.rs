use std::cmp::Ordering;

use super::ScoredSet;
use crate::error::{ensure, Result};

/// Tie-corrected AUROC (Mann-Whitney U over all positive/negative pairs).
///
/// Sorts once and walks tie groups, so a group holding `p` positives and
/// `q` negatives contributes `p * below + p * q / 2` where `below` counts
/// negatives scored strictly lower. The count is kept doubled in integers,
/// which makes the result bit-identical to [`auroc_pairwise`].
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let (n_pos, n_neg) = class_sizes(set)?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    let probs = set.probabilities();
    order.sort_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap_or(Ordering::Equal));

    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let score = probs[order[i]];
        let (mut p, mut q) = (0u128, 0u128);
        while i < order.len() && probs[order[i]] == score {
            if set.labels()[order[i]] == 1 {
                p += 1;
            } else {
                q += 1;
            }
            i += 1;
        }
        twice_u += 2 * p * neg_below + p * q;
        neg_below += q;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Brute-force pairwise AUROC. Quadratic; kept as the reference the
/// rank-based form is checked against.
pub fn auroc_pairwise(set: &ScoredSet) -> Result<f64> {
    let (n_pos, n_neg) = class_sizes(set)?;
    let mut twice_u: u128 = 0;
    for (i, &pi) in set.probabilities().iter().enumerate() {
        if set.labels()[i] != 1 {
            continue;
        }
        for (j, &pj) in set.probabilities().iter().enumerate() {
            if set.labels()[j] != 0 {
                continue;
            }
            if pi > pj {
                twice_u += 2;
            } else if pi == pj {
                twice_u += 1;
            }
        }
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

fn class_sizes(set: &ScoredSet) -> Result<(u128, u128)> {
    let n_pos = set.n_pos() as u128;
    let n_neg = set.n_neg() as u128;
    ensure!(
        n_pos > 0 && n_neg > 0,
        "AUROC undefined: need both classes (positives {n_pos}, negatives {n_neg})"
    );
    Ok((n_pos, n_neg))
}
