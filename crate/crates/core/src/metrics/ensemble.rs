use std::cmp::Ordering;

use super::MetricsReport;
use crate::error::{ensure, Result};

/// Element-wise mean of `m` parallel probability lists.
pub fn ensemble_average(prob_lists: &[Vec<f64>]) -> Result<Vec<f64>> {
    ensure!(!prob_lists.is_empty(), "ensemble of zero members");
    let n = prob_lists[0].len();
    ensure!(
        prob_lists.iter().all(|l| l.len() == n),
        "ensemble members have different lengths"
    );
    let m = prob_lists.len() as f64;
    Ok((0..n)
        .map(|i| {
            let first = prob_lists[0][i];
            if prob_lists.iter().all(|l| l[i] == first) {
                return first;
            }
            let mean = prob_lists.iter().map(|l| l[i]).sum::<f64>() / m;
            mean.clamp(0.0, 1.0)
        })
        .collect())
}

/// Picks the candidate with the highest AUROC; ties go to higher balanced
/// accuracy, then to the lexicographically smallest name.
pub fn select_submission(candidates: &[(String, MetricsReport)]) -> Result<&str> {
    ensure!(!candidates.is_empty(), "no submission candidates");
    let best = candidates
        .iter()
        .min_by(|(na, a), (nb, b)| {
            b.auroc
                .partial_cmp(&a.auroc)
                .unwrap_or(Ordering::Equal)
                .then(
                    b.balanced_accuracy
                        .partial_cmp(&a.balanced_accuracy)
                        .unwrap_or(Ordering::Equal),
                )
                .then(na.cmp(nb))
        })
        .unwrap();
    Ok(&best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(auroc: f64, ba: f64) -> MetricsReport {
        MetricsReport {
            threshold: 0.5,
            auroc,
            accuracy: 0.0,
            sensitivity: 0.0,
            specificity: 0.0,
            balanced_accuracy: ba,
        }
    }

    #[test]
    fn averaging() {
        let one = vec![0.1, 0.7, 0.3];
        assert_eq!(ensemble_average(&[one.clone()]).unwrap(), one);
        assert_eq!(ensemble_average(&[vec![0.2], vec![0.8]]).unwrap(), vec![0.5]);
        assert_eq!(
            ensemble_average(&[one.clone(), one.clone(), one.clone()]).unwrap(),
            one
        );
        assert!(ensemble_average(&[vec![0.1], vec![0.1, 0.2]]).is_err());
        assert!(ensemble_average(&[]).is_err());
    }

    #[test]
    fn selection_rules() {
        let c = vec![("only".to_string(), report(90.0, 80.0))];
        assert_eq!(select_submission(&c).unwrap(), "only");

        let c = vec![
            ("b".to_string(), report(94.01, 86.21)),
            ("a".to_string(), report(94.01, 88.48)),
        ];
        assert_eq!(select_submission(&c).unwrap(), "a");

        let c = vec![
            ("z".to_string(), report(90.0, 80.0)),
            ("y".to_string(), report(90.0, 80.0)),
        ];
        assert_eq!(select_submission(&c).unwrap(), "y");
        assert!(select_submission(&[]).is_err());
    }
}
