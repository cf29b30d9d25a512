//! Per-class and mean ROC-AUC.
//!
//! The AUC is the Mann-Whitney statistic: the fraction of (positive,
//! negative) pairs where the positive scores higher, counting ties as one
//! half. It is computed from rank sums with average ranks for ties, so it
//! matches pairwise counting exactly, not just to rounding.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("logit matrix shape {rows}x{cols} does not match label matrix {label_rows}x{label_cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        label_rows: usize,
        label_cols: usize,
    },
}

/// ROC-AUC of `scores` against binary `labels`.
///
/// Returns `None` when the labels are single-class, which leaves the AUC
/// undefined.
///
/// Rank sums are accumulated as doubled integers so that ties (average
/// ranks ending in .5) stay exact; the result equals brute-force pair
/// counting bit for bit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("finite scores"));

    // Sum of doubled average ranks (1-based) over the positives.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Items i..=j share average rank ((i+1) + (j+1)) / 2.
        let doubled_rank = (i as u64 + 1) + (j as u64 + 1);
        for &k in &order[i..=j] {
            if labels[k] {
                doubled_rank_sum += doubled_rank;
            }
        }
        i = j + 1;
    }

    let p = pos as u64;
    let numerator = doubled_rank_sum - p * (p + 1);
    Ok(Some(numerator as f64 / (2 * pos * neg) as f64))
}

/// Per-class AUCs over a batch of multi-label predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// AUC per class; `None` where the split had no positives or no
    /// negatives for that class.
    pub per_class_auc: Vec<Option<f64>>,
    /// Mean over the defined classes only.
    pub mean_auc: f64,
    /// (positives, negatives) per class.
    pub counts: Vec<(usize, usize)>,
}

impl EvalResult {
    /// CSV rows `class,auc,n_pos,n_neg` plus a trailing `mean` row, in the
    /// given class order. Undefined AUCs render as `undefined`.
    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("class,auc,n_pos,n_neg\n");
        for (i, auc) in self.per_class_auc.iter().enumerate() {
            let name = class_names.get(i).copied().unwrap_or("class");
            let (p, n) = self.counts[i];
            match auc {
                Some(v) => out.push_str(&format!("{name},{v},{p},{n}\n")),
                None => out.push_str(&format!("{name},undefined,{p},{n}\n")),
            }
        }
        out.push_str(&format!("mean,{},,\n", self.mean_auc));
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Column-wise AUC of `logits` (row-major, `batch` x `classes`) against
/// 0/1 `labels` of the same shape. Scores are sigmoid(logit), which is
/// rank-equivalent to the logits themselves.
pub fn evaluate(
    logits: &[f64],
    labels: &[f64],
    batch: usize,
    classes: usize,
) -> Result<EvalResult, MetricsError> {
    if logits.len() != batch * classes || labels.len() != batch * classes {
        return Err(MetricsError::ShapeMismatch {
            rows: batch,
            cols: classes,
            label_rows: labels.len() / classes.max(1),
            label_cols: classes,
        });
    }
    let mut per_class_auc = Vec::with_capacity(classes);
    let mut counts = Vec::with_capacity(classes);
    let mut sum = 0.0;
    let mut defined = 0usize;
    for c in 0..classes {
        let scores: Vec<f64> = (0..batch).map(|b| sigmoid(logits[b * classes + c])).collect();
        let class_labels: Vec<bool> = (0..batch).map(|b| labels[b * classes + c] != 0.0).collect();
        let pos = class_labels.iter().filter(|&&l| l).count();
        counts.push((pos, batch - pos));
        let auc = roc_auc(&scores, &class_labels)?;
        if let Some(v) = auc {
            sum += v;
            defined += 1;
        }
        per_class_auc.push(auc);
    }
    let mean_auc = if defined > 0 { sum / defined as f64 } else { f64::NAN };
    Ok(EvalResult {
        per_class_auc,
        mean_auc,
        counts,
    })
}

/// O(P*N) pairwise AUC used as the oracle for the rank-based path.
/// Counting is done in doubled integers, mirroring `roc_auc` exactly.
pub fn roc_auc_bruteforce(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut doubled: u64 = 0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                doubled += 2;
            } else if p == n {
                doubled += 1;
            }
        }
    }
    Some(doubled as f64 / (2 * pos.len() * neg.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn textbook_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), Some(0.75));
    }

    #[test]
    fn perfectly_separated() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), Some(1.0));
    }

    #[test]
    fn all_ties_is_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), Some(0.5));
    }

    #[test]
    fn single_class_undefined() {
        let scores = [0.1, 0.2];
        assert_eq!(roc_auc(&scores, &[true, true]).unwrap(), None);
        assert_eq!(roc_auc(&scores, &[false, false]).unwrap(), None);
    }

    #[test]
    fn matches_bruteforce_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let n = rng.gen_range(2..=200);
            // Coarse grid forces plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 / 19.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let fast = roc_auc(&scores, &labels).unwrap();
            let brute = roc_auc_bruteforce(&scores, &labels);
            assert_eq!(fast, brute);
        }
    }

    #[test]
    fn complement_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(4..100);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
            let neg_scores: Vec<f64> = scores.iter().map(|&s| -s).collect();
            let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            if let (Some(a), Some(b)) = (
                roc_auc(&scores, &labels).unwrap(),
                roc_auc(&neg_scores, &labels).unwrap(),
            ) {
                assert!((a + b - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let scores = [0.1f64, 0.7, 0.3, 0.9, 0.5];
        let labels = [false, true, false, true, true];
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s + 1.0).exp()).collect();
        assert_eq!(
            roc_auc(&scores, &labels).unwrap(),
            roc_auc(&transformed, &labels).unwrap()
        );
    }

    #[test]
    fn evaluate_handles_undefined_class() {
        // Two classes; class 1 has no positives.
        let logits = vec![2.0, 0.3, -1.0, -0.2, 0.5, 0.1];
        let labels = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let r = evaluate(&logits, &labels, 3, 2).unwrap();
        assert!(r.per_class_auc[0].is_some());
        assert_eq!(r.per_class_auc[1], None);
        assert_eq!(r.mean_auc, r.per_class_auc[0].unwrap());
        assert_eq!(r.counts[1], (0, 3));
    }

    #[test]
    fn evaluate_logits_vs_sigmoid_rank_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (b, c) = (50, 3);
        let logits: Vec<f64> = (0..b * c).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let labels: Vec<f64> = (0..b * c).map(|_| f64::from(rng.gen_bool(0.35))).collect();
        let on_sigmoid = evaluate(&logits, &labels, b, c).unwrap();
        for cls in 0..c {
            let raw: Vec<f64> = (0..b).map(|i| logits[i * c + cls]).collect();
            let lab: Vec<bool> = (0..b).map(|i| labels[i * c + cls] != 0.0).collect();
            assert_eq!(roc_auc(&raw, &lab).unwrap(), on_sigmoid.per_class_auc[cls]);
        }
    }

    #[test]
    fn evaluate_matches_bruteforce_on_random_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (b, c) = (50, 3);
        let logits: Vec<f64> = (0..b * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels: Vec<f64> = (0..b * c).map(|_| f64::from(rng.gen_bool(0.3))).collect();
        let r = evaluate(&logits, &labels, b, c).unwrap();
        for cls in 0..c {
            let scores: Vec<f64> = (0..b).map(|i| logits[i * c + cls]).collect();
            let lab: Vec<bool> = (0..b).map(|i| labels[i * c + cls] != 0.0).collect();
            assert_eq!(r.per_class_auc[cls], roc_auc_bruteforce(&scores, &lab));
        }
    }

    #[test]
    fn csv_layout() {
        let r = EvalResult {
            per_class_auc: vec![Some(0.75), None],
            mean_auc: 0.75,
            counts: vec![(2, 2), (0, 4)],
        };
        let csv = r.to_csv(&["a", "b"]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,auc,n_pos,n_neg");
        assert_eq!(lines[1], "a,0.75,2,2");
        assert_eq!(lines[2], "b,undefined,0,4");
        assert_eq!(lines[3], "mean,0.75,,");
    }
}
