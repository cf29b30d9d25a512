//! Binary cross-entropy on logits, in the overflow-free log-sum-exp form.

use super::TrainError;

/// Mean BCE over a `batch` x `classes` logit matrix with 0/1 targets, plus
/// the gradient `(sigmoid(z) - y) / (batch * classes)`.
///
/// Each element contributes `max(z, 0) - z*y + ln(1 + exp(-|z|))`, which
/// equals `ln(1 + exp(-z))` for positives and `ln(1 + exp(z))` for
/// negatives without ever exponentiating a large argument.
pub fn bce_with_logits(
    logits: &[f64],
    targets: &[f64],
    batch: usize,
    classes: usize,
) -> Result<(f64, Vec<f64>), TrainError> {
    let n = batch * classes;
    if logits.len() != n || targets.len() != n {
        return Err(TrainError::Shape(format!(
            "bce expects {batch}x{classes} logits and targets, got {} and {}",
            logits.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let scale = 1.0 / n as f64;
    for i in 0..n {
        let z = logits[i];
        let y = targets[i];
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let sig = if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        };
        grad[i] = (sig - y) * scale;
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_positive_is_ln2() {
        let (loss, _) = bce_with_logits(&[0.0], &[1.0], 1, 1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn huge_logit_is_stable() {
        let (loss, grad) = bce_with_logits(&[50.0, -50.0], &[1.0, 0.0], 1, 2).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-20);
        assert!(grad.iter().all(|g| g.is_finite()));

        let (loss, _) = bce_with_logits(&[800.0], &[0.0], 1, 1).unwrap();
        assert!((loss - 800.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (b, c) = (4, 3);
        let logits: Vec<f64> = (0..b * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let targets: Vec<f64> = (0..b * c).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let (_, grad) = bce_with_logits(&logits, &targets, b, c).unwrap();
        let h = 1e-6;
        for i in 0..b * c {
            let mut plus = logits.clone();
            plus[i] += h;
            let mut minus = logits.clone();
            minus[i] -= h;
            let (lp, _) = bce_with_logits(&plus, &targets, b, c).unwrap();
            let (lm, _) = bce_with_logits(&minus, &targets, b, c).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "element {i}: {} vs {}",
                grad[i],
                fd
            );
        }
    }

    #[test]
    fn invariant_under_batch_permutation() {
        let logits = [0.3, -1.2, 2.0, 0.1, -0.4, 1.7];
        let targets = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let (a, _) = bce_with_logits(&logits, &targets, 3, 2).unwrap();
        // Swap rows 0 and 2.
        let logits_p = [-0.4, 1.7, 2.0, 0.1, 0.3, -1.2];
        let targets_p = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let (b, _) = bce_with_logits(&logits_p, &targets_p, 3, 2).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(bce_with_logits(&[0.0; 5], &[0.0; 6], 2, 3).is_err());
    }
}
