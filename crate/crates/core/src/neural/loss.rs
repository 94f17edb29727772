//! Binary cross-entropy (for the response heads) and mean squared error
//! (for the TD objective), with their exact gradients.

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Summed BCE over paired elements plus d(sum)/dp. The mean-style losses
/// below divide by the element count; trainers that weight samples
/// differently scale this themselves.
pub fn bce_terms(p: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(p.len(), y.len(), "bce shape mismatch");
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let pc = clamp_prob(pi);
        total += -(yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln());
        // the clamped loss is flat outside the clamp window
        let g = if pi <= PROB_EPS || pi >= 1.0 - PROB_EPS {
            0.0
        } else {
            (pc - yi) / (pc * (1.0 - pc))
        };
        grads.push(g);
    }
    (total, grads)
}

/// Mean binary cross-entropy.
pub fn bce_loss(p: &[f64], y: &[f64]) -> f64 {
    let (sum, _) = bce_terms(p, y);
    sum / p.len() as f64
}

/// d(mean BCE)/dp.
pub fn bce_grad(p: &[f64], y: &[f64]) -> Vec<f64> {
    let n = p.len() as f64;
    let (_, mut grads) = bce_terms(p, y);
    for g in &mut grads {
        *g /= n;
    }
    grads
}

/// Mean squared error over paired elements.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "mse shape mismatch");
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

/// d(mean MSE)/dpred.
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    assert_eq!(pred.len(), target.len(), "mse shape mismatch");
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_identical_vectors_is_zero() {
        let q = [0.3, -1.2, 4.0];
        assert_eq!(mse_loss(&q, &q), 0.0);
    }

    #[test]
    fn bce_half_against_one_is_ln2() {
        let loss = bce_loss(&[0.5], &[1.0]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mse_arithmetic() {
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]), 5.0);
    }

    #[test]
    fn bce_clamps_extreme_probabilities() {
        let loss = bce_loss(&[0.0, 1.0], &[1.0, 0.0]);
        assert!(loss.is_finite());
        assert!(loss > 0.0);
        let grads = bce_grad(&[0.0, 1.0], &[1.0, 0.0]);
        assert!(grads.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let eps = 1e-6;
        let p = [0.2, 0.5, 0.83, 0.4];
        let y = [1.0, 0.0, 1.0, 0.0];
        let analytic = bce_grad(&p, &y);
        for i in 0..p.len() {
            let mut hi = p;
            let mut lo = p;
            hi[i] += eps;
            lo[i] -= eps;
            let numeric = (bce_loss(&hi, &y) - bce_loss(&lo, &y)) / (2.0 * eps);
            assert!((analytic[i] - numeric).abs() / numeric.abs().max(1.0) < 1e-5);
        }

        let pred = [0.7, -0.4, 2.3];
        let target = [0.1, 0.1, 0.1];
        let analytic = mse_grad(&pred, &target);
        for i in 0..pred.len() {
            let mut hi = pred;
            let mut lo = pred;
            hi[i] += eps;
            lo[i] -= eps;
            let numeric = (mse_loss(&hi, &target) - mse_loss(&lo, &target)) / (2.0 * eps);
            assert!((analytic[i] - numeric).abs() < 1e-6);
        }
    }
}
