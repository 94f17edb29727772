//! Central finite-difference gradient oracle. This path only ever re-runs
//! forward passes, so it stays independent of the analytic backprop it is
//! used to check.

use super::loss::{bce_grad, bce_loss, mse_grad, mse_loss};
use super::{DenseNet, Parameterized, RecurrentNet};

pub const FD_EPS: f64 = 1e-5;

/// Central-difference gradient of `loss` with respect to every parameter.
pub fn numeric_param_grad<N, F>(net: &N, eps: f64, loss: F) -> Vec<f64>
where
    N: Parameterized + Clone,
    F: Fn(&N) -> f64,
{
    let base = net.params();
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(base.len());
    for idx in 0..base.len() {
        let mut params = base.clone();
        params[idx] = base[idx] + eps;
        probe.set_params(&params).expect("probe params");
        let hi = loss(&probe);
        params[idx] = base[idx] - eps;
        probe.set_params(&params).expect("probe params");
        let lo = loss(&probe);
        grads.push((hi - lo) / (2.0 * eps));
    }
    probe.set_params(&base).expect("probe params");
    grads
}

/// Worst relative disagreement between analytic and numeric gradients.
/// Differences below 1e-7 count as agreement regardless of magnitude.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff < 1e-7 {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

fn fixed_target(dim: usize) -> Vec<f64> {
    (0..dim).map(|j| 0.15 + 0.1 * j as f64).collect()
}

fn alternating_labels(dim: usize, t: usize) -> Vec<f64> {
    (0..dim).map(|j| ((j + t) % 2) as f64).collect()
}

/// MSE-against-fixed-target gradient check for a dense net on input `x`.
pub fn dense_loss_grad_error(net: &DenseNet, x: &[f64]) -> f64 {
    let target = fixed_target(net.output_dim());
    let (out, cache) = net.forward_cached(x).expect("forward");
    let upstream = mse_grad(&out, &target);
    let (analytic, _) = net.backward(&cache, &upstream);

    let numeric = numeric_param_grad(net, FD_EPS, |probe| {
        let out = probe.forward(x).expect("forward");
        mse_loss(&out, &target)
    });
    max_rel_error(&analytic, &numeric)
}

/// Sequence-mean BCE gradient check for a recurrent net (exercises the
/// sigmoid head, the loss, and backprop through time together).
pub fn rnn_loss_grad_error(net: &RecurrentNet, inputs: &[Vec<f64>]) -> f64 {
    let steps = inputs.len() as f64;
    let labels: Vec<Vec<f64>> =
        (0..inputs.len()).map(|t| alternating_labels(net.output_dim(), t)).collect();

    let (outs, cache) = net.forward_cached(inputs).expect("forward");
    let upstream: Vec<Vec<f64>> = outs
        .iter()
        .zip(&labels)
        .map(|(p, y)| {
            let mut g = bce_grad(p, y);
            g.iter_mut().for_each(|v| *v /= steps);
            g
        })
        .collect();
    let analytic = net.backward(&cache, &upstream);

    let numeric = numeric_param_grad(net, FD_EPS, |probe| {
        let outs = probe.forward(inputs).expect("forward");
        outs.iter().zip(&labels).map(|(p, y)| bce_loss(p, y)).sum::<f64>() / steps
    });
    max_rel_error(&analytic, &numeric)
}
