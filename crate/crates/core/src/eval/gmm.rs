//! One-dimensional Gaussian mixtures fitted with EM, used to separate the
//! behavior modes in episode-return distributions.

use rand::Rng;
use serde::Serialize;

use crate::domain::SimRng;
use crate::error::{Result, SimError};

const RESTARTS: usize = 10;
const MAX_ITERS: usize = 500;
const LL_TOL: f64 = 1e-8;
const VAR_DEGENERATE: f64 = 1e-12;

/// A fitted mixture plus the log-likelihood trace of the winning restart.
#[derive(Debug, Clone, Serialize)]
pub struct GmmFit {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
    pub ll_trace: Vec<f64>,
}

impl GmmFit {
    /// Weight-weighted average of the component means.
    pub fn modal_average(&self) -> f64 {
        self.means.iter().zip(&self.weights).map(|(m, w)| m * w).sum()
    }
}

fn log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + var.ln() + (2.0 * std::f64::consts::PI).ln())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct EmOutcome {
    fit: GmmFit,
    degenerate: bool,
}

fn run_em(values: &[f64], k: usize, rng: &mut SimRng) -> EmOutcome {
    let n = values.len();
    // init: means at k distinct sample points, shared sample variance
    let sample_mean = values.iter().sum::<f64>() / n as f64;
    let sample_var =
        values.iter().map(|v| (v - sample_mean) * (v - sample_mean)).sum::<f64>() / n as f64;
    let init_var = sample_var.max(1e-6);
    let mut means: Vec<f64> = Vec::with_capacity(k);
    let mut guard = 0;
    while means.len() < k {
        let candidate = values[rng.gen_range(0..n)];
        if !means.iter().any(|m| (m - candidate).abs() < 1e-15) || guard > 50 {
            means.push(candidate);
        }
        guard += 1;
    }
    let mut variances = vec![init_var; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut trace = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut prev_ll = f64::NEG_INFINITY;

    for _ in 0..MAX_ITERS {
        // E-step with current parameters; also the log-likelihood
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|j| weights[j].max(1e-300).ln() + log_pdf(x, means[j], variances[j]))
                .collect();
            let total = log_sum_exp(&logs);
            ll += total;
            for j in 0..k {
                resp[i * k + j] = (logs[j] - total).exp();
            }
        }
        trace.push(ll);

        // M-step
        for j in 0..k {
            let score: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if score <= 0.0 {
                return EmOutcome {
                    fit: GmmFit {
                        means,
                        variances,
                        weights,
                        log_likelihood: ll,
                        ll_trace: trace,
                    },
                    degenerate: true,
                };
            }
            let mean = (0..n).map(|i| resp[i * k + j] * values[i]).sum::<f64>() / score;
            let var = (0..n)
                .map(|i| resp[i * k + j] * (values[i] - mean) * (values[i] - mean))
                .sum::<f64>()
                / score;
            means[j] = mean;
            variances[j] = var;
            weights[j] = score / n as f64;
            if var < VAR_DEGENERATE {
                return EmOutcome {
                    fit: GmmFit {
                        means,
                        variances,
                        weights,
                        log_likelihood: ll,
                        ll_trace: trace,
                    },
                    degenerate: true,
                };
            }
        }

        if (ll - prev_ll).abs() < LL_TOL && prev_ll != f64::NEG_INFINITY {
            break;
        }
        prev_ll = ll;
    }

    let ll = *trace.last().unwrap();
    EmOutcome {
        fit: GmmFit { means, variances, weights, log_likelihood: ll, ll_trace: trace },
        degenerate: false,
    }
}

/// Fits a k-component mixture by EM with random restarts, keeping the best
/// log-likelihood. Restarts that collapse a component are re-seeded; if
/// every restart collapses the fit is an error.
pub fn fit_gmm_1d(values: &[f64], k: usize, rng: &mut SimRng) -> Result<GmmFit> {
    if k == 0 {
        return Err(SimError::Config("mixture needs at least one component".into()));
    }
    if values.len() < 10 {
        return Err(SimError::Data(format!(
            "need at least 10 values to fit a mixture, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite("mixture input".into()));
    }

    let mut best: Option<GmmFit> = None;
    for _ in 0..RESTARTS {
        let outcome = run_em(values, k, rng);
        if outcome.degenerate {
            continue;
        }
        match &best {
            Some(fit) if fit.log_likelihood >= outcome.fit.log_likelihood => {}
            _ => best = Some(outcome.fit),
        }
    }
    best.ok_or_else(|| {
        SimError::Degenerate("every mixture restart collapsed a component".into())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::seeded_rng;

    fn normal_draws(rng: &mut SimRng, n: usize, mean: f64, sd: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u1: f64 = rng.gen::<f64>().max(1e-12);
                let u2: f64 = rng.gen();
                mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect()
    }

    #[test]
    fn recovers_well_separated_components() {
        let mut rng = seeded_rng(1);
        let mut values = normal_draws(&mut rng, 100, 1.0, 0.1);
        values.extend(normal_draws(&mut rng, 100, 10.0, 0.1));
        let fit = fit_gmm_1d(&values, 2, &mut rng).unwrap();

        let mut means = fit.means.clone();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] - 1.0).abs() < 0.1, "low mean {}", means[0]);
        assert!((means[1] - 10.0).abs() < 0.1, "high mean {}", means[1]);
        for w in &fit.weights {
            assert!((w - 0.5).abs() < 0.05, "weight {w}");
        }
    }

    #[test]
    fn k1_matches_sample_moments() {
        let mut rng = seeded_rng(2);
        let values = normal_draws(&mut rng, 200, 3.0, 2.0);
        let fit = fit_gmm_1d(&values, 1, &mut rng).unwrap();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / values.len() as f64;
        assert!((fit.means[0] - mean).abs() < 1e-9);
        assert!((fit.variances[0] - var).abs() < 1e-9);
        assert!((fit.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_is_nondecreasing() {
        let mut rng = seeded_rng(3);
        let mut values = normal_draws(&mut rng, 60, 0.0, 1.0);
        values.extend(normal_draws(&mut rng, 60, 4.0, 0.5));
        let fit = fit_gmm_1d(&values, 2, &mut rng).unwrap();
        for pair in fit.ll_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "ll decreased: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn unimodal_data_pools_to_sample_mean() {
        let mut rng = seeded_rng(4);
        let values = normal_draws(&mut rng, 400, 2.5, 1.0);
        let fit = fit_gmm_1d(&values, 2, &mut rng).unwrap();
        let sample_mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!((fit.modal_average() - sample_mean).abs() < 1e-6);
    }

    #[test]
    fn too_few_values_error() {
        let mut rng = seeded_rng(5);
        assert!(fit_gmm_1d(&[1.0; 5], 2, &mut rng).is_err());
    }

    #[test]
    fn constant_data_is_degenerate() {
        let mut rng = seeded_rng(6);
        let values = vec![2.0; 50];
        assert!(matches!(
            fit_gmm_1d(&values, 2, &mut rng),
            Err(SimError::Degenerate(_))
        ));
    }
}
