//! Error metrics, the empirical baseline, named offspring distributions and
//! the experiment harness.

pub mod harness;

use crate::error::{Error, Result};
use crate::sampling::SampleTree;
use crate::tree::OffspringDistribution;

pub use harness::{
    aggregate, derive_seed, read_results, run_experiment, run_experiment_to, write_aggregate,
    AggregateRow, DistKind, DistributionSpec, EstimatorKind, ExperimentResult, ExperimentSpec,
    ResultRow, RESULTS_SCHEMA_VERSION,
};

/// Mass moved onto zero estimates before taking logarithms.
pub const KL_EPSILON: f64 = 1e-7;

/// Spreads `eps` evenly over the zero entries of `theta_hat`, taking it in
/// equal parts from the non-zero entries. Vectors without zeros are returned
/// unchanged.
pub fn discount(theta_hat: &[f64], eps: f64) -> Vec<f64> {
    let zeros = theta_hat.iter().filter(|&&x| x <= 0.0).count();
    if zeros == 0 || zeros == theta_hat.len() {
        return theta_hat.to_vec();
    }
    let nonzero = theta_hat.len() - zeros;
    let add = eps / zeros as f64;
    let take = eps / nonzero as f64;
    theta_hat
        .iter()
        .map(|&x| if x <= 0.0 { add } else { (x - take).max(f64::MIN_POSITIVE) })
        .collect()
}

/// `D_KL(θ‖θ̂) = Σ θ_i (log θ_i − log θ̂_i)` after discounting `θ̂`; terms with
/// `θ_i = 0` contribute nothing.
pub fn kl_divergence_discounted(theta: &[f64], theta_hat: &[f64], eps: f64) -> Result<f64> {
    if theta.len() != theta_hat.len() {
        return Err(Error::Config(format!(
            "KL between vectors of length {} and {}",
            theta.len(),
            theta_hat.len()
        )));
    }
    let smoothed = discount(theta_hat, eps);
    let kl: f64 = theta
        .iter()
        .zip(&smoothed)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, h)| t * (t.ln() - h.ln()))
        .sum();
    Ok(kl.max(0.0))
}

pub fn kl_divergence(theta: &OffspringDistribution, theta_hat: &OffspringDistribution) -> Result<f64> {
    kl_divergence_discounted(theta.probs(), theta_hat.probs(), KL_EPSILON)
}

/// `(θ̂_i − θ_i)²` for each parameter.
pub fn squared_errors(theta_hat: &[f64], theta: &[f64]) -> Vec<f64> {
    theta_hat
        .iter()
        .zip(theta)
        .map(|(a, b)| (a - b) * (a - b))
        .collect()
}

/// Mean over estimates of the squared error of each parameter.
pub fn mse_per_parameter(estimates: &[Vec<f64>], theta: &[f64]) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::Config("no estimates".into()));
    }
    let mut total = vec![0.0; theta.len()];
    for est in estimates {
        if est.len() != theta.len() {
            return Err(Error::Config("estimate width mismatch".into()));
        }
        for (t, e) in total.iter_mut().zip(squared_errors(est, theta)) {
            *t += e;
        }
    }
    let n = estimates.len() as f64;
    Ok(total.into_iter().map(|t| t / n).collect())
}

/// Degree histogram of the internal sample nodes in the top `top_k` levels.
pub fn empirical_estimator(s: &SampleTree, top_k: usize, width: usize) -> Result<OffspringDistribution> {
    let tree = s.tree();
    let mut counts = vec![0.0; width];
    for v in tree.node_ids().filter(|&v| tree.depth(v) < top_k) {
        let d = tree.degree(v);
        if d == 0 {
            continue;
        }
        if d > width {
            return Err(Error::DegreeExceedsWidth { degree: d, width });
        }
        counts[d - 1] += 1.0;
    }
    if counts.iter().all(|&c| c == 0.0) {
        return Err(Error::NoInternalNodes { levels: top_k });
    }
    OffspringDistribution::from_weights(&counts)
}

/// Poisson(λ) mass restricted to `{1..W}` and renormalized.
pub fn truncated_poisson(lambda: f64, width: usize) -> Result<OffspringDistribution> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidDistribution(format!("λ = {lambda}")));
    }
    // λ^i/i! in log space; the e^{-λ} factor cancels
    let ln_w: Vec<f64> = (1..=width)
        .scan(0.0, |ln_fact, i| {
            *ln_fact += (i as f64).ln();
            Some(i as f64 * lambda.ln() - *ln_fact)
        })
        .collect();
    from_log_weights(&ln_w)
}

/// Zipf mass `i^{−α}` on `{1..W}`, renormalized.
pub fn zipf(alpha: f64, width: usize) -> Result<OffspringDistribution> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidDistribution(format!("α = {alpha}")));
    }
    let ln_w: Vec<f64> = (1..=width).map(|i| -alpha * (i as f64).ln()).collect();
    from_log_weights(&ln_w)
}

/// The small-class distribution (0.2, 0.5, 0.3).
pub fn theta1() -> OffspringDistribution {
    OffspringDistribution::new(vec![0.2, 0.5, 0.3]).expect("valid constant")
}

fn from_log_weights(ln_w: &[f64]) -> Result<OffspringDistribution> {
    if ln_w.is_empty() {
        return Err(Error::InvalidDistribution("W must be at least 1".into()));
    }
    let max = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = ln_w.iter().map(|x| (x - max).exp()).collect();
    OffspringDistribution::from_weights(&w)
}
