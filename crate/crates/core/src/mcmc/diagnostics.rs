//! Raftery-Lewis run-length diagnostic.
//!
//! Dichotomizes a pilot trace at its `q`-quantile, finds the smallest
//! thinning interval at which the indicator chain looks first-order Markov
//! (BIC of a second-order fit), and derives burn-in and run length from the
//! fitted two-state transition probabilities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlParams {
    /// Quantile of interest.
    pub q: f64,
    /// Required accuracy of the quantile estimate.
    pub r: f64,
    /// Probability of attaining the accuracy.
    pub s: f64,
}

impl Default for RlParams {
    fn default() -> Self {
        Self {
            q: 0.025,
            r: 0.005,
            s: 0.95,
        }
    }
}

impl RlParams {
    fn phi(&self) -> f64 {
        Normal::standard().inverse_cdf(0.5 * (1.0 + self.s))
    }

    /// Run length needed if the draws were independent.
    pub fn n_min(&self) -> usize {
        let phi = self.phi();
        (self.q * (1.0 - self.q) * phi * phi / (self.r * self.r)).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlResult {
    /// Burn-in M.
    pub burn_in: usize,
    /// Total run length N, including burn-in.
    pub total: usize,
    /// Thinning interval k.
    pub thin: usize,
    pub n_min: usize,
    /// Dependence factor `N / n_min`.
    pub dependence: f64,
    /// Set when the dichotomized trace never changes state.
    pub degenerate: bool,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn raftery_lewis(trace: &[f64], params: &RlParams) -> Result<RlResult> {
    let n_min = params.n_min();
    if trace.len() < n_min {
        return Err(Error::InsufficientPilot {
            len: trace.len(),
            n_min,
        });
    }
    let degenerate = RlResult {
        burn_in: 0,
        total: n_min,
        thin: 1,
        n_min,
        dependence: 1.0,
        degenerate: true,
    };
    let cut = quantile(trace, params.q);
    let z: Vec<usize> = trace.iter().map(|&x| usize::from(x <= cut)).collect();
    if z.iter().all(|&v| v == z[0]) {
        return Ok(degenerate);
    }

    let mut thin = 0;
    let thinned = loop {
        thin += 1;
        let t: Vec<usize> = z.iter().step_by(thin).copied().collect();
        if t.len() < 3 {
            break t;
        }
        if second_order_bic(&t) < 0.0 {
            break t;
        }
    };

    let mut tran = [[0.0f64; 2]; 2];
    for w in thinned.windows(2) {
        tran[w[0]][w[1]] += 1.0;
    }
    let alpha = tran[0][1] / (tran[0][0] + tran[0][1]);
    let beta = tran[1][0] / (tran[1][0] + tran[1][1]);
    if !alpha.is_finite() || !beta.is_finite() || alpha + beta == 0.0 {
        return Ok(RlResult { thin, ..degenerate });
    }

    let lambda = 1.0 - alpha - beta;
    let burn_steps = if lambda.abs() >= 1.0 {
        1.0
    } else {
        let b = (params.r * alpha.max(beta) / (alpha + beta)).ln() / lambda.abs().ln();
        b.max(0.0)
    };
    let burn_in = burn_steps.ceil() as usize * thin;
    let phi = params.phi();
    let precision = (2.0 - alpha - beta) * alpha * beta * phi * phi
        / ((alpha + beta).powi(3) * params.r * params.r);
    let keep = (precision * thin as f64).ceil() as usize;
    let total = keep + burn_in;
    Ok(RlResult {
        burn_in,
        total,
        thin,
        n_min,
        dependence: total as f64 / n_min as f64,
        degenerate: false,
    })
}

/// `G² − 2 log(n − 2)` for a second-order vs first-order Markov fit of a
/// binary sequence; negative values favour the first-order model.
fn second_order_bic(z: &[usize]) -> f64 {
    let mut t = [[[0.0f64; 2]; 2]; 2];
    for w in z.windows(3) {
        t[w[0]][w[1]][w[2]] += 1.0;
    }
    let mut g2 = 0.0;
    #[allow(clippy::needless_range_loop)]
    for i1 in 0..2 {
        for i2 in 0..2 {
            for i3 in 0..2 {
                let obs = t[i1][i2][i3];
                if obs == 0.0 {
                    continue;
                }
                let row = t[i1][i2][0] + t[i1][i2][1];
                let col = t[0][i2][i3] + t[1][i2][i3];
                let mid = t[0][i2][0] + t[0][i2][1] + t[1][i2][0] + t[1][i2][1];
                let fitted = row * col / mid;
                g2 += 2.0 * obs * (obs / fitted).ln();
            }
        }
    }
    g2 - 2.0 * ((z.len() - 2) as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn n_min_default() {
        assert_eq!(RlParams::default().n_min(), 3746);
    }

    #[test]
    fn short_trace_is_rejected() {
        let err = raftery_lewis(&[0.0; 100], &RlParams::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientPilot { n_min: 3746, .. }));
    }

    #[test]
    fn constant_trace_is_degenerate() {
        let r = raftery_lewis(&[1.5; 5000], &RlParams::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.thin, r.burn_in, r.total), (1, 0, 3746));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn autocorrelation_raises_run_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let iid: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let mut x = 0.0;
        let ar: Vec<f64> = (0..20_000)
            .map(|_| {
                x = 0.95 * x + rng.gen::<f64>() - 0.5;
                x
            })
            .collect();
        let a = raftery_lewis(&iid, &RlParams::default()).unwrap();
        let b = raftery_lewis(&ar, &RlParams::default()).unwrap();
        assert!(b.total > a.total, "{a:?} {b:?}");
    }
}
