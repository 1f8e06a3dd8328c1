//! Log-space reductions.

/// `log Σ exp(v)`; `-∞` for an empty slice or all `-∞` inputs.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + pairwise_sum_exp(values, max).ln()
}

/// `Σ exp(v - shift)` with pairwise summation.
fn pairwise_sum_exp(values: &[f64], shift: f64) -> f64 {
    if values.len() <= 8 {
        return values.iter().map(|v| (v - shift).exp()).sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum_exp(a, shift) + pairwise_sum_exp(b, shift)
}

/// Softmax weights of `values` (all zero if every value is `-∞`).
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    if lse == f64::NEG_INFINITY {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_moderate_values() {
        let v: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn survives_extreme_magnitudes() {
        let v = [-1000.0, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
