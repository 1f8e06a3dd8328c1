//! Importance-weighted likelihood from chain samples, and the choice of θ₀.

use log::warn;
use statrs::distribution::{Binomial, Discrete};

use crate::error::{Error, Result};
use crate::exact::LikelihoodTermTable;
use crate::mcmc::chain::ChainSample;
use crate::sampling::SampleTree;
use crate::tree::{OffspringDistribution, Tree};

/// One term per sample: coefficient `1/P(G_i|θ₀)`, exponents the census of
/// `G_i`. Samples sharing a census are merged.
pub fn importance_table(samples: &[ChainSample]) -> Result<LikelihoodTermTable> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("no chain samples".into()))?;
    let width = first.census.width();
    Ok(LikelihoodTermTable::from_terms(
        width,
        samples.iter().map(|s| (-s.ln_prior, s.census.clone())),
    ))
}

/// `log Σ_i P(G_i|θ)/P(G_i|θ₀)`.
pub fn importance_objective(theta: &OffspringDistribution, samples: &[ChainSample]) -> Result<f64> {
    Ok(importance_table(samples)?.ln_likelihood(theta))
}

/// `1 + Binomial(W−1, (mean−1)/(W−1))` on `{1..W}`, whose mean is `mean`.
pub fn shifted_binomial(width: usize, mean: f64) -> Result<OffspringDistribution> {
    if width == 0 {
        return Err(Error::InvalidDistribution("W must be at least 1".into()));
    }
    if width == 1 {
        return OffspringDistribution::new(vec![1.0]);
    }
    if !(1.0..=width as f64).contains(&mean) {
        return Err(Error::InvalidDistribution(format!(
            "mean {mean} outside [1, {width}]"
        )));
    }
    let n = (width - 1) as u64;
    let q = (mean - 1.0) / n as f64;
    let binom = Binomial::new(q, n).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let weights: Vec<f64> = (0..=n).map(|k| binom.pmf(k)).collect();
    OffspringDistribution::from_weights(&weights)
}

/// Margin kept between the fitted mean and the ends of `[1, W]`, so that
/// every offspring count keeps positive mass under θ₀.
pub const MEAN_MARGIN: f64 = 0.05;

/// Mean child count of the internal sample nodes in the top `levels` levels.
pub fn top_level_mean_degree(tree: &Tree, levels: usize) -> Option<f64> {
    let (sum, n) = tree
        .node_ids()
        .filter(|&v| tree.depth(v) < levels && tree.degree(v) > 0)
        .fold((0usize, 0usize), |(s, n), v| (s + tree.degree(v), n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

/// Shifted binomial θ₀ whose mean matches the observed degree of the top
/// `levels` levels of the sample. Falls back to uniform when those levels
/// hold no internal node.
pub fn theta0_from_sample(s: &SampleTree, width: usize, levels: usize) -> Result<OffspringDistribution> {
    if width <= 1 {
        return OffspringDistribution::uniform(width.max(1));
    }
    let Some(mean) = top_level_mean_degree(s.tree(), levels) else {
        warn!("no internal sample node in the top {levels} levels; using a uniform θ₀");
        return OffspringDistribution::uniform(width);
    };
    let clamped = mean.clamp(1.0 + MEAN_MARGIN, width as f64 - MEAN_MARGIN);
    shifted_binomial(width, clamped)
}
