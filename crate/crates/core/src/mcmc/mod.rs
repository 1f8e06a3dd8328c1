//! Approximate maximum likelihood by Metropolis-Hastings over trees
//! consistent with the sample, followed by importance-weighted maximization.

pub mod chain;
pub mod diagnostics;
pub mod importance;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{maximize, MaximizeConfig};
use crate::sampling::SampleTree;
use crate::tree::OffspringDistribution;

pub use chain::{Action, Chain, ChainRun, ChainSample, ChainState, ProposalOutcome};
pub use diagnostics::{raftery_lewis, RlParams, RlResult};
pub use importance::{importance_objective, importance_table, shifted_binomial, theta0_from_sample};

/// How the proposal distribution θ₀ is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Theta0 {
    Uniform,
    /// Shifted binomial matched to the mean observed degree of the top
    /// `levels` sample levels.
    FromSample { levels: usize },
    Explicit { theta: OffspringDistribution },
}

/// Fixed run lengths that bypass the pilot run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLength {
    pub burn_in: usize,
    pub thin: usize,
    /// Number of recorded states m.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub width: usize,
    pub theta0: Theta0,
    pub seed: u64,
    /// Length of the pilot run fed to the Raftery-Lewis diagnostic.
    pub pilot: usize,
    pub rl: RlParams,
    /// Upper bound on recorded states after the diagnostic.
    pub max_samples: usize,
    /// Skip the pilot and use these lengths.
    pub run_length: Option<RunLength>,
    pub maximize: MaximizeConfig,
}

impl McmcConfig {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            theta0: Theta0::Uniform,
            seed: 0,
            pilot: 10_000,
            rl: RlParams::default(),
            max_samples: 500_000,
            run_length: None,
            maximize: MaximizeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 {
            return Err(Error::Config("MCMC needs W ≥ 2".into()));
        }
        if self.pilot == 0 || self.max_samples == 0 {
            return Err(Error::Config("pilot and max_samples must be positive".into()));
        }
        if let Some(r) = self.run_length {
            if r.thin == 0 || r.samples == 0 {
                return Err(Error::Config("thin and samples must be positive".into()));
            }
        }
        if let Theta0::Explicit { theta } = &self.theta0 {
            if theta.width() != self.width {
                return Err(Error::Config(format!(
                    "θ₀ has width {}, expected {}",
                    theta.width(),
                    self.width
                )));
            }
        }
        Ok(())
    }

    pub fn resolve_theta0(&self, s: &SampleTree) -> Result<OffspringDistribution> {
        match &self.theta0 {
            Theta0::Uniform => OffspringDistribution::uniform(self.width),
            Theta0::FromSample { levels } => theta0_from_sample(s, self.width, *levels),
            Theta0::Explicit { theta } => Ok(theta.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproximateEstimate {
    pub theta: OffspringDistribution,
    /// `log Σ_i P(G_i|θ̂)/P(G_i|θ₀)`.
    pub objective: f64,
    pub theta0: OffspringDistribution,
    pub run_length: RunLength,
    /// Diagnostic output, absent when the run length was given.
    pub rl: Option<RlResult>,
    pub acceptance_rate: f64,
    pub distinct_censuses: usize,
}

/// Maps a diagnostic result onto a run: burn-in `M`, thinning `k` and `N`
/// recorded states, capped at `max_samples`.
pub fn run_length_from_rl(rl: &RlResult, max_samples: usize) -> RunLength {
    RunLength {
        burn_in: rl.burn_in,
        thin: rl.thin.max(1),
        samples: rl.total.clamp(1, max_samples),
    }
}

/// Draws tree samples from `g(G) ∝ P(S|G)P(G|θ₀)` and returns them with the
/// run length used.
pub fn sample_trees(
    s: &SampleTree,
    config: &McmcConfig,
) -> Result<(ChainRun, OffspringDistribution, RunLength, Option<RlResult>)> {
    config.validate()?;
    let theta0 = config.resolve_theta0(s)?;
    let mut chain = Chain::new(s, &theta0, config.seed)?;
    let (length, rl) = match config.run_length {
        Some(r) => (r, None),
        None => {
            let pilot = chain.run(0, 1, config.pilot);
            let trace: Vec<f64> = pilot.samples.iter().map(|x| x.ln_target).collect();
            let rl = raftery_lewis(&trace, &config.rl)?;
            (run_length_from_rl(&rl, config.max_samples), Some(rl))
        }
    };
    let run = chain.run(length.burn_in, length.thin, length.samples);
    Ok((run, theta0, length, rl))
}

/// `θ̂ = argmax_θ Σ_i P(G_i|θ)/P(G_i|θ₀)` over chain samples `G_i`.
pub fn estimate_approximate(s: &SampleTree, config: &McmcConfig) -> Result<ApproximateEstimate> {
    let (run, theta0, run_length, rl) = sample_trees(s, config)?;
    let table = importance_table(&run.samples)?;
    let r = maximize(&table, &config.maximize)?;
    Ok(ApproximateEstimate {
        theta: r.theta,
        objective: r.objective,
        theta0,
        run_length,
        rl,
        acceptance_rate: run.acceptance_rate,
        distinct_censuses: table.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::build_sample;
    use crate::tree::gw_generate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_sample(seed: u64) -> SampleTree {
        let theta = OffspringDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gw_generate(&theta, 3, &mut rng).unwrap();
        let obs: Vec<usize> = g.tree().node_ids().filter(|v| v % 3 == 0).collect();
        build_sample(&g, &obs, 0.3).unwrap()
    }

    #[test]
    fn explicit_run_length_is_used() {
        let s = small_sample(1);
        let mut cfg = McmcConfig::new(3);
        cfg.run_length = Some(RunLength { burn_in: 100, thin: 2, samples: 500 });
        cfg.maximize.starts = 100;
        let est = estimate_approximate(&s, &cfg).unwrap();
        assert!(est.rl.is_none());
        assert_eq!(est.run_length.samples, 500);
        assert!((est.theta.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(est.acceptance_rate > 0.0 && est.acceptance_rate < 1.0);
    }

    #[test]
    fn pilot_feeds_diagnostic() {
        let s = small_sample(2);
        let mut cfg = McmcConfig::new(3);
        cfg.max_samples = 2_000;
        cfg.maximize.starts = 50;
        let est = estimate_approximate(&s, &cfg).unwrap();
        let rl = est.rl.unwrap();
        assert!(rl.total >= rl.n_min || rl.degenerate);
        assert!(est.run_length.samples <= 2_000);
    }

    #[test]
    fn config_rejects_width_one() {
        assert!(McmcConfig::new(1).validate().is_err());
    }
}
