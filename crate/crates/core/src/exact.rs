//! Exact likelihood over the non-isomorphic catalog and its maximization.
//!
//! `P(S|θ) = Σ_i m_i P(S|G_i) P(G_i|θ)` is grouped by offspring census into
//! rows `c_j Π_i θ_i^{x_ji}` and maximized over the softmax parameters `α`
//! with `α_W` pinned to 1.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enumeration::{tree_multiplicity, NonIsoCatalog, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softmax};
use crate::optimize::{minimize, BfgsConfig};
use crate::sampling::{ln_biguint, ln_selection, MappingCounter, SampleTree};
use crate::tree::{OffspringCensus, OffspringDistribution};

/// Value at which the last softmax parameter is pinned.
pub const PINNED_ALPHA: f64 = 1.0;

/// One grouped term `c_j Π_i θ_i^{x_ji}` with `y_j = Σ_i x_ji`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRow {
    pub ln_coefficient: f64,
    pub exponents: OffspringCensus,
    pub total: u64,
}

/// Likelihood `l(θ) = Σ_j c_j Π_i θ_i^{x_ji}` as a table of grouped terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LikelihoodTermTable {
    rows: Vec<TermRow>,
    width: usize,
}

impl LikelihoodTermTable {
    /// Groups `(ln coefficient, census)` pairs by census, summing
    /// coefficients in log space. Terms at `-∞` are dropped.
    pub fn from_terms<I>(width: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (f64, OffspringCensus)>,
    {
        let mut groups: BTreeMap<OffspringCensus, Vec<f64>> = BTreeMap::new();
        for (ln_c, census) in terms {
            if ln_c == f64::NEG_INFINITY {
                continue;
            }
            debug_assert_eq!(census.width(), width);
            groups.entry(census).or_default().push(ln_c);
        }
        let rows = groups
            .into_iter()
            .map(|(census, coefs)| TermRow {
                ln_coefficient: log_sum_exp(&coefs),
                total: census.internal_nodes(),
                exponents: census,
            })
            .collect();
        Self { rows, width }
    }

    pub fn rows(&self) -> &[TermRow] {
        &self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `log l(θ)` evaluated directly on the simplex.
    pub fn ln_likelihood(&self, theta: &OffspringDistribution) -> f64 {
        let terms: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.ln_coefficient + r.exponents.log_prob_unchecked(theta.probs()))
            .collect();
        log_sum_exp(&terms)
    }
}

/// Unconstrained parameters `α_1..α_{W-1}`; `α_W` is pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaVector(pub Vec<f64>);

impl AlphaVector {
    pub fn width(&self) -> usize {
        self.0.len() + 1
    }

    /// Full `α` including the pinned last entry.
    fn full(&self) -> Vec<f64> {
        let mut a = self.0.clone();
        a.push(PINNED_ALPHA);
        a
    }

    /// `θ_i = e^{α_i}/Z`.
    pub fn theta(&self) -> OffspringDistribution {
        OffspringDistribution::from_weights(&softmax(&self.full()))
            .expect("softmax output lies on the simplex")
    }

    /// Inverse of [`AlphaVector::theta`] for strictly positive `θ`.
    pub fn from_theta(theta: &OffspringDistribution) -> Self {
        let p = theta.probs();
        let last = p[p.len() - 1].ln();
        Self(
            p[..p.len() - 1]
                .iter()
                .map(|x| x.ln() - last + PINNED_ALPHA)
                .collect(),
        )
    }
}

fn row_terms(alpha_full: &[f64], ln_z: f64, table: &LikelihoodTermTable) -> Vec<f64> {
    table
        .rows
        .iter()
        .map(|r| {
            let lin: f64 = r
                .exponents
                .counts()
                .iter()
                .zip(alpha_full)
                .map(|(x, a)| *x as f64 * a)
                .sum();
            r.ln_coefficient + lin - r.total as f64 * ln_z
        })
        .collect()
}

/// `log l(α) = logsumexp_j (log c_j + Σ_i x_ji α_i − y_j log Z)`.
pub fn objective(alpha: &AlphaVector, table: &LikelihoodTermTable) -> f64 {
    let full = alpha.full();
    let ln_z = log_sum_exp(&full);
    log_sum_exp(&row_terms(&full, ln_z, table))
}

/// Gradient of [`objective`] with respect to `α_1..α_{W-1}`:
/// `Σ_j w_j (x_ji − y_j θ_i)` with `w` the normalized row weights.
pub fn gradient(alpha: &AlphaVector, table: &LikelihoodTermTable) -> Vec<f64> {
    value_and_gradient(alpha, table).1
}

pub fn value_and_gradient(alpha: &AlphaVector, table: &LikelihoodTermTable) -> (f64, Vec<f64>) {
    let full = alpha.full();
    let ln_z = log_sum_exp(&full);
    let terms = row_terms(&full, ln_z, table);
    let value = log_sum_exp(&terms);
    let n = alpha.0.len();
    if value == f64::NEG_INFINITY {
        return (value, vec![0.0; n]);
    }
    let theta: Vec<f64> = full[..n].iter().map(|a| (a - ln_z).exp()).collect();
    let mut grad = vec![0.0; n];
    for (row, t) in table.rows.iter().zip(&terms) {
        let w = (t - value).exp();
        if w == 0.0 {
            continue;
        }
        let counts = row.exponents.counts();
        for i in 0..n {
            grad[i] += w * (counts[i] as f64 - row.total as f64 * theta[i]);
        }
    }
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximizeConfig {
    /// Number of uniformly sampled starting points.
    pub starts: usize,
    /// Starts are drawn from `[-box, box]^{W-1}`.
    pub box_half_width: f64,
    /// How many of the best starts are refined with BFGS.
    pub refine_top: usize,
    pub bfgs: BfgsConfig,
    pub seed: u64,
}

impl Default for MaximizeConfig {
    fn default() -> Self {
        Self {
            starts: 10_000,
            box_half_width: 10.0,
            refine_top: 1,
            bfgs: BfgsConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaximizeResult {
    pub alpha: AlphaVector,
    pub theta: OffspringDistribution,
    /// `log l` at the optimum.
    pub objective: f64,
    /// Best `log l` among the raw starts.
    pub best_start_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Multistart maximization of [`objective`]: evaluate random starts, refine
/// the best ones with BFGS, keep the best refined point (ties go to the
/// lowest start index).
pub fn maximize(table: &LikelihoodTermTable, config: &MaximizeConfig) -> Result<MaximizeResult> {
    if table.is_empty() {
        return Err(Error::Config("empty likelihood table".into()));
    }
    let dim = table.width() - 1;
    if dim == 0 {
        let alpha = AlphaVector(Vec::new());
        let value = objective(&alpha, table);
        return Ok(MaximizeResult {
            theta: alpha.theta(),
            alpha,
            objective: value,
            best_start_objective: value,
            iterations: 0,
            converged: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = config.box_half_width;
    let starts: Vec<Vec<f64>> = (0..config.starts.max(1))
        .map(|_| (0..dim).map(|_| rng.gen_range(-h..=h)).collect())
        .collect();
    let values: Vec<f64> = starts
        .par_iter()
        .map(|a| objective(&AlphaVector(a.clone()), table))
        .collect();
    let mut order: Vec<usize> = (0..starts.len()).filter(|&i| values[i].is_finite()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(config.refine_top.max(1));
    let best_start_objective = order.first().map_or(f64::NEG_INFINITY, |&i| values[i]);

    let mut best: Option<(usize, MaximizeResult)> = None;
    for &i in &order {
        let Some(r) = minimize(
            |x| {
                let (v, g) = value_and_gradient(&AlphaVector(x.to_vec()), table);
                (-v, g.into_iter().map(|x| -x).collect())
            },
            &starts[i],
            &config.bfgs,
        ) else {
            continue;
        };
        let (alpha, value) = if -r.f >= values[i] {
            (AlphaVector(r.x), -r.f)
        } else {
            (AlphaVector(starts[i].clone()), values[i])
        };
        let candidate = MaximizeResult {
            theta: alpha.theta(),
            alpha,
            objective: value,
            best_start_objective,
            iterations: r.iterations,
            converged: r.converged,
        };
        let better = match &best {
            None => true,
            Some((_, b)) => candidate.objective > b.objective,
        };
        if better {
            best = Some((i, candidate));
        }
    }
    best.map(|(_, r)| r).ok_or(Error::AllStartsFailed)
}

/// Groups `Σ_i m_i P(S|G_i) P(G_i|θ)` over the top level of `catalog`.
pub fn build_term_table(s: &SampleTree, catalog: &NonIsoCatalog) -> Result<LikelihoodTermTable> {
    let (height, width) = (catalog.height(), catalog.width());
    if s.height() != height {
        return Err(Error::InconsistentSample {
            height,
            width,
            reason: format!("sample has L={}", s.height()),
        });
    }
    check_degrees(s, height, width)?;
    let counter = MappingCounter::new(s.tree());
    let observed = s.observed_count();
    let p = s.p();
    let terms: Vec<(f64, OffspringCensus)> = catalog
        .entries()
        .par_iter()
        .map(|entry| {
            let g = catalog.materialize(height, entry.id);
            let ln_c = counter.ln_count(&g);
            let ln_term = if ln_c == f64::NEG_INFINITY {
                ln_c
            } else {
                ln_biguint(&entry.multiplicity) + ln_c + ln_selection(observed, entry.size, p)
            };
            (ln_term, entry.census.clone())
        })
        .collect();
    finish(LikelihoodTermTable::from_terms(width, terms), height, width)
}

/// Term table of a fully observed sample (`p = 1`). Only trees isomorphic to
/// the sample contribute, so no catalog is needed.
pub fn build_complete_term_table(s: &SampleTree, width: usize) -> Result<LikelihoodTermTable> {
    let height = s.height();
    if s.p() < 1.0 {
        return Err(Error::Config("complete term table requires p = 1".into()));
    }
    check_degrees(s, height, width)?;
    let tree = s.tree();
    if tree.node_ids().any(|v| tree.degree(v) == 0 && tree.depth(v) != height) {
        return Err(Error::InconsistentSample {
            height,
            width,
            reason: "p = 1 but some sample leaf is above depth L".into(),
        });
    }
    let ln_c = MappingCounter::new(tree).ln_count(tree);
    let ln_term = ln_biguint(&tree_multiplicity(tree)) + ln_c + ln_selection(s.observed_count(), tree.len(), 1.0);
    let census = tree.census(width)?;
    finish(
        LikelihoodTermTable::from_terms(width, [(ln_term, census)]),
        height,
        width,
    )
}

fn check_degrees(s: &SampleTree, height: usize, width: usize) -> Result<()> {
    let max = s.tree().max_degree();
    if max > width {
        return Err(Error::InconsistentSample {
            height,
            width,
            reason: format!("sample node has {max} children"),
        });
    }
    Ok(())
}

fn finish(table: LikelihoodTermTable, height: usize, width: usize) -> Result<LikelihoodTermTable> {
    if table.is_empty() {
        return Err(Error::InconsistentSample {
            height,
            width,
            reason: "no tree in the space embeds the sample".into(),
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactConfig {
    pub width: usize,
    /// Maximum catalog size before giving up with a capacity error.
    pub budget: usize,
    /// Where catalogs are cached; `None` enumerates in memory.
    pub catalog_dir: Option<PathBuf>,
    pub maximize: MaximizeConfig,
}

impl ExactConfig {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            budget: DEFAULT_BUDGET,
            catalog_dir: None,
            maximize: MaximizeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactEstimate {
    pub theta: OffspringDistribution,
    pub objective: f64,
    pub rows: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// `θ̂ = argmax_θ P(S|θ)` using an already enumerated catalog.
pub fn estimate_exact_with_catalog(
    s: &SampleTree,
    catalog: &NonIsoCatalog,
    config: &MaximizeConfig,
) -> Result<ExactEstimate> {
    let table = if s.p() >= 1.0 {
        build_complete_term_table(s, catalog.width())?
    } else {
        build_term_table(s, catalog)?
    };
    estimate_from_table(&table, config)
}

fn estimate_from_table(table: &LikelihoodTermTable, config: &MaximizeConfig) -> Result<ExactEstimate> {
    let r = maximize(table, config)?;
    Ok(ExactEstimate {
        theta: r.theta,
        objective: r.objective,
        rows: table.len(),
        iterations: r.iterations,
        converged: r.converged,
    })
}

/// `θ̂ = argmax_θ P(S|θ)`, enumerating (or loading) the catalog for the
/// sample's `(L, W)`.
pub fn estimate_exact(s: &SampleTree, config: &ExactConfig) -> Result<ExactEstimate> {
    if s.p() >= 1.0 {
        let table = build_complete_term_table(s, config.width)?;
        return estimate_from_table(&table, &config.maximize);
    }
    let catalog = match &config.catalog_dir {
        Some(dir) => NonIsoCatalog::load_or_build(dir, s.height(), config.width, config.budget)?,
        None => NonIsoCatalog::enumerate(s.height(), config.width, config.budget)?,
    };
    estimate_exact_with_catalog(s, &catalog, &config.maximize)
}
