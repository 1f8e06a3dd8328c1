//! Experiment harness: trees per distribution, samples per tree and
//! sampling probability, every estimator on every sample, one CSV row each.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{empirical_estimator, kl_divergence, squared_errors, theta1, truncated_poisson, zipf};
use crate::enumeration::{NonIsoCatalog, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::exact::{estimate_exact_with_catalog, ExactConfig, MaximizeConfig};
use crate::mcmc::diagnostics::quantile;
use crate::mcmc::{estimate_approximate, McmcConfig, RlParams, RunLength, Theta0};
use crate::sampling::{build_sample, sample_nodes, SampleTree};
use crate::tree::{gw_generate, FullTree, OffspringDistribution};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
const RESULTS_FILE: &str = "results.csv";
const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistKind {
    Theta1,
    TruncPoisson { lambda: f64 },
    Zipf { alpha: f64 },
    Custom { theta: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: DistKind,
}

impl DistributionSpec {
    pub fn theta(&self, width: usize) -> Result<OffspringDistribution> {
        let theta = match &self.kind {
            DistKind::Theta1 => theta1(),
            DistKind::TruncPoisson { lambda } => truncated_poisson(*lambda, width)?,
            DistKind::Zipf { alpha } => zipf(*alpha, width)?,
            DistKind::Custom { theta } => OffspringDistribution::new(theta.clone())?,
        };
        if theta.width() != width {
            return Err(Error::Config(format!(
                "distribution {} has width {}, expected {width}",
                self.id,
                theta.width()
            )));
        }
        Ok(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Exact,
    Approx,
    Empirical { top_k: usize },
}

impl EstimatorKind {
    pub fn label(&self) -> String {
        match self {
            Self::Exact => "exact".into(),
            Self::Approx => "approx".into(),
            Self::Empirical { top_k } => format!("empirical_top{top_k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcOptions {
    pub theta0: Theta0,
    pub pilot: usize,
    pub max_samples: usize,
    pub run_length: Option<RunLength>,
    pub rl: RlParams,
}

impl Default for McmcOptions {
    fn default() -> Self {
        let c = McmcConfig::new(2);
        Self {
            theta0: c.theta0,
            pilot: c.pilot,
            max_samples: c.max_samples,
            run_length: c.run_length,
            rl: c.rl,
        }
    }
}

fn default_count() -> usize {
    10
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_starts() -> usize {
    MaximizeConfig::default().starts
}

fn default_retries() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub distributions: Vec<DistributionSpec>,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "L")]
    pub height: usize,
    pub p_grid: Vec<f64>,
    #[serde(default = "default_count")]
    pub trees_per_distribution: usize,
    #[serde(default = "default_count")]
    pub samples_per_tree: usize,
    pub estimators: Vec<EstimatorKind>,
    pub master_seed: u64,
    /// Random starts of the multistart maximizer.
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_budget")]
    pub catalog_budget: usize,
    #[serde(default)]
    pub catalog_dir: Option<PathBuf>,
    #[serde(default)]
    pub mcmc: McmcOptions,
    /// Redraws allowed when a sample observes no node.
    #[serde(default = "default_retries")]
    pub empty_sample_retries: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.distributions.is_empty() || self.p_grid.is_empty() || self.estimators.is_empty() {
            return bad("distributions, p_grid and estimators must be non-empty");
        }
        if self.width == 0 || self.height == 0 {
            return bad("W and L must be positive");
        }
        if self.trees_per_distribution == 0 || self.samples_per_tree == 0 {
            return bad("tree and sample counts must be positive");
        }
        if self.p_grid.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return bad("every p must lie in (0, 1]");
        }
        let mut ids = HashSet::new();
        for d in &self.distributions {
            if !ids.insert(&d.id) {
                return Err(Error::Config(format!("duplicate distribution id {}", d.id)));
            }
            d.theta(self.width)?;
        }
        Ok(())
    }

    pub fn dataset_count(&self) -> usize {
        self.distributions.len() * self.trees_per_distribution * self.p_grid.len() * self.samples_per_tree
    }
}

/// SplitMix64 finalizer applied to the master seed and each path component.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(master), |acc, &x| mix(acc ^ mix(x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset_id: usize,
    pub dist_id: String,
    pub tree_idx: usize,
    pub p: f64,
    pub sample_idx: usize,
    pub estimator: String,
    /// `None` when the estimator failed.
    pub theta_hat: Option<Vec<f64>>,
    pub kl: f64,
    pub se: Vec<f64>,
    pub wall_ms: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    /// Samples redrawn because they observed nothing.
    pub empty_resamples: usize,
}

impl ExperimentResult {
    /// Copy with wall times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.wall_ms = 0);
        r
    }

    pub fn rows_for<'a>(&'a self, estimator: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.estimator == estimator)
    }
}

struct Dataset {
    id: usize,
    dist_idx: usize,
    tree_idx: usize,
    p: f64,
    sample_idx: usize,
    seed: u64,
    sample: SampleTree,
}

fn make_datasets(spec: &ExperimentSpec, thetas: &[OffspringDistribution]) -> Result<(Vec<Dataset>, usize)> {
    let mut out = Vec::with_capacity(spec.dataset_count());
    let mut empties = 0;
    let mut id = 0;
    for (d, theta) in thetas.iter().enumerate() {
        for t in 0..spec.trees_per_distribution {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.master_seed, &[1, d as u64, t as u64]));
            let tree: FullTree = gw_generate(theta, spec.height, &mut rng)?;
            for (k, &p) in spec.p_grid.iter().enumerate() {
                for j in 0..spec.samples_per_tree {
                    let mut attempt = 0;
                    let (seed, sample) = loop {
                        let seed = derive_seed(
                            spec.master_seed,
                            &[2, d as u64, t as u64, k as u64, j as u64, attempt as u64],
                        );
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let nodes = sample_nodes(&tree, p, &mut rng)?;
                        match build_sample(&tree, &nodes, p) {
                            Ok(s) => break (seed, s),
                            Err(Error::EmptySample) if attempt < spec.empty_sample_retries => {
                                empties += 1;
                                attempt += 1;
                            }
                            Err(e) => return Err(e),
                        }
                    };
                    out.push(Dataset {
                        id,
                        dist_idx: d,
                        tree_idx: t,
                        p,
                        sample_idx: j,
                        seed,
                        sample,
                    });
                    id += 1;
                }
            }
        }
    }
    if empties > 0 {
        info!("redrew {empties} empty samples");
    }
    Ok((out, empties))
}

/// Runs the whole experiment in memory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_inner(spec, None, &HashSet::new(), Vec::new())
}

/// Runs the experiment, appending rows to `dir/results.csv` as they finish
/// and rewriting `dir/aggregate.csv` at the end. With `resume`, rows already
/// present in the results file are kept and their datasets skipped.
pub fn run_experiment_to(spec: &ExperimentSpec, dir: &Path, resume: bool) -> Result<ExperimentResult> {
    fs::create_dir_all(dir)?;
    let path = dir.join(RESULTS_FILE);
    let existing = if resume && path.exists() {
        read_results(&path, spec.width)?
    } else {
        Vec::new()
    };
    let done: HashSet<(usize, String)> = existing
        .iter()
        .map(|r| (r.dataset_id, r.estimator.clone()))
        .collect();
    let file = if resume && path.exists() {
        OpenOptions::new().append(true).open(&path)?
    } else {
        let mut f = File::create(&path)?;
        write_header(&mut f, spec.width)?;
        f
    };
    let writer = Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(file));
    let result = run_inner(spec, Some(&writer), &done, existing)?;
    writer.into_inner().expect("writer lock").flush()?;
    write_aggregate(&dir.join(AGGREGATE_FILE), &aggregate(&result.rows, spec.width))?;
    Ok(result)
}

fn run_inner(
    spec: &ExperimentSpec,
    writer: Option<&Mutex<csv::Writer<File>>>,
    done: &HashSet<(usize, String)>,
    existing: Vec<ResultRow>,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let thetas: Vec<OffspringDistribution> = spec
        .distributions
        .iter()
        .map(|d| d.theta(spec.width))
        .collect::<Result<_>>()?;
    let (datasets, empty_resamples) = make_datasets(spec, &thetas)?;

    let needs_catalog = spec.estimators.contains(&EstimatorKind::Exact) && spec.p_grid.iter().any(|&p| p < 1.0);
    let catalog: std::result::Result<Option<NonIsoCatalog>, String> = if needs_catalog {
        let built = match &spec.catalog_dir {
            Some(dir) => NonIsoCatalog::load_or_build(dir, spec.height, spec.width, spec.catalog_budget),
            None => NonIsoCatalog::enumerate(spec.height, spec.width, spec.catalog_budget),
        };
        built.map(Some).map_err(|e| {
            warn!("exact estimator unavailable: {e}");
            e.to_string()
        })
    } else {
        Ok(None)
    };

    let write_error: Mutex<Option<Error>> = Mutex::new(None);
    let mut rows: Vec<ResultRow> = datasets
        .par_iter()
        .flat_map_iter(|ds| {
            let theta = &thetas[ds.dist_idx];
            let mut out = Vec::new();
            for (e, est) in spec.estimators.iter().enumerate() {
                let label = est.label();
                if done.contains(&(ds.id, label.clone())) {
                    continue;
                }
                let start = Instant::now();
                let seed = derive_seed(ds.seed, &[3, e as u64]);
                let estimate = run_estimator(spec, *est, &ds.sample, seed, catalog.as_ref());
                let wall_ms = start.elapsed().as_millis() as u64;
                let row = match estimate {
                    Ok(hat) => ResultRow {
                        dataset_id: ds.id,
                        dist_id: spec.distributions[ds.dist_idx].id.clone(),
                        tree_idx: ds.tree_idx,
                        p: ds.p,
                        sample_idx: ds.sample_idx,
                        estimator: label,
                        kl: kl_divergence(theta, &hat).unwrap_or(f64::NAN),
                        se: squared_errors(hat.probs(), theta.probs()),
                        theta_hat: Some(hat.probs().to_vec()),
                        wall_ms,
                        seed,
                    },
                    Err(err) => {
                        warn!("dataset {} estimator {label}: {err}", ds.id);
                        ResultRow {
                            dataset_id: ds.id,
                            dist_id: spec.distributions[ds.dist_idx].id.clone(),
                            tree_idx: ds.tree_idx,
                            p: ds.p,
                            sample_idx: ds.sample_idx,
                            estimator: label,
                            theta_hat: None,
                            kl: f64::NAN,
                            se: vec![f64::NAN; spec.width],
                            wall_ms,
                            seed,
                        }
                    }
                };
                if let Some(w) = writer {
                    let mut w = w.lock().expect("writer lock");
                    let res = w
                        .write_record(row_record(&row))
                        .map_err(Error::from)
                        .and_then(|_| w.flush().map_err(Error::from));
                    if let Err(e) = res {
                        write_error.lock().expect("error lock").get_or_insert(e);
                    }
                }
                out.push(row);
            }
            out
        })
        .collect();
    if let Some(e) = write_error.into_inner().expect("error lock") {
        return Err(e);
    }
    rows.extend(existing);
    let order: Vec<String> = spec.estimators.iter().map(EstimatorKind::label).collect();
    let rank = |l: &str| order.iter().position(|o| o == l).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        a.dataset_id
            .cmp(&b.dataset_id)
            .then(rank(&a.estimator).cmp(&rank(&b.estimator)))
    });
    Ok(ExperimentResult {
        rows,
        empty_resamples,
    })
}

fn run_estimator(
    spec: &ExperimentSpec,
    est: EstimatorKind,
    s: &SampleTree,
    seed: u64,
    catalog: std::result::Result<&Option<NonIsoCatalog>, &String>,
) -> Result<OffspringDistribution> {
    let maximize = MaximizeConfig {
        starts: spec.starts,
        seed,
        ..MaximizeConfig::default()
    };
    match est {
        EstimatorKind::Exact => {
            if s.p() >= 1.0 {
                let mut cfg = ExactConfig::new(spec.width);
                cfg.maximize = maximize;
                return Ok(crate::exact::estimate_exact(s, &cfg)?.theta);
            }
            match catalog {
                Ok(Some(c)) => Ok(estimate_exact_with_catalog(s, c, &maximize)?.theta),
                Ok(None) => Err(Error::Config("catalog missing".into())),
                Err(msg) => Err(Error::Config(msg.clone())),
            }
        }
        EstimatorKind::Approx => {
            let cfg = McmcConfig {
                width: spec.width,
                theta0: spec.mcmc.theta0.clone(),
                seed,
                pilot: spec.mcmc.pilot,
                rl: spec.mcmc.rl,
                max_samples: spec.mcmc.max_samples,
                run_length: spec.mcmc.run_length,
                maximize,
            };
            Ok(estimate_approximate(s, &cfg)?.theta)
        }
        EstimatorKind::Empirical { top_k } => empirical_estimator(s, top_k, spec.width),
    }
}

fn header(width: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "dataset_id",
        "dist_id",
        "tree_idx",
        "p",
        "sample_idx",
        "estimator",
        "theta_hat",
        "kl",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=width).map(|i| format!("se_{i}")));
    h.push("wall_ms".into());
    h.push("seed".into());
    h
}

fn write_header(f: &mut File, width: usize) -> Result<()> {
    writeln!(f, "# schema_version={RESULTS_SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header(width))?;
    w.flush()?;
    Ok(())
}

fn row_record(r: &ResultRow) -> Vec<String> {
    let mut v = vec![
        r.dataset_id.to_string(),
        r.dist_id.clone(),
        r.tree_idx.to_string(),
        r.p.to_string(),
        r.sample_idx.to_string(),
        r.estimator.clone(),
        r.theta_hat
            .as_ref()
            .map(|t| t.iter().map(f64::to_string).collect::<Vec<_>>().join(";"))
            .unwrap_or_default(),
        r.kl.to_string(),
    ];
    v.extend(r.se.iter().map(f64::to_string));
    v.push(r.wall_ms.to_string());
    v.push(r.seed.to_string());
    v
}

/// Reads a results file written by [`run_experiment_to`].
pub fn read_results(path: &Path, width: usize) -> Result<Vec<ResultRow>> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let expected = format!("# schema_version={RESULTS_SCHEMA_VERSION}");
    if first.trim_end() != expected {
        return Err(Error::Config(format!(
            "{} does not start with '{expected}'",
            path.display()
        )));
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let head: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if head != header(width) {
        return Err(Error::Config(format!("unexpected columns in {}", path.display())));
    }
    let parse_err = |what: &str| Error::Config(format!("bad {what} in {}", path.display()));
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).ok_or_else(|| parse_err("row"));
        let num = |i: usize, what: &str| -> Result<f64> { f(i)?.parse().map_err(|_| parse_err(what)) };
        let int = |i: usize, what: &str| -> Result<u64> { f(i)?.parse().map_err(|_| parse_err(what)) };
        let theta_hat = match f(6)? {
            "" => None,
            s => Some(
                s.split(';')
                    .map(|x| x.parse().map_err(|_| parse_err("theta_hat")))
                    .collect::<Result<Vec<f64>>>()?,
            ),
        };
        rows.push(ResultRow {
            dataset_id: int(0, "dataset_id")? as usize,
            dist_id: f(1)?.to_string(),
            tree_idx: int(2, "tree_idx")? as usize,
            p: num(3, "p")?,
            sample_idx: int(4, "sample_idx")? as usize,
            estimator: f(5)?.to_string(),
            theta_hat,
            kl: num(7, "kl")?,
            se: (0..width).map(|i| num(8 + i, "se")).collect::<Result<_>>()?,
            wall_ms: int(8 + width, "wall_ms")?,
            seed: int(9 + width, "seed")?,
        });
    }
    Ok(rows)
}

/// Five-number summary of one quantity in one (distribution, p, estimator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dist_id: String,
    pub p: f64,
    pub estimator: String,
    /// `kl` or `se_i`.
    pub parameter: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Summaries of KL and of each squared error per cell; failed rows are skipped.
pub fn aggregate(rows: &[ResultRow], width: usize) -> Vec<AggregateRow> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.dist_id
            .cmp(&b.dist_id)
            .then(a.p.total_cmp(&b.p))
            .then(a.estimator.cmp(&b.estimator))
    });
    let mut out = Vec::new();
    for cell in sorted.chunk_by(|a, b| a.dist_id == b.dist_id && a.p == b.p && a.estimator == b.estimator) {
        let ok: Vec<&&ResultRow> = cell.iter().filter(|r| r.theta_hat.is_some()).collect();
        if ok.is_empty() {
            continue;
        }
        let mut columns: Vec<(String, Vec<f64>)> = vec![("kl".into(), ok.iter().map(|r| r.kl).collect())];
        for i in 0..width {
            columns.push((format!("se_{}", i + 1), ok.iter().map(|r| r.se[i]).collect()));
        }
        for (parameter, values) in columns {
            out.push(AggregateRow {
                dist_id: cell[0].dist_id.clone(),
                p: cell[0].p,
                estimator: cell[0].estimator.clone(),
                parameter,
                n: values.len(),
                min: quantile(&values, 0.0),
                q1: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q3: quantile(&values, 0.75),
                max: quantile(&values, 1.0),
            });
        }
    }
    out
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
