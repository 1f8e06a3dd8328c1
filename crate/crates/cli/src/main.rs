use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use gw_core::enumeration::{NonIsoCatalog, DEFAULT_BUDGET};
use gw_core::evaluation::{
    empirical_estimator, run_experiment_to, theta1, truncated_poisson, zipf, ExperimentSpec,
};
use gw_core::exact::{estimate_exact, ExactConfig, MaximizeConfig};
use gw_core::io::{read_sample, read_tree, write_sample, write_tree};
use gw_core::mcmc::{estimate_approximate, sample_trees, McmcConfig, RunLength, Theta0};
use gw_core::sampling::{build_sample, sample_nodes};
use gw_core::tree::gw_generate;
use gw_core::{Error, OffspringDistribution};

const EXIT_USAGE: u8 = 2;
const EXIT_CAPACITY: u8 = 3;
const EXIT_INCONSISTENT: u8 = 4;

#[derive(Parser)]
#[command(name = "gwest", version, about = "Estimate Galton-Watson offspring distributions from sampled root paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a Galton-Watson tree and write it as JSON.
    Generate(GenerateArgs),
    /// Observe nodes of a tree with probability p and write the sample.
    Sample(SampleArgs),
    /// Estimate the offspring distribution from a sample.
    Estimate(EstimateArgs),
    /// Run an experiment spec and write results.csv and aggregate.csv.
    Experiment(ExperimentArgs),
    /// Enumerate and cache the non-isomorphic tree catalog for (L, W).
    Catalog(CatalogArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NamedDist {
    Theta1,
    TruncPoisson,
    Zipf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Comma-separated offspring probabilities for 1..W children.
    #[arg(long, value_delimiter = ',', conflicts_with = "dist")]
    theta: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    dist: Option<NamedDist>,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.132)]
    alpha: f64,
    #[arg(long = "W")]
    width: Option<usize>,
    /// Number of generations below the root.
    #[arg(long = "L")]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Redraws allowed when nothing is observed.
    #[arg(long, default_value_t = 1000)]
    retries: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Mcmc,
    Empirical,
}

#[derive(Clone, Copy, ValueEnum)]
enum Theta0Choice {
    Uniform,
    Sample,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Maximum number of children.
    #[arg(long = "W")]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random starts of the maximizer.
    #[arg(long, default_value_t = MaximizeConfig::default().starts)]
    starts: usize,
    /// Levels used by the empirical estimator.
    #[arg(long, default_value_t = 2)]
    top_k: usize,
    #[arg(long, env = "GW_CATALOG_DIR")]
    catalog_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    theta0: Theta0Choice,
    /// Levels used to fit θ₀ with `--theta0 sample`.
    #[arg(long, default_value_t = 2)]
    theta0_levels: usize,
    #[arg(long, default_value_t = 10_000)]
    pilot: usize,
    #[arg(long, default_value_t = 500_000)]
    max_samples: usize,
    /// Fixed burn-in; with --thin and --samples, skips the pilot run.
    #[arg(long, requires_all = ["thin", "samples"])]
    burn_in: Option<usize>,
    #[arg(long, requires_all = ["burn_in", "samples"])]
    thin: Option<usize>,
    #[arg(long, requires_all = ["burn_in", "thin"])]
    samples: Option<usize>,
    /// Write the chain trace as CSV (mcmc only).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Keep rows already in results.csv and skip their datasets.
    #[arg(long)]
    resume: bool,
    #[arg(long, env = "GW_CATALOG_DIR")]
    catalog_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CatalogArgs {
    #[arg(long = "L")]
    height: usize,
    #[arg(long = "W")]
    width: usize,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long, env = "GW_CATALOG_DIR")]
    dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Capacity { .. }) => EXIT_CAPACITY,
        Some(
            Error::InconsistentSample { .. }
            | Error::InvalidTree(_)
            | Error::DegreeExceedsWidth { .. }
            | Error::EmptySample
            | Error::NoInternalNodes { .. },
        ) => EXIT_INCONSISTENT,
        Some(Error::InvalidDistribution(_) | Error::Config(_)) => EXIT_USAGE,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Sample(a) => sample(a),
        Command::Estimate(a) => estimate(a),
        Command::Experiment(a) => experiment(a),
        Command::Catalog(a) => catalog(a),
    }
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let theta = match (&a.theta, a.dist) {
        (Some(t), _) => OffspringDistribution::new(t.clone())?,
        (None, Some(NamedDist::Theta1)) => theta1(),
        (None, Some(d)) => {
            let Some(w) = a.width else {
                return Err(Error::Config("--W is required with --dist".into()).into());
            };
            match d {
                NamedDist::TruncPoisson => truncated_poisson(a.lambda, w)?,
                _ => zipf(a.alpha, w)?,
            }
        }
        (None, None) => return Err(Error::Config("give --theta or --dist".into()).into()),
    };
    if let Some(w) = a.width {
        if w != theta.width() {
            return Err(Error::Config(format!("θ has {} entries but --W is {w}", theta.width())).into());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let g = gw_generate(&theta, a.height, &mut rng)?;
    write_tree(&a.out, &g).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} nodes", g.len());
    Ok(())
}

fn sample(a: SampleArgs) -> anyhow::Result<()> {
    let g = read_tree(&a.tree).with_context(|| format!("reading {}", a.tree.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for _ in 0..=a.retries {
        let nodes = sample_nodes(&g, a.p, &mut rng)?;
        match build_sample(&g, &nodes, a.p) {
            Ok(s) => {
                write_sample(&a.out, &s).with_context(|| format!("writing {}", a.out.display()))?;
                println!("{} observed, {} sample nodes", s.observed_count(), s.len());
                return Ok(());
            }
            Err(Error::EmptySample) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(anyhow::Error::new(Error::EmptySample).context(format!("no node observed in {} draws", a.retries + 1)))
}

fn estimate(a: EstimateArgs) -> anyhow::Result<()> {
    let s = read_sample(&a.sample).with_context(|| format!("reading {}", a.sample.display()))?;
    let maximize = MaximizeConfig {
        starts: a.starts,
        seed: a.seed,
        ..MaximizeConfig::default()
    };
    let report = match a.method {
        Method::Exact => {
            let cfg = ExactConfig {
                width: a.width,
                budget: a.budget,
                catalog_dir: a.catalog_dir.clone(),
                maximize,
            };
            let est = estimate_exact(&s, &cfg)?;
            json!({
                "method": "exact",
                "theta": est.theta,
                "objective": est.objective,
                "terms": est.rows,
                "iterations": est.iterations,
                "converged": est.converged,
            })
        }
        Method::Mcmc => {
            let cfg = McmcConfig {
                width: a.width,
                theta0: match a.theta0 {
                    Theta0Choice::Uniform => Theta0::Uniform,
                    Theta0Choice::Sample => Theta0::FromSample { levels: a.theta0_levels },
                },
                seed: a.seed,
                pilot: a.pilot,
                max_samples: a.max_samples,
                run_length: match (a.burn_in, a.thin, a.samples) {
                    (Some(burn_in), Some(thin), Some(samples)) => Some(RunLength { burn_in, thin, samples }),
                    _ => None,
                },
                maximize,
                ..McmcConfig::new(a.width)
            };
            if let Some(path) = &a.trace {
                let (run, ..) = sample_trees(&s, &cfg)?;
                let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
                run.write_trace_csv(file)?;
            }
            let est = estimate_approximate(&s, &cfg)?;
            json!({
                "method": "mcmc",
                "theta": est.theta,
                "objective": est.objective,
                "theta0": est.theta0,
                "burn_in": est.run_length.burn_in,
                "thin": est.run_length.thin,
                "samples": est.run_length.samples,
                "raftery_lewis": est.rl,
                "acceptance_rate": est.acceptance_rate,
                "distinct_censuses": est.distinct_censuses,
            })
        }
        Method::Empirical => {
            let theta = empirical_estimator(&s, a.top_k, a.width)?;
            json!({"method": "empirical", "theta": theta, "top_k": a.top_k})
        }
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let mut spec: ExperimentSpec = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => return Err(Error::Config(format!("{}: {e}", a.spec.display())).into()),
    };
    if spec.catalog_dir.is_none() {
        spec.catalog_dir = a.catalog_dir;
    }
    if a.resume && !results_exist(&a.out) {
        log::warn!("nothing to resume in {}", a.out.display());
    }
    let result = run_experiment_to(&spec, &a.out, a.resume)?;
    let failed = result.rows.iter().filter(|r| r.theta_hat.is_none()).count();
    println!(
        "{} rows ({} failed), {} empty samples redrawn",
        result.rows.len(),
        failed,
        result.empty_resamples
    );
    Ok(())
}

fn results_exist(dir: &Path) -> bool {
    dir.join("results.csv").exists()
}

fn catalog(a: CatalogArgs) -> anyhow::Result<()> {
    if a.height == 0 || a.width == 0 {
        bail!(Error::Config("L and W must be positive".into()));
    }
    let c = NonIsoCatalog::load_or_build(&a.dir, a.height, a.width, a.budget)?;
    println!(
        "{} trees, {} labeled, {}",
        c.len(),
        c.total_multiplicity(),
        a.dir.join(NonIsoCatalog::file_name(a.height, a.width)).display()
    );
    Ok(())
}
