use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crps_reject::eval::{
    convergence_study, run_lambda_sweep, run_sweep, BackendConfig, ConvergenceConfig, DataSource,
    ExperimentConfig, KChoice, SplitPlan,
};
use crps_reject::synthetic::SyntheticModel;
use crps_reject::{
    crps, entropy, ForestParams, GaussianPredictive, Jitter, Predictive, WeightedEmpirical,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const TOOL: &str = "crps-reject";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "crps-reject", version, about = "Distributional regression with a reject option")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plug-in epsilon predictor over a grid of target rejection rates.
    SweepEpsilon(SweepEpsilonArgs),
    /// Fixed-threshold predictor over a grid of entropy thresholds.
    SweepLambda(SweepLambdaArgs),
    /// Median excess risk against the synthetic oracle as the labeled size grows.
    Convergence(ConvergenceArgs),
    /// CRPS and entropy of an inline forecast.
    Score(ScoreArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Base seed for all randomness; required unless --manifest is given.
    #[arg(long)]
    seed: Option<u64>,
    /// Rerun the configuration recorded in a manifest; other experiment flags are ignored.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "CRPS_REJECT_OUT", default_value = ".")]
    out: PathBuf,
    /// Maximum worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Knn,
    Forest,
}

#[derive(Args)]
struct ModelArgs {
    /// Synthetic model name: sigma-linear, sigma-affine, homoscedastic.
    #[arg(long)]
    synthetic: Option<String>,
    /// Comma-separated synthetic model parameters.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    model_params: Vec<f64>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// CSV file with a header row.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Target column of --data.
    #[arg(long)]
    target: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    /// Synthetic sample size per repetition.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Labeled, unlabeled and test fractions.
    #[arg(long, default_value = "0.5,0.2,0.3", conflicts_with = "counts")]
    split: String,
    /// Labeled, unlabeled and test sizes instead of fractions.
    #[arg(long)]
    counts: Option<String>,
    #[arg(long, value_enum, default_value = "knn")]
    backend: BackendKind,
    /// Fixed number of neighbours.
    #[arg(long, conflicts_with_all = ["k_grid", "k_power"])]
    k: Option<usize>,
    /// Choose k from this grid by holdout CRPS.
    #[arg(long, value_delimiter = ',', conflicts_with = "k_power")]
    k_grid: Vec<usize>,
    /// k = round(n^p); defaults to p = 2 / (2 + d).
    #[arg(long)]
    k_power: Option<f64>,
    /// Holdout share for k or mtry selection.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 1000)]
    trees: usize,
    #[arg(long, default_value_t = 0.9)]
    sample_fraction: f64,
    #[arg(long, default_value_t = 1)]
    min_node_size: usize,
    #[arg(long, conflicts_with = "mtry_grid")]
    mtry: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    mtry_grid: Vec<usize>,
    /// Z-score features on the labeled split (default: on for knn, off for forest).
    #[arg(long)]
    standardize: Option<bool>,
    /// Jitter magnitude: default, inverse-n or a number.
    #[arg(long, default_value = "default")]
    jitter: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
}

#[derive(Args)]
struct SweepEpsilonArgs {
    /// Rejection rates as start:stop:step or a comma list.
    #[arg(long, default_value = "0:0.9:0.1")]
    eps: String,
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SweepLambdaArgs {
    /// Entropy thresholds as start:stop:step or a comma list.
    #[arg(long)]
    lambda: Option<String>,
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "200,800,3200")]
    n_grid: Vec<usize>,
    /// Unlabeled calibration size.
    #[arg(long, default_value_t = 1000)]
    unlabeled: usize,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Monte-Carlo draws per excess-risk estimate.
    #[arg(long, default_value_t = 4000)]
    mc_size: usize,
    #[arg(long, conflicts_with = "k_power")]
    k: Option<usize>,
    #[arg(long)]
    k_power: Option<f64>,
    #[arg(long, default_value = "default")]
    jitter: String,
    /// Add the oracle predictor's excess risk as a column.
    #[arg(long)]
    oracle: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ScoreArgs {
    /// Discrete forecast as value:weight pairs, e.g. "0:0.5,1:0.5".
    #[arg(long, allow_hyphen_values = true, conflicts_with = "gaussian")]
    discrete: Option<String>,
    /// Gaussian forecast as mean,stddev.
    #[arg(long, allow_hyphen_values = true)]
    gaussian: Option<String>,
    /// Observation.
    #[arg(long, allow_hyphen_values = true)]
    y: f64,
}

/// Everything needed to reproduce an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum RunConfig {
    SweepEpsilon {
        experiment: ExperimentConfig,
    },
    SweepLambda {
        experiment: ExperimentConfig,
        lambdas: Vec<f64>,
    },
    Convergence {
        study: ConvergenceConfig,
    },
}

impl RunConfig {
    fn name(&self) -> &'static str {
        match self {
            RunConfig::SweepEpsilon { .. } => "sweep-epsilon",
            RunConfig::SweepLambda { .. } => "sweep-lambda",
            RunConfig::Convergence { .. } => "convergence",
        }
    }

    fn validate(&self) -> Result<(), String> {
        let r = match self {
            RunConfig::SweepEpsilon { experiment } => experiment.validate(),
            RunConfig::SweepLambda { experiment, lambdas } => {
                if lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                    return Err(format!("lambda grid {lambdas:?} must be finite and >= 0"));
                }
                experiment.validate_pipeline()
            }
            RunConfig::Convergence { study } => study.validate(),
        };
        r.map_err(|e| e.to_string())?;
        match self {
            RunConfig::SweepEpsilon { experiment } | RunConfig::SweepLambda { experiment, .. } => {
                if let DataSource::Csv { path, .. } = &experiment.source {
                    if !path.is_file() {
                        return Err(format!("data file {} not found", path.display()));
                    }
                }
                Ok(())
            }
            RunConfig::Convergence { .. } => Ok(()),
        }
    }

    fn execute(&self) -> Result<String, String> {
        let r = match self {
            RunConfig::SweepEpsilon { experiment } => run_sweep(experiment).map(|r| r.to_csv()),
            RunConfig::SweepLambda {
                experiment,
                lambdas,
            } => run_lambda_sweep(experiment, lambdas).map(|r| r.to_csv()),
            RunConfig::Convergence { study } => convergence_study(study).map(|r| r.to_csv()),
        };
        r.map_err(|e| e.to_string())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    run: RunConfig,
    manifest_sha256: String,
}

fn manifest_hash(tool: &str, version: &str, run: &RunConfig) -> String {
    let body = serde_json::to_string(&(tool, version, run)).expect("configs serialize");
    hex::encode(Sha256::digest(body.as_bytes()))
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config<T>(r: Result<T, String>) -> Result<T, Failure> {
    r.map_err(Failure::Config)
}

/// `start:stop:step` (inclusive) or a comma list; values rounded to 12 decimals.
fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad number `{s}` in grid `{spec}`"))
    };
    let round = |v: f64| (v * 1e12).round() / 1e12;
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid `{spec}` is not start:stop:step"));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(format!("grid `{spec}` needs step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| round(start + i as f64 * step)).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?.into_iter().map(round).collect()
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format!("grid `{spec}` has non-finite values"));
    }
    Ok(values)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str, len: usize) -> Result<Vec<T>, String> {
    let v: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("bad {what} `{s}`"))?;
    if v.len() != len {
        return Err(format!("{what} `{s}` needs {len} comma-separated values"));
    }
    Ok(v)
}

fn parse_jitter(s: &str) -> Result<Jitter, String> {
    match s {
        "default" => Ok(Jitter::Default),
        "inverse-n" => Ok(Jitter::InverseN),
        other => match other.parse::<f64>() {
            Ok(u) if u >= 0.0 && u.is_finite() => Ok(Jitter::Fixed(u)),
            _ => Err(format!("bad jitter `{other}`: use default, inverse-n or a number >= 0")),
        },
    }
}

fn synthetic_model(m: &ModelArgs, default: Option<&str>) -> Result<Option<SyntheticModel>, String> {
    match m.synthetic.as_deref().or(default) {
        None => Ok(None),
        Some(name) => SyntheticModel::from_name(name, &m.model_params)
            .map(Some)
            .map_err(|e| e.to_string()),
    }
}

fn k_choice(k: Option<usize>, grid: &[usize], power: Option<f64>, val: f64, dim: usize) -> KChoice {
    match (k, grid.is_empty(), power) {
        (Some(k), _, _) => KChoice::Fixed { k },
        (None, false, _) => KChoice::Select {
            grid: grid.to_vec(),
            val_fraction: val,
        },
        (None, true, Some(exponent)) => KChoice::Power { exponent },
        (None, true, None) => KChoice::Power {
            exponent: 2.0 / (2.0 + dim as f64),
        },
    }
}

/// Number of feature columns of a CSV source, read from its header.
fn csv_dim(path: &Path) -> Result<usize, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let header = text.lines().next().ok_or_else(|| format!("{} is empty", path.display()))?;
    Ok(header.split(',').count().saturating_sub(1).max(1))
}

fn experiment_config(a: &ExperimentArgs, epsilons: Vec<f64>, seed: u64) -> Result<ExperimentConfig, String> {
    let (source, dim) = match (&a.data, synthetic_model(&a.model, None)?) {
        (Some(path), None) => {
            let target = a
                .target
                .clone()
                .ok_or("--data needs --target <column>")?;
            if !path.is_file() {
                return Err(format!("data file {} not found", path.display()));
            }
            let dim = csv_dim(path)?;
            (
                DataSource::Csv {
                    path: path.clone(),
                    target,
                },
                dim,
            )
        }
        (None, Some(model)) => {
            let dim = model.dim;
            (DataSource::Synthetic { model, n: a.n }, dim)
        }
        (None, None) => return Err("one of --data or --synthetic is required".into()),
        (Some(_), Some(_)) => return Err("--data and --synthetic are exclusive".into()),
    };
    let split = match &a.counts {
        Some(c) => {
            let v: Vec<usize> = parse_list(c, "--counts", 3)?;
            SplitPlan::Counts {
                labeled: v[0],
                unlabeled: v[1],
                test: v[2],
            }
        }
        None => {
            let v: Vec<f64> = parse_list(&a.split, "--split", 3)?;
            SplitPlan::Fractions {
                labeled: v[0],
                unlabeled: v[1],
                test: v[2],
            }
        }
    };
    let backend = match a.backend {
        BackendKind::Knn => BackendConfig::Knn {
            k: k_choice(a.k, &a.k_grid, a.k_power, a.val_fraction, dim),
            standardize: a.standardize.unwrap_or(true),
        },
        BackendKind::Forest => BackendConfig::Forest {
            params: ForestParams {
                num_trees: a.trees,
                sample_fraction: a.sample_fraction,
                min_node_size: a.min_node_size,
                mtry: a.mtry,
                seed: 0,
            },
            mtry_grid: (!a.mtry_grid.is_empty()).then(|| a.mtry_grid.clone()),
            val_fraction: a.val_fraction,
            standardize: a.standardize.unwrap_or(false),
        },
    };
    Ok(ExperimentConfig {
        source,
        split,
        backend,
        epsilons,
        jitter: parse_jitter(&a.jitter)?,
        repetitions: a.reps,
        base_seed: seed,
    })
}

fn convergence_config(a: &ConvergenceArgs, seed: u64) -> Result<ConvergenceConfig, String> {
    let model = synthetic_model(&a.model, Some("sigma-linear"))?.expect("default model");
    let k = k_choice(a.k, &[], a.k_power, 0.2, model.dim);
    Ok(ConvergenceConfig {
        model,
        n_grid: a.n_grid.clone(),
        unlabeled: a.unlabeled,
        epsilon: a.epsilon,
        repetitions: a.reps,
        k,
        jitter: parse_jitter(&a.jitter)?,
        mc_size: a.mc_size,
        oracle: a.oracle,
        base_seed: seed,
    })
}

fn load_manifest(path: &Path, expected: &str) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read manifest {}: {e}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| format!("bad manifest {}: {e}", path.display()))?;
    if manifest_hash(&m.tool, &m.version, &m.run) != m.manifest_sha256 {
        return Err(format!("manifest {} does not match its hash", path.display()));
    }
    if m.run.name() != expected {
        return Err(format!(
            "manifest {} records `{}`, not `{expected}`",
            path.display(),
            m.run.name()
        ));
    }
    Ok(m.run)
}

fn resolve(run: &RunArgs, name: &str, from_flags: impl FnOnce(u64) -> Result<RunConfig, String>) -> Result<RunConfig, String> {
    match (&run.manifest, run.seed) {
        (Some(path), _) => load_manifest(path, name),
        (None, Some(seed)) => from_flags(seed),
        (None, None) => Err("--seed is required (or --manifest to rerun a recorded configuration)".into()),
    }
}

fn execute(run: &RunArgs, config: RunConfig) -> Result<(), Failure> {
    config.validate().map_err(Failure::Config)?;
    if let Some(jobs) = run.jobs {
        if jobs == 0 {
            return Err(Failure::Config("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let table = config.execute().map_err(Failure::Runtime)?;
    let hash = manifest_hash(TOOL, VERSION, &config);
    let manifest = Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        run: config.clone(),
        manifest_sha256: hash.clone(),
    };
    let io = |e: std::io::Error| Failure::Runtime(format!("cannot write to {}: {e}", run.out.display()));
    fs::create_dir_all(&run.out).map_err(io)?;
    let name = config.name();
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(run.out.join(format!("{name}.csv")), format!("# manifest-sha256: {hash}\n{table}")).map_err(io)?;
    fs::write(run.out.join(format!("{name}.manifest.json")), json + "\n").map_err(io)?;
    Ok(())
}

/// `v` to 12 significant digits with trailing zeros removed.
fn sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = 11 - magnitude;
    let s = if (0..=40).contains(&decimals) {
        format!("{:.*}", decimals as usize, v)
    } else {
        format!("{:.11e}", v)
    };
    if s.contains('.') && !s.contains('e') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn parse_forecast(a: &ScoreArgs) -> Result<Predictive<f64>, String> {
    match (&a.discrete, &a.gaussian) {
        (Some(spec), None) => {
            let mut values = Vec::new();
            let mut weights = Vec::new();
            for pair in spec.split(',') {
                let (v, w) = pair
                    .split_once(':')
                    .ok_or_else(|| format!("bad pair `{pair}`: expected value:weight"))?;
                let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("bad number `{s}` in `{pair}`"));
                values.push(parse(v)?);
                weights.push(parse(w)?);
            }
            WeightedEmpirical::from_weighted_sample(&values, &weights)
                .map(Predictive::Discrete)
                .map_err(|e| e.to_string())
        }
        (None, Some(spec)) => {
            let v: Vec<f64> = parse_list(spec, "--gaussian", 2)?;
            GaussianPredictive::new(v[0], v[1])
                .map(Predictive::Gaussian)
                .map_err(|e| e.to_string())
        }
        _ => Err("one of --discrete or --gaussian is required".into()),
    }
}

fn score(a: &ScoreArgs) -> Result<(), Failure> {
    if !a.y.is_finite() {
        return Err(Failure::Config("--y must be finite".into()));
    }
    let forecast = config(parse_forecast(a))?;
    println!("crps {}", sig12(crps(&forecast, a.y).value()));
    println!("entropy {}", sig12(entropy(&forecast).value()));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SweepEpsilon(a) => {
            let cfg = config(resolve(&a.run, "sweep-epsilon", |seed| {
                let eps = parse_grid(&a.eps)?;
                Ok(RunConfig::SweepEpsilon {
                    experiment: experiment_config(&a.experiment, eps, seed)?,
                })
            }))?;
            execute(&a.run, cfg)
        }
        Command::SweepLambda(a) => {
            let cfg = config(resolve(&a.run, "sweep-lambda", |seed| {
                let lambdas = parse_grid(a.lambda.as_deref().ok_or("--lambda is required")?)?;
                Ok(RunConfig::SweepLambda {
                    experiment: experiment_config(&a.experiment, Vec::new(), seed)?,
                    lambdas,
                })
            }))?;
            execute(&a.run, cfg)
        }
        Command::Convergence(a) => {
            let cfg = config(resolve(&a.run, "convergence", |seed| {
                Ok(RunConfig::Convergence {
                    study: convergence_config(&a, seed)?,
                })
            }))?;
            execute(&a.run, cfg)
        }
        Command::Score(a) => score(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(
            parse_grid("0:0.9:0.1").unwrap(),
            vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        );
        assert_eq!(parse_grid("0").unwrap(), vec![0.0]);
        assert_eq!(parse_grid("0.5, 0.25").unwrap(), vec![0.5, 0.25]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a").is_err());
    }

    #[test]
    fn significant_digits() {
        assert_eq!(sig12(0.25), "0.25");
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(0.233_694_977_255_109_15), "0.233694977255");
        assert_eq!(sig12(1234.5), "1234.5");
        assert_eq!(sig12(2.0 / 3.0), "0.666666666667");
    }

    #[test]
    fn jitter_flags() {
        assert_eq!(parse_jitter("default").unwrap(), Jitter::Default);
        assert_eq!(parse_jitter("inverse-n").unwrap(), Jitter::InverseN);
        assert_eq!(parse_jitter("0.001").unwrap(), Jitter::Fixed(0.001));
        assert!(parse_jitter("-1").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let run = RunConfig::SweepLambda {
            experiment: ExperimentConfig {
                source: DataSource::Synthetic {
                    model: SyntheticModel::sigma_affine(0.1, 0.7),
                    n: 100,
                },
                split: SplitPlan::default(),
                backend: BackendConfig::knn(KChoice::Power { exponent: 2.0 / 3.0 }),
                epsilons: vec![],
                jitter: Jitter::Fixed(1e-10),
                repetitions: 2,
                base_seed: u64::MAX,
            },
            lambdas: vec![0.1, 0.30000000000000004],
        };
        let text = serde_json::to_string(&run).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, run);
        assert_eq!(manifest_hash(TOOL, VERSION, &back), manifest_hash(TOOL, VERSION, &run));
    }
}
