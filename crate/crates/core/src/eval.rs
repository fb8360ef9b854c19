//! Experiment harness: repeated random splits, epsilon and lambda sweeps, rejection-rate
//! and excess-risk studies.
//!
//! Repetition `r` draws everything from `seed::mix(base_seed, r)`; repetitions run in
//! parallel and are aggregated in index order, so results do not depend on the number of
//! worker threads.

use std::fmt::Write as _;
use std::path::PathBuf;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{
    forest_fit, knn_fit, select_k, select_mtry, ForestParams, LabeledDataset, Regressor,
};
use crate::data_io::{load_csv, split, split_counts, SplitSpec, Standardizer};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scoring::{crps, crps_discrete};
use crate::seed;
use crate::selective::{
    entropy_scores, predicted_entropy, EpsilonPolicy, Jitter, PluginEpsilon, QueryRng,
    SelectivePredictor,
};
use crate::synthetic::{excess_risk, OraclePredictor, SyntheticModel};

/// Empirical error and rejection rate of one predictor on one test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean CRPS over accepted points; `None` when everything was rejected.
    pub err: Option<f64>,
    pub reject_rate: f64,
    pub accepted: usize,
    pub total: usize,
}

impl Evaluation {
    fn from_sums(crps_sum: f64, accepted: usize, total: usize) -> Self {
        Self {
            err: (accepted > 0).then(|| crps_sum / accepted as f64),
            reject_rate: (total - accepted) as f64 / total as f64,
            accepted,
            total,
        }
    }
}

/// Runs `predictor` over `test` in row order, drawing any query randomness from `rng`.
pub fn evaluate<T: Real>(
    predictor: &dyn SelectivePredictor<T>,
    test: &LabeledDataset<T>,
    rng: &mut QueryRng,
) -> Result<Evaluation> {
    let mut sum = 0.0;
    let mut accepted = 0;
    for (x, &y) in test.features().outer_iter().zip(test.targets().iter()) {
        if let Some(pred) = predictor.predict(x, rng)?.accepted() {
            sum += crps(pred, y).value().as_f64();
            accepted += 1;
        }
    }
    Ok(Evaluation::from_sums(sum, accepted, test.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Csv { path: PathBuf, target: String },
    /// `n` fresh draws per repetition.
    Synthetic { model: SyntheticModel, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitPlan {
    Fractions {
        labeled: f64,
        unlabeled: f64,
        test: f64,
    },
    Counts {
        labeled: usize,
        unlabeled: usize,
        test: usize,
    },
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan::Fractions {
            labeled: 0.5,
            unlabeled: 0.2,
            test: 0.3,
        }
    }
}

/// How the number of neighbours is chosen on each labeled split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum KChoice {
    Fixed { k: usize },
    /// Holdout CRPS over `grid`.
    Select { grid: Vec<usize>, val_fraction: f64 },
    /// `k = round(n^exponent)`.
    Power { exponent: f64 },
}

impl KChoice {
    fn validate(&self) -> Result<()> {
        match self {
            KChoice::Fixed { k: 0 } => Err(Error::InvalidK { k: 0, n: 0 }),
            KChoice::Select { grid, val_fraction } => {
                if grid.is_empty() || grid.contains(&0) {
                    return Err(Error::InvalidParameter(format!("bad k grid {grid:?}")));
                }
                check_fraction(*val_fraction)
            }
            KChoice::Power { exponent } if !(*exponent > 0.0 && *exponent <= 1.0) => Err(
                Error::InvalidParameter(format!("k exponent {exponent} outside (0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, labeled: &LabeledDataset<f64>, seed: u64) -> Result<usize> {
        let n = labeled.len();
        let k = match self {
            KChoice::Fixed { k } => *k,
            KChoice::Select { grid, val_fraction } => {
                return select_k(labeled, grid, *val_fraction, seed)
            }
            KChoice::Power { exponent } => ((n as f64).powf(*exponent).round() as usize).max(1),
        };
        if k > n {
            return Err(Error::InvalidK { k, n });
        }
        Ok(k)
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "validation fraction {f} outside (0, 1)"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    Knn {
        k: KChoice,
        standardize: bool,
    },
    Forest {
        params: ForestParams,
        /// When set, `mtry` is chosen from this grid by holdout CRPS.
        mtry_grid: Option<Vec<usize>>,
        val_fraction: f64,
        standardize: bool,
    },
}

impl BackendConfig {
    pub fn knn(k: KChoice) -> Self {
        BackendConfig::Knn {
            k,
            standardize: true,
        }
    }

    pub fn forest(params: ForestParams) -> Self {
        BackendConfig::Forest {
            params,
            mtry_grid: None,
            val_fraction: 0.2,
            standardize: false,
        }
    }

    fn standardize(&self) -> bool {
        match self {
            BackendConfig::Knn { standardize, .. } | BackendConfig::Forest { standardize, .. } => {
                *standardize
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            BackendConfig::Knn { k, .. } => k.validate(),
            BackendConfig::Forest {
                params,
                mtry_grid,
                val_fraction,
                ..
            } => {
                if params.num_trees == 0 {
                    return Err(Error::InvalidParameter("num_trees must be >= 1".into()));
                }
                if let Some(grid) = mtry_grid {
                    if grid.is_empty() || grid.contains(&0) {
                        return Err(Error::InvalidParameter(format!("bad mtry grid {grid:?}")));
                    }
                    check_fraction(*val_fraction)?;
                }
                Ok(())
            }
        }
    }

    /// Fits on `labeled`; `seed` drives model selection and tree randomness.
    pub fn fit(&self, labeled: &LabeledDataset<f64>, seed: u64) -> Result<Regressor<f64>> {
        match self {
            BackendConfig::Knn { k, .. } => {
                let k = k.resolve(labeled, seed::mix(seed, 1))?;
                Ok(knn_fit(labeled, k)?.into())
            }
            BackendConfig::Forest {
                params,
                mtry_grid,
                val_fraction,
                ..
            } => {
                let mut params = ForestParams {
                    seed: seed::mix(seed::mix(seed, 2), params.seed),
                    ..params.clone()
                };
                if let Some(grid) = mtry_grid {
                    params.mtry = Some(select_mtry(
                        labeled,
                        &params,
                        grid,
                        *val_fraction,
                        seed::mix(seed, 3),
                    )?);
                }
                Ok(forest_fit(labeled, &params)?.into())
            }
        }
    }
}

/// A full sweep experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub split: SplitPlan,
    pub backend: BackendConfig,
    /// Rejection-rate grid for [`run_sweep`]; unused by [`run_lambda_sweep`].
    pub epsilons: Vec<f64>,
    pub jitter: Jitter,
    pub repetitions: usize,
    pub base_seed: u64,
}

impl ExperimentConfig {
    /// Checks everything except the epsilon grid.
    pub fn validate_pipeline(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidParameter("repetitions must be >= 1".into()));
        }
        if let Jitter::Fixed(u) = self.jitter {
            if !(u >= 0.0 && u.is_finite()) {
                return Err(Error::InvalidParameter(format!("jitter {u} must be >= 0")));
            }
        }
        match (&self.source, self.split) {
            (_, SplitPlan::Fractions { labeled, unlabeled, test }) => {
                SplitSpec::new(labeled, unlabeled, test, 0)?;
            }
            (DataSource::Synthetic { n, .. }, SplitPlan::Counts { labeled, unlabeled, test })
                if labeled + unlabeled + test > *n => {
                    return Err(Error::SplitTooSmall(format!(
                        "split sizes {labeled}/{unlabeled}/{test} exceed n = {n}"
                    )));
                }
            _ => {}
        }
        if let SplitPlan::Counts { labeled, unlabeled, test } = self.split {
            if labeled == 0 || unlabeled == 0 || test == 0 {
                return Err(Error::SplitTooSmall(format!(
                    "split sizes {labeled}/{unlabeled}/{test}"
                )));
            }
        }
        if let DataSource::Synthetic { model, n } = &self.source {
            model.validate()?;
            if *n < 3 {
                return Err(Error::SplitTooSmall(format!("n = {n}")));
            }
        }
        self.backend.validate()
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilons(&self.epsilons)?;
        self.validate_pipeline()
    }
}

fn check_epsilons(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty epsilon grid".into()));
    }
    if let Some(e) = grid.iter().find(|e| !(**e >= 0.0 && **e < 1.0)) {
        return Err(Error::InvalidParameter(format!("epsilon {e} outside [0, 1)")));
    }
    Ok(())
}

fn check_lambdas(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if let Some(l) = grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidParameter(format!("lambda {l} must be >= 0")));
    }
    Ok(())
}

/// One repetition's fitted model and held-out data.
#[derive(Debug, Clone)]
pub struct Trial {
    pub regressor: Regressor<f64>,
    pub unlabeled: Array2<f64>,
    pub test: LabeledDataset<f64>,
    pub n_labeled: usize,
    pub seed: u64,
}

impl Trial {
    /// Repetition `rep` of `config`; `loaded` is the CSV source when there is one.
    pub fn prepare(
        config: &ExperimentConfig,
        loaded: Option<&LabeledDataset<f64>>,
        rep: usize,
    ) -> Result<Self> {
        let s = seed::mix(config.base_seed, rep as u64);
        let sampled;
        let data = match (&config.source, loaded) {
            (_, Some(d)) => d,
            (DataSource::Synthetic { model, n }, None) => {
                sampled = model.sample(*n, seed::mix(s, 1))?;
                &sampled
            }
            (DataSource::Csv { .. }, None) => {
                return Err(Error::InvalidParameter("csv source was not loaded".into()))
            }
        };
        let parts = match config.split {
            SplitPlan::Fractions {
                labeled,
                unlabeled,
                test,
            } => split(data, &SplitSpec::new(labeled, unlabeled, test, seed::mix(s, 2))?)?,
            SplitPlan::Counts {
                labeled,
                unlabeled,
                test,
            } => split_counts(data, (labeled, unlabeled, test), seed::mix(s, 2))?,
        };
        let (labeled, unlabeled, test) = if config.backend.standardize() {
            let st = Standardizer::fit(parts.labeled.features())?;
            (
                st.apply_dataset(&parts.labeled)?,
                st.apply(parts.unlabeled.view())?,
                st.apply_dataset(&parts.test)?,
            )
        } else {
            (parts.labeled, parts.unlabeled, parts.test)
        };
        let regressor = config.backend.fit(&labeled, seed::mix(s, 3))?;
        Ok(Self {
            regressor,
            unlabeled,
            test,
            n_labeled: labeled.len(),
            seed: s,
        })
    }

    /// Seed of the calibration jitter.
    pub fn calibration_seed(&self) -> u64 {
        seed::mix(self.seed, 4)
    }
}

/// Predicted entropy and realized CRPS at each test point.
fn score_test(r: &Regressor<f64>, test: &LabeledDataset<f64>) -> Result<Vec<(f64, f64)>> {
    let x = test.features();
    let y = test.targets();
    (0..test.len())
        .into_par_iter()
        .map(|i| {
            let (pred, ent) = predicted_entropy(r, x.row(i))?;
            Ok((ent, crps_discrete(&pred, y[i]).value()))
        })
        .collect()
}

fn predicted_entropies(r: &Regressor<f64>, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| Ok(predicted_entropy(r, x.row(i))?.1))
        .collect()
}

/// Evaluations of each epsilon on one trial.
///
/// Identical to [`evaluate`] with [`PluginEpsilon`] and `table.query_rng(0)` for each
/// epsilon, with predictions shared across the grid.
pub fn sweep_trial(trial: &Trial, epsilons: &[f64], jitter: Jitter) -> Result<Vec<Evaluation>> {
    let u = jitter.magnitude(trial.n_labeled);
    let table = entropy_scores(
        &trial.regressor,
        trial.unlabeled.view(),
        u,
        trial.calibration_seed(),
    )?;
    let scored = score_test(&trial.regressor, &trial.test)?;
    let mut rng = table.query_rng(0);
    let jittered: Vec<f64> = scored.iter().map(|(e, _)| e + rng.zeta::<f64>(u)).collect();
    epsilons
        .iter()
        .map(|&eps| {
            let policy = EpsilonPolicy::new(eps, table.clone())?;
            let (mut sum, mut accepted) = (0.0, 0);
            for (&s, &(_, c)) in jittered.iter().zip(&scored) {
                if policy.accepts(s) {
                    sum += c;
                    accepted += 1;
                }
            }
            Ok(Evaluation::from_sums(sum, accepted, scored.len()))
        })
        .collect()
}

fn lambda_trial(trial: &Trial, lambdas: &[f64]) -> Result<Vec<Evaluation>> {
    let scored = score_test(&trial.regressor, &trial.test)?;
    Ok(lambdas
        .iter()
        .map(|&l| {
            let (mut sum, mut accepted) = (0.0, 0);
            for &(_, c) in scored.iter().filter(|(e, _)| *e <= l) {
                sum += c;
                accepted += 1;
            }
            Evaluation::from_sums(sum, accepted, scored.len())
        })
        .collect())
}

/// Aggregated row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub err_mean: Option<f64>,
    pub err_std: Option<f64>,
    pub rej_mean: f64,
    pub rej_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `epsilon` or `lambda`.
    pub parameter: String,
    pub repetitions: usize,
    pub rows: Vec<SweepRow>,
    /// `raw[i][r]`: grid point `i`, repetition `r`.
    #[serde(skip)]
    pub raw: Vec<Vec<Evaluation>>,
}

/// Mean and sample standard deviation (`n - 1` denominator).
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    (Some(mean), std)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl SweepResult {
    fn aggregate(parameter: &str, grid: &[f64], per_rep: Vec<Vec<Evaluation>>) -> Self {
        let repetitions = per_rep.len();
        let raw: Vec<Vec<Evaluation>> = (0..grid.len())
            .map(|i| per_rep.iter().map(|rep| rep[i]).collect())
            .collect();
        let rows = grid
            .iter()
            .zip(&raw)
            .map(|(&param, evals)| {
                let errs: Vec<f64> = evals.iter().filter_map(|e| e.err).collect();
                let rejs: Vec<f64> = evals.iter().map(|e| e.reject_rate).collect();
                let (err_mean, err_std) = mean_std(&errs);
                let (rej_mean, rej_std) = mean_std(&rejs);
                SweepRow {
                    param,
                    err_mean,
                    err_std,
                    rej_mean: rej_mean.unwrap_or(0.0),
                    rej_std,
                }
            })
            .collect();
        Self {
            parameter: parameter.to_string(),
            repetitions,
            rows,
            raw,
        }
    }

    /// CSV text; missing values are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},err_mean,err_std,rej_mean,rej_std\n", self.parameter);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.param,
                fmt_opt(r.err_mean),
                fmt_opt(r.err_std),
                r.rej_mean,
                fmt_opt(r.rej_std)
            );
        }
        out
    }
}

fn load_source(config: &ExperimentConfig) -> Result<Option<LabeledDataset<f64>>> {
    match &config.source {
        DataSource::Csv { path, target } => Ok(Some(load_csv(path, target)?)),
        DataSource::Synthetic { .. } => Ok(None),
    }
}

fn run_trials(
    config: &ExperimentConfig,
    per_trial: impl Fn(&Trial) -> Result<Vec<Evaluation>> + Sync,
) -> Result<Vec<Vec<Evaluation>>> {
    let loaded = load_source(config)?;
    (0..config.repetitions)
        .into_par_iter()
        .map(|rep| per_trial(&Trial::prepare(config, loaded.as_ref(), rep)?))
        .collect()
}

/// Plug-in epsilon predictor per grid point, averaged over repetitions.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let per_rep = run_trials(config, |t| sweep_trial(t, &config.epsilons, config.jitter))?;
    Ok(SweepResult::aggregate("epsilon", &config.epsilons, per_rep))
}

/// Fixed-threshold predictor per `lambda`, averaged over repetitions.
pub fn run_lambda_sweep(config: &ExperimentConfig, lambdas: &[f64]) -> Result<SweepResult> {
    config.validate_pipeline()?;
    check_lambdas(lambdas)?;
    let per_rep = run_trials(config, |t| lambda_trial(t, lambdas))?;
    Ok(SweepResult::aggregate("lambda", lambdas, per_rep))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Excess risk of the plug-in epsilon rule as the labeled size grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub model: SyntheticModel,
    pub n_grid: Vec<usize>,
    pub unlabeled: usize,
    pub epsilon: f64,
    pub repetitions: usize,
    pub k: KChoice,
    pub jitter: Jitter,
    /// Monte-Carlo draws of `X` per excess-risk estimate.
    pub mc_size: usize,
    /// Also report the oracle predictor's excess risk.
    pub oracle: bool,
    pub base_seed: u64,
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::InvalidParameter(format!("bad n grid {:?}", self.n_grid)));
        }
        if self.unlabeled == 0 || self.mc_size == 0 || self.repetitions == 0 {
            return Err(Error::InvalidParameter(
                "unlabeled size, mc size and repetitions must be >= 1".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        self.k.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    /// `k` of the first repetition (the same for all unless chosen by holdout).
    pub k: usize,
    pub median_excess_risk: f64,
    pub oracle_median_excess_risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
    /// Per-repetition excess risks for each `n`.
    #[serde(skip)]
    pub raw: Vec<Vec<f64>>,
}

impl ConvergenceResult {
    pub fn to_csv(&self) -> String {
        let oracle = self.rows.iter().any(|r| r.oracle_median_excess_risk.is_some());
        let mut out = String::from("n,k,median_excess_risk");
        out.push_str(if oracle { ",oracle_median_excess_risk\n" } else { "\n" });
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.n, r.k, r.median_excess_risk);
            if oracle {
                let _ = write!(out, ",{}", fmt_opt(r.oracle_median_excess_risk));
            }
            out.push('\n');
        }
        out
    }
}

pub fn convergence_study(config: &ConvergenceConfig) -> Result<ConvergenceResult> {
    config.validate()?;
    let model = &config.model;
    let mut rows = Vec::with_capacity(config.n_grid.len());
    let mut raw = Vec::with_capacity(config.n_grid.len());
    for (i, &n) in config.n_grid.iter().enumerate() {
        let reps: Vec<(usize, f64, Option<f64>)> = (0..config.repetitions)
            .into_par_iter()
            .map(|rep| {
                let s = seed::mix(seed::mix(config.base_seed, i as u64), rep as u64);
                let labeled = model.sample(n, seed::mix(s, 1))?;
                let unlabeled = model.sample_features(config.unlabeled, seed::mix(s, 2));
                let k = config.k.resolve(&labeled, seed::mix(s, 3))?;
                let r = knn_fit(&labeled, k)?;
                let u = config.jitter.magnitude(n);
                let table = entropy_scores(&r, unlabeled.view(), u, seed::mix(s, 4))?;
                let policy = EpsilonPolicy::new(config.epsilon, table)?;
                let rule = model.oracle_lambda(config.epsilon, config.mc_size, seed::mix(s, 5))?;
                let plug_in = PluginEpsilon {
                    regressor: &r,
                    policy: &policy,
                };
                let mc_seed = seed::mix(s, 6);
                let excess = excess_risk(&plug_in, model, &rule, config.mc_size, mc_seed)?;
                let oracle = if config.oracle {
                    let p = OraclePredictor {
                        model,
                        lambda: rule.lambda_eps,
                    };
                    Some(excess_risk(&p, model, &rule, config.mc_size, mc_seed)?.total().value())
                } else {
                    None
                };
                Ok((k, excess.total().value(), oracle))
            })
            .collect::<Result<_>>()?;
        let mut excess: Vec<f64> = reps.iter().map(|r| r.1).collect();
        raw.push(excess.clone());
        let oracle_median = config.oracle.then(|| {
            let mut o: Vec<f64> = reps.iter().filter_map(|r| r.2).collect();
            median(&mut o)
        });
        rows.push(ConvergenceRow {
            n,
            k: reps[0].0,
            median_excess_risk: median(&mut excess),
            oracle_median_excess_risk: oracle_median,
        });
    }
    Ok(ConvergenceResult { rows, raw })
}

/// Rejection-rate accuracy as a function of the unlabeled size `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRateConfig {
    pub model: SyntheticModel,
    pub labeled: usize,
    pub unlabeled_grid: Vec<usize>,
    pub test: usize,
    pub epsilons: Vec<f64>,
    pub repetitions: usize,
    pub k: KChoice,
    pub jitter: Jitter,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionRateRow {
    pub unlabeled: usize,
    pub epsilon: f64,
    pub rej_mean: f64,
    /// Mean over repetitions of `|r - epsilon|`.
    pub mean_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRateResult {
    pub rows: Vec<RejectionRateRow>,
}

impl RejectionRateResult {
    /// Mean absolute deviation averaged over the epsilon grid, per `N`.
    pub fn by_unlabeled_size(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(n, _, _)| *n == r.unlabeled) {
                Some(slot) => {
                    slot.1 += r.mean_abs_deviation;
                    slot.2 += 1;
                }
                None => out.push((r.unlabeled, r.mean_abs_deviation, 1)),
            }
        }
        out.into_iter().map(|(n, s, c)| (n, s / c as f64)).collect()
    }
}

/// One fit and one test set per repetition, recalibrated for every `N`.
pub fn rejection_rate_study(config: &RejectionRateConfig) -> Result<RejectionRateResult> {
    config.model.validate()?;
    config.k.validate()?;
    if let Some(e) = config.epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::InvalidParameter(format!("epsilon {e} outside (0, 1)")));
    }
    if config.epsilons.is_empty()
        || config.unlabeled_grid.is_empty()
        || config.unlabeled_grid.contains(&0)
        || config.labeled == 0
        || config.test == 0
        || config.repetitions == 0
    {
        return Err(Error::InvalidParameter("empty rejection-rate study".into()));
    }
    let model = &config.model;
    // per_rep[r][j][e]: rejection rate at unlabeled size j and epsilon e.
    let per_rep: Vec<Vec<Vec<f64>>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let s = seed::mix(config.base_seed, rep as u64);
            let labeled = model.sample(config.labeled, seed::mix(s, 1))?;
            let k = config.k.resolve(&labeled, seed::mix(s, 3))?;
            let r: Regressor<f64> = knn_fit(&labeled, k)?.into();
            let test = model.sample_features(config.test, seed::mix(s, 2));
            let test_ent = predicted_entropies(&r, test.view())?;
            let u = config.jitter.magnitude(config.labeled);
            config
                .unlabeled_grid
                .iter()
                .enumerate()
                .map(|(j, &big_n)| {
                    let unl = model.sample_features(big_n, seed::mix(s, 10 + j as u64));
                    let table = entropy_scores(&r, unl.view(), u, seed::mix(s, 100 + j as u64))?;
                    let mut rng = table.query_rng(0);
                    let jittered: Vec<f64> =
                        test_ent.iter().map(|e| e + rng.zeta::<f64>(u)).collect();
                    config
                        .epsilons
                        .iter()
                        .map(|&eps| {
                            let policy = EpsilonPolicy::new(eps, table.clone())?;
                            let rejected = jittered.iter().filter(|&&v| !policy.accepts(v)).count();
                            Ok(rejected as f64 / jittered.len() as f64)
                        })
                        .collect()
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let reps = config.repetitions as f64;
    let mut rows = Vec::new();
    for (j, &big_n) in config.unlabeled_grid.iter().enumerate() {
        for (e, &eps) in config.epsilons.iter().enumerate() {
            let rates = per_rep.iter().map(|r| r[j][e]);
            rows.push(RejectionRateRow {
                unlabeled: big_n,
                epsilon: eps,
                rej_mean: rates.clone().sum::<f64>() / reps,
                mean_abs_deviation: rates.map(|v| (v - eps).abs()).sum::<f64>() / reps,
            });
        }
    }
    Ok(RejectionRateResult { rows })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            values: x.len(),
            weights: y.len(),
        });
    }
    if x.len() < 2 || x.iter().chain(y).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(
            "log-log fit needs at least two positive points".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("log-log fit needs distinct x".into()));
    }
    Ok(sxy / sxx)
}

/// Mean CRPS of the full-acceptance predictor on `test`.
pub fn unconditional_error(r: &Regressor<f64>, test: &LabeledDataset<f64>) -> Result<f64> {
    let scored = score_test(r, test)?;
    Ok(scored.iter().map(|s| s.1).sum::<f64>() / scored.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::WeightModel;
    use ndarray::ArrayView1;
    use crate::selective::{AlwaysReject, NeverReject, RejectPrediction};
    use crate::dist::Predictive;
    use crate::scoring::entropy_discrete;
    use ndarray::{Array1, Array2};

    fn synthetic_config(reps: usize) -> ExperimentConfig {
        ExperimentConfig {
            source: DataSource::Synthetic {
                model: SyntheticModel::sigma_linear(),
                n: 400,
            },
            split: SplitPlan::default(),
            backend: BackendConfig::knn(KChoice::Fixed { k: 20 }),
            epsilons: vec![0.0, 0.3, 0.6],
            jitter: Jitter::Default,
            repetitions: reps,
            base_seed: 17,
        }
    }

    struct TopHalf<'a> {
        r: &'a Regressor<f64>,
        cut: f64,
    }

    impl SelectivePredictor<f64> for TopHalf<'_> {
        fn predict(
            &self,
            x: ArrayView1<'_, f64>,
            _rng: &mut QueryRng,
        ) -> Result<RejectPrediction<Predictive<f64>>> {
            let (p, e) = predicted_entropy(self.r, x)?;
            Ok(if e < self.cut {
                RejectPrediction::Accept(Predictive::Discrete(p))
            } else {
                RejectPrediction::Reject
            })
        }
    }

    #[test]
    fn evaluate_reference_predictors() {
        let x = Array2::from_shape_fn((30, 1), |(i, _)| i as f64);
        let y = Array1::from_shape_fn(30, |i| (i as f64 * 0.37).sin() * (1.0 + i as f64));
        let train = LabeledDataset::new(x, y).unwrap();
        let r: Regressor<f64> = knn_fit(&train, 4).unwrap().into();
        let test = LabeledDataset::new(
            Array2::from_shape_fn((10, 1), |(i, _)| 3.0 * i as f64 + 0.4),
            Array1::from_shape_fn(10, |i| i as f64 - 4.0),
        )
        .unwrap();
        let mut rng = QueryRng::new(0, 0);

        let plain: Vec<f64> = test
            .features()
            .outer_iter()
            .zip(test.targets().iter())
            .map(|(x, &y)| crps_discrete(&r.predict(x).unwrap(), y).value())
            .collect();
        let never = evaluate(&NeverReject(&r), &test, &mut rng).unwrap();
        assert_eq!(never.reject_rate, 0.0);
        assert!((never.err.unwrap() - plain.iter().sum::<f64>() / 10.0).abs() < 1e-12);

        let always = evaluate::<f64>(&AlwaysReject, &test, &mut rng).unwrap();
        assert_eq!((always.reject_rate, always.err), (1.0, None));

        let ents: Vec<f64> = test
            .features()
            .outer_iter()
            .map(|x| entropy_discrete(&r.predict(x).unwrap()).value())
            .collect();
        let mut sorted = ents.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[4] < sorted[5], "fixture needs a strict median gap");
        let cut = sorted[5];
        let half = evaluate(&TopHalf { r: &r, cut }, &test, &mut rng).unwrap();
        let expected: f64 =
            (0..10).filter(|&i| ents[i] < cut).map(|i| plain[i]).sum::<f64>() / 5.0;
        assert_eq!(half.reject_rate, 0.5);
        assert!((half.err.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sweep_matches_predictor_path() {
        let config = synthetic_config(1);
        let trial = Trial::prepare(&config, None, 0).unwrap();
        let fast = sweep_trial(&trial, &config.epsilons, config.jitter).unwrap();
        let u = config.jitter.magnitude(trial.n_labeled);
        let table =
            entropy_scores(&trial.regressor, trial.unlabeled.view(), u, trial.calibration_seed())
                .unwrap();
        for (&eps, fast) in config.epsilons.iter().zip(&fast) {
            let policy = EpsilonPolicy::new(eps, table.clone()).unwrap();
            let p = PluginEpsilon {
                regressor: &trial.regressor,
                policy: &policy,
            };
            let slow = evaluate(&p, &trial.test, &mut table.query_rng(0)).unwrap();
            assert_eq!(slow.accepted, fast.accepted);
            assert!((slow.err.unwrap() - fast.err.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_properties() {
        let config = synthetic_config(4);
        let a = run_sweep(&config).unwrap();
        assert_eq!(a, run_sweep(&config).unwrap());
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.rows[0].rej_mean, 0.0);
        // Epsilon zero accepts everything, so its error is the unconditional mean CRPS.
        let loaded = None;
        let uncond: Vec<f64> = (0..4)
            .map(|rep| {
                let t = Trial::prepare(&config, loaded, rep).unwrap();
                unconditional_error(&t.regressor, &t.test).unwrap()
            })
            .collect();
        assert!((a.rows[0].err_mean.unwrap() - mean_std(&uncond).0.unwrap()).abs() < 1e-12);
        let csv = a.to_csv();
        assert!(csv.starts_with("epsilon,err_mean,err_std,rej_mean,rej_std\n0,"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn lambda_sweep_extremes() {
        let config = synthetic_config(2);
        let res = run_lambda_sweep(&config, &[0.0, 1e9]).unwrap();
        assert!(res.rows[0].rej_mean > 0.99);
        assert_eq!(res.rows[1].rej_mean, 0.0);
        assert!(res.to_csv().starts_with("lambda,"));
        assert!(run_lambda_sweep(&config, &[-1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = synthetic_config(1);
        c.epsilons = vec![1.0];
        assert!(run_sweep(&c).is_err());
        c.epsilons = vec![];
        assert!(c.validate().is_err());
        let mut c = synthetic_config(0);
        assert!(c.validate().is_err());
        c.repetitions = 1;
        c.split = SplitPlan::Fractions {
            labeled: 0.5,
            unlabeled: 0.5,
            test: 0.5,
        };
        assert!(c.validate().is_err());
        c.split = SplitPlan::Counts {
            labeled: 300,
            unlabeled: 100,
            test: 100,
        };
        assert!(c.validate().is_err());
        c.split = SplitPlan::default();
        c.backend = BackendConfig::knn(KChoice::Fixed { k: 500 });
        assert!(matches!(run_sweep(&c), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn missing_error_serializes_as_na() {
        let res = SweepResult::aggregate(
            "epsilon",
            &[0.5],
            vec![vec![Evaluation::from_sums(0.0, 0, 4)]],
        );
        assert_eq!(res.to_csv(), "epsilon,err_mean,err_std,rej_mean,rej_std\n0.5,NA,NA,1,NA\n");
    }

    #[test]
    fn statistics_helpers() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, Some(2.5));
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[2.0]), (Some(2.0), None));
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&[1.0], &[1.0]).is_err());
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn forest_backend_runs() {
        let mut c = synthetic_config(2);
        c.backend = BackendConfig::forest(ForestParams {
            num_trees: 20,
            min_node_size: 5,
            ..ForestParams::default()
        });
        let res = run_sweep(&c).unwrap();
        assert_eq!(res.rows[0].rej_mean, 0.0);
        assert!(res.rows.iter().all(|r| r.err_mean.is_some()));
    }
}
