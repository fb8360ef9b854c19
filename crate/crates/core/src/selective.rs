//! Entropy-threshold prediction with a reject option.
//!
//! A query is rejected when the predicted CRPS entropy `Ent(F_x)` is large. Two rules:
//!
//! * the fixed-threshold rule accepts iff `Ent(F_x) <= lambda`;
//! * the plug-in epsilon rule calibrates the threshold on unlabeled data. Jittered scores
//!   `Ent(F_{X_i}) + zeta_i`, `zeta_i ~ U[0, u]`, fill a [`CalibrationTable`] whose
//!   empirical CDF `G` is evaluated at the query's jittered score `s`; the query is
//!   accepted iff `G(s) <= 1 - epsilon`.

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::WeightModel;
use crate::dist::{Predictive, WeightedEmpirical};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scoring::entropy_discrete;
use crate::seed;

/// Jitter magnitude used in the published experiments.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// How the jitter magnitude `u` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Jitter {
    /// `u = 1e-10`.
    Default,
    /// `u = 1 / n` for `n` labeled training points.
    InverseN,
    Fixed(f64),
}

impl Jitter {
    pub fn magnitude(self, n_labeled: usize) -> f64 {
        match self {
            Jitter::Default => DEFAULT_JITTER,
            Jitter::InverseN => 1.0 / n_labeled.max(1) as f64,
            Jitter::Fixed(u) => u,
        }
    }
}

/// Either the accepted prediction or the reject symbol.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectPrediction<D> {
    Accept(D),
    Reject,
}

impl<D> RejectPrediction<D> {
    pub fn is_reject(&self) -> bool {
        matches!(self, RejectPrediction::Reject)
    }

    pub fn accepted(&self) -> Option<&D> {
        match self {
            RejectPrediction::Accept(d) => Some(d),
            RejectPrediction::Reject => None,
        }
    }

    pub fn map<E>(self, f: impl FnOnce(D) -> E) -> RejectPrediction<E> {
        match self {
            RejectPrediction::Accept(d) => RejectPrediction::Accept(f(d)),
            RejectPrediction::Reject => RejectPrediction::Reject,
        }
    }
}

/// Uniform variates for query perturbations.
///
/// Each worker owns its stream; streams are derived from a seed and an index so that
/// concurrent prediction never shares generator state.
#[derive(Debug, Clone)]
pub struct QueryRng(ChaCha8Rng);

impl QueryRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        QueryRng(seed::rng(seed, stream))
    }

    /// Next variate in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random()
    }

    /// Next `zeta ~ U[0, magnitude]`.
    pub fn zeta<T: Real>(&mut self, magnitude: f64) -> T {
        T::of(magnitude * self.uniform())
    }
}

fn check_jitter(u: f64) -> Result<()> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "jitter magnitude {u} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Sorted jittered entropy scores of the unlabeled split.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable<T> {
    scores: Vec<T>,
    jitter: f64,
    seed: u64,
}

impl<T: Real> CalibrationTable<T> {
    /// Table from precomputed (already jittered) scores.
    pub fn from_scores(mut scores: Vec<T>, jitter: f64, seed: u64) -> Result<Self> {
        check_jitter(jitter)?;
        if scores.is_empty() {
            return Err(Error::EmptySample);
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("calibration scores"));
        }
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self {
            scores,
            jitter,
            seed,
        })
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fraction of stored scores `<= s`.
    pub fn ecdf(&self, s: T) -> T {
        T::of_usize(self.count_at_most(s)) / T::of_usize(self.scores.len())
    }

    pub fn count_at_most(&self, s: T) -> usize {
        self.scores.partition_point(|&v| v <= s)
    }

    /// Query generator `stream`, derived from this table's seed and distinct from the
    /// stream that jittered the table itself.
    pub fn query_rng(&self, stream: u64) -> QueryRng {
        QueryRng::new(self.seed, stream.wrapping_add(1))
    }
}

/// Plug-in entropy of the prediction at `x`.
pub fn predicted_entropy<T: Real, R: WeightModel<T> + ?Sized>(
    r: &R,
    x: ArrayView1<'_, T>,
) -> Result<(WeightedEmpirical<T>, T)> {
    let pred = r.predict(x)?;
    let ent = entropy_discrete(&pred).value();
    if !ent.is_finite() {
        return Err(Error::NonFinite("predicted entropy"));
    }
    Ok((pred, ent))
}

/// Calibration table from the unlabeled rows: `Ent(F_x) + zeta`, `zeta ~ U[0, u]`.
///
/// Jitter draws come from stream 0 of `seed`, one per row in row order.
pub fn entropy_scores<T: Real, R: WeightModel<T> + ?Sized>(
    r: &R,
    unlabeled: ArrayView2<'_, T>,
    u: f64,
    seed: u64,
) -> Result<CalibrationTable<T>> {
    check_jitter(u)?;
    if unlabeled.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    if unlabeled.ncols() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: r.dim(),
            found: unlabeled.ncols(),
        });
    }
    let mut rng = QueryRng::new(seed, 0);
    let mut scores = Vec::with_capacity(unlabeled.nrows());
    for x in unlabeled.outer_iter() {
        let (_, ent) = predicted_entropy(r, x)?;
        scores.push(ent + rng.zeta::<T>(u));
    }
    CalibrationTable::from_scores(scores, u, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rule {
    NeverReject,
    AlwaysReject,
    Quantile(f64),
}

/// Target rejection rate with its calibration table.
#[derive(Debug, Clone)]
pub struct EpsilonPolicy<T> {
    epsilon: f64,
    rule: Rule,
    calibration: CalibrationTable<T>,
}

impl<T: Real> EpsilonPolicy<T> {
    /// `epsilon` in `[0, 1]`; `0` never rejects and `1` always rejects.
    pub fn new(epsilon: f64, calibration: CalibrationTable<T>) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {epsilon} outside [0, 1]"
            )));
        }
        let rule = if epsilon == 0.0 {
            Rule::NeverReject
        } else if epsilon == 1.0 {
            Rule::AlwaysReject
        } else {
            Rule::Quantile(epsilon)
        };
        Ok(Self {
            epsilon,
            rule,
            calibration,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn calibration(&self) -> &CalibrationTable<T> {
        &self.calibration
    }

    /// Accept iff `G(score) <= 1 - epsilon` for an already jittered score.
    pub fn accepts(&self, score: T) -> bool {
        match self.rule {
            Rule::NeverReject => true,
            Rule::AlwaysReject => false,
            Rule::Quantile(eps) => self.calibration.ecdf(score) <= T::of(1.0 - eps),
        }
    }

    /// Largest table score the rule accepts, i.e. the `m`-th order statistic with `m`
    /// the largest count satisfying `m / N <= 1 - epsilon`.
    ///
    /// `None` when no table score is accepted. For a table of distinct scores,
    /// thresholding at this value reproduces [`EpsilonPolicy::accepts`] at every table
    /// score.
    pub fn threshold(&self) -> Option<T> {
        let scores = self.calibration.scores();
        let n = scores.len();
        let m = match self.rule {
            Rule::NeverReject => n,
            Rule::AlwaysReject => 0,
            Rule::Quantile(eps) => {
                let bound = T::of(1.0 - eps);
                (0..=n)
                    .rev()
                    .find(|&m| T::of_usize(m) / T::of_usize(n) <= bound)
                    .unwrap_or(0)
            }
        };
        (m > 0).then(|| scores[m - 1])
    }
}

/// Plug-in epsilon prediction at `x` with query perturbation `zeta`.
pub fn predict_epsilon<T: Real, R: WeightModel<T> + ?Sized>(
    policy: &EpsilonPolicy<T>,
    r: &R,
    x: ArrayView1<'_, T>,
    zeta: T,
) -> Result<RejectPrediction<WeightedEmpirical<T>>> {
    if policy.rule == Rule::AlwaysReject {
        return Ok(RejectPrediction::Reject);
    }
    let (pred, ent) = predicted_entropy(r, x)?;
    Ok(if policy.accepts(ent + zeta) {
        RejectPrediction::Accept(pred)
    } else {
        RejectPrediction::Reject
    })
}

fn check_lambda<T: Real>(lambda: T) -> Result<()> {
    if lambda.is_nan() || lambda < T::zero() {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} must be >= 0"
        )));
    }
    Ok(())
}

/// Fixed-threshold prediction: accept iff `Ent(F_x) <= lambda` (`lambda` may be infinite).
pub fn predict_lambda<T: Real, R: WeightModel<T> + ?Sized>(
    r: &R,
    lambda: T,
    x: ArrayView1<'_, T>,
) -> Result<RejectPrediction<WeightedEmpirical<T>>> {
    check_lambda(lambda)?;
    let (pred, ent) = predicted_entropy(r, x)?;
    Ok(if ent <= lambda {
        RejectPrediction::Accept(pred)
    } else {
        RejectPrediction::Reject
    })
}

/// A predictor with reject option, usable by the evaluation code.
///
/// `rng` supplies any per-query randomness; callers own one generator per worker.
pub trait SelectivePredictor<T: Real>: Sync {
    fn predict(
        &self,
        x: ArrayView1<'_, T>,
        rng: &mut QueryRng,
    ) -> Result<RejectPrediction<Predictive<T>>>;
}

/// [`predict_epsilon`] as a [`SelectivePredictor`]; `zeta` is drawn with the
/// calibration table's jitter magnitude, one uniform per query.
pub struct PluginEpsilon<'a, T, R: ?Sized> {
    pub regressor: &'a R,
    pub policy: &'a EpsilonPolicy<T>,
}

impl<T: Real, R: WeightModel<T> + ?Sized> SelectivePredictor<T> for PluginEpsilon<'_, T, R> {
    fn predict(
        &self,
        x: ArrayView1<'_, T>,
        rng: &mut QueryRng,
    ) -> Result<RejectPrediction<Predictive<T>>> {
        let zeta = rng.zeta::<T>(self.policy.calibration().jitter());
        Ok(predict_epsilon(self.policy, self.regressor, x, zeta)?.map(Predictive::Discrete))
    }
}

/// [`predict_lambda`] as a [`SelectivePredictor`].
pub struct PluginLambda<'a, T, R: ?Sized> {
    pub regressor: &'a R,
    pub lambda: T,
}

impl<T: Real, R: WeightModel<T> + ?Sized> SelectivePredictor<T> for PluginLambda<'_, T, R> {
    fn predict(
        &self,
        x: ArrayView1<'_, T>,
        _rng: &mut QueryRng,
    ) -> Result<RejectPrediction<Predictive<T>>> {
        Ok(predict_lambda(self.regressor, self.lambda, x)?.map(Predictive::Discrete))
    }
}

/// Accepts everything.
pub struct NeverReject<'a, R: ?Sized>(pub &'a R);

impl<T: Real, R: WeightModel<T> + ?Sized> SelectivePredictor<T> for NeverReject<'_, R> {
    fn predict(
        &self,
        x: ArrayView1<'_, T>,
        _rng: &mut QueryRng,
    ) -> Result<RejectPrediction<Predictive<T>>> {
        Ok(RejectPrediction::Accept(Predictive::Discrete(self.0.predict(x)?)))
    }
}

/// Rejects everything.
pub struct AlwaysReject;

impl<T: Real> SelectivePredictor<T> for AlwaysReject {
    fn predict(
        &self,
        _x: ArrayView1<'_, T>,
        _rng: &mut QueryRng,
    ) -> Result<RejectPrediction<Predictive<T>>> {
        Ok(RejectPrediction::Reject)
    }
}
