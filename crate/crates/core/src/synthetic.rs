//! Synthetic models with a known Gaussian conditional law.
//!
//! `X ~ U[0,1]^d` and `Y | X = x ~ N(m(x), sigma(x)^2)` with `m` a polynomial in the first
//! coordinate and `sigma` affine. Every oracle quantity is then available exactly:
//! `Ent(F*_x) = sigma(x) / sqrt(pi)`, the oracle threshold `lambda_eps` and the two terms
//! of the excess risk
//!
//! ```text
//! E[Div(F_X, F*_X) 1{accept}] + E[|Ent(F*_X) - lambda_eps| 1{decision differs from oracle}]
//! ```

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::LabeledDataset;
use crate::dist::{GaussianPredictive, Predictive, WeightedEmpirical};
use crate::error::{Error, Result};
use crate::scoring::{divergence, Score};
use crate::seed;
use crate::selective::{QueryRng, RejectPrediction, SelectivePredictor};

const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Gaussian location-scale model on the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub dim: usize,
    /// `m(x) = sum_j mean_coeffs[j] * x_0^j`.
    pub mean_coeffs: Vec<f64>,
    /// `sigma(x) = sigma_intercept + sigma_slopes . x`.
    pub sigma_intercept: f64,
    pub sigma_slopes: Vec<f64>,
}

impl SyntheticModel {
    pub fn new(
        dim: usize,
        mean_coeffs: Vec<f64>,
        sigma_intercept: f64,
        sigma_slopes: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            dim,
            mean_coeffs,
            sigma_intercept,
            sigma_slopes,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("model dimension must be >= 1".into()));
        }
        if self.sigma_slopes.len() != self.dim {
            return Err(Error::InvalidParameter(format!(
                "{} sigma slopes for dimension {}",
                self.sigma_slopes.len(),
                self.dim
            )));
        }
        let all = self
            .mean_coeffs
            .iter()
            .chain(&self.sigma_slopes)
            .chain(std::iter::once(&self.sigma_intercept));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        let min_sigma =
            self.sigma_intercept + self.sigma_slopes.iter().map(|s| s.min(0.0)).sum::<f64>();
        if min_sigma < 0.0 {
            return Err(Error::InvalidParameter(
                "sigma(x) must be nonnegative on the unit cube".into(),
            ));
        }
        Ok(())
    }

    /// `m(x) = x`, `sigma(x) = x` on `[0, 1]`: entropy is uniform on `[0, 1/sqrt(pi)]`.
    pub fn sigma_linear() -> Self {
        Self::sigma_affine(0.0, 1.0)
    }

    /// `m(x) = x`, `sigma(x) = a + b x`.
    pub fn sigma_affine(a: f64, b: f64) -> Self {
        Self {
            dim: 1,
            mean_coeffs: vec![0.0, 1.0],
            sigma_intercept: a,
            sigma_slopes: vec![b],
        }
    }

    /// `m(x) = x`, `sigma(x) = s`.
    pub fn homoscedastic(s: f64) -> Self {
        Self::sigma_affine(s, 0.0)
    }

    /// Named presets: `sigma-linear`, `sigma-affine a b`, `homoscedastic s`.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let arity = |k: usize| {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "model `{name}` takes {k} parameters, got {}",
                    params.len()
                )))
            }
        };
        let model = match name {
            "sigma-linear" => {
                arity(0)?;
                Self::sigma_linear()
            }
            "sigma-affine" => {
                arity(2)?;
                Self::sigma_affine(params[0], params[1])
            }
            "homoscedastic" => {
                arity(1)?;
                Self::homoscedastic(params[0])
            }
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown synthetic model `{other}`"
                )))
            }
        };
        model.validate()?;
        Ok(model)
    }

    pub fn mean(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.mean_coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * x[0] + c)
    }

    pub fn sigma(&self, x: ArrayView1<'_, f64>) -> f64 {
        let s = self.sigma_intercept
            + self
                .sigma_slopes
                .iter()
                .zip(x.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        s.max(0.0)
    }

    /// `Ent(F*_x) = sigma(x) / sqrt(pi)`.
    pub fn true_entropy(&self, x: ArrayView1<'_, f64>) -> Score<f64> {
        Score::clamped(self.sigma(x) * INV_SQRT_PI)
    }

    /// The conditional law at `x`; a point mass where `sigma(x) = 0`.
    pub fn true_law(&self, x: ArrayView1<'_, f64>) -> Predictive<f64> {
        let (m, s) = (self.mean(x), self.sigma(x));
        match GaussianPredictive::new(m, s) {
            Ok(g) => Predictive::Gaussian(g),
            Err(_) => Predictive::Discrete(
                WeightedEmpirical::point_mass(m).expect("finite model mean"),
            ),
        }
    }

    pub fn sample_features(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed, 0xfea7);
        Array2::from_shape_simple_fn((n, self.dim), || rng.random::<f64>())
    }

    /// `n` i.i.d. labeled draws.
    pub fn sample(&self, n: usize, seed: u64) -> Result<LabeledDataset<f64>> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let x = self.sample_features(n, seed);
        let mut rng = seed::rng(seed, 0x7a76);
        let y = Array1::from_iter(x.outer_iter().map(|row| {
            let z: f64 = rng.sample(StandardNormal);
            self.mean(row) + self.sigma(row) * z
        }));
        LabeledDataset::new(x, y)
    }

    /// Quantile function of `Ent(F*_X)` when it is available in closed form
    /// (one dimension, where entropy is uniform on an interval).
    pub fn entropy_quantile(&self, p: f64) -> Option<f64> {
        if self.dim != 1 {
            return None;
        }
        let (a, b) = (self.sigma_intercept, self.sigma_slopes[0]);
        let s = if b >= 0.0 { a + b * p } else { a + b * (1.0 - p) };
        Some(s * INV_SQRT_PI)
    }

    /// Oracle threshold `lambda_eps = G_Ent^{-1}(1 - eps)`: closed form when available,
    /// otherwise the generalized inverse of `mc_size` Monte-Carlo entropies.
    pub fn oracle_lambda(&self, epsilon: f64, mc_size: usize, seed: u64) -> Result<OracleRule> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {epsilon} outside (0, 1)"
            )));
        }
        let lambda_eps = match self.entropy_quantile(1.0 - epsilon) {
            Some(l) => l,
            None => {
                if mc_size == 0 {
                    return Err(Error::EmptySample);
                }
                let x = self.sample_features(mc_size, seed);
                let ent: Vec<f64> = x.outer_iter().map(|r| self.true_entropy(r).value()).collect();
                WeightedEmpirical::uniform(&ent)?.quantile(1.0 - epsilon)?
            }
        };
        Ok(OracleRule {
            lambda_eps,
            epsilon,
        })
    }
}

/// The optimal fixed-rate rule: accept iff `Ent(F*_x) <= lambda_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRule {
    pub lambda_eps: f64,
    pub epsilon: f64,
}

impl OracleRule {
    pub fn accepts(&self, true_entropy: f64) -> bool {
        true_entropy <= self.lambda_eps
    }
}

/// Predictor that knows the model: returns `F*_x` when the rule accepts.
pub struct OraclePredictor<'a> {
    pub model: &'a SyntheticModel,
    pub lambda: f64,
}

impl SelectivePredictor<f64> for OraclePredictor<'_> {
    fn predict(
        &self,
        x: ArrayView1<'_, f64>,
        _rng: &mut QueryRng,
    ) -> Result<RejectPrediction<Predictive<f64>>> {
        Ok(if self.model.true_entropy(x).value() <= self.lambda {
            RejectPrediction::Accept(self.model.true_law(x))
        } else {
            RejectPrediction::Reject
        })
    }
}

/// The two excess-risk terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessRisk {
    pub divergence_term: f64,
    pub disagreement_term: f64,
}

impl ExcessRisk {
    pub fn total(&self) -> Score<f64> {
        Score::clamped(self.divergence_term + self.disagreement_term)
    }
}

const MC_CHUNK: usize = 256;

/// Monte-Carlo estimate of the excess risk of `predictor` over `mc_size` draws of `X`.
///
/// Draws are processed in fixed chunks, each with its own query generator, so the
/// estimate does not depend on the thread count.
pub fn excess_risk(
    predictor: &dyn SelectivePredictor<f64>,
    model: &SyntheticModel,
    oracle: &OracleRule,
    mc_size: usize,
    seed: u64,
) -> Result<ExcessRisk> {
    if mc_size == 0 {
        return Err(Error::EmptySample);
    }
    let x = model.sample_features(mc_size, seed::mix(seed, 1));
    let chunks: Vec<(f64, f64)> = (0..mc_size.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|c| -> Result<(f64, f64)> {
            let mut rng = QueryRng::new(seed, 2 + c as u64);
            let (mut div, mut dis) = (0.0, 0.0);
            for i in c * MC_CHUNK..((c + 1) * MC_CHUNK).min(mc_size) {
                let row = x.row(i);
                let ent = model.true_entropy(row).value();
                let decision = predictor.predict(row, &mut rng)?;
                if let RejectPrediction::Accept(pred) = &decision {
                    div += divergence(pred, &model.true_law(row)).value();
                }
                if decision.is_reject() == oracle.accepts(ent) {
                    dis += (ent - oracle.lambda_eps).abs();
                }
            }
            Ok((div, dis))
        })
        .collect::<Result<_>>()?;
    let m = mc_size as f64;
    Ok(ExcessRisk {
        divergence_term: chunks.iter().map(|c| c.0).sum::<f64>() / m,
        disagreement_term: chunks.iter().map(|c| c.1).sum::<f64>() / m,
    })
}

/// Monte-Carlo `E[Ent(F*_X) | Ent(F*_X) <= lambda]`, the oracle rule's conditional error.
pub fn oracle_error(model: &SyntheticModel, lambda: f64, mc_size: usize, seed: u64) -> Option<f64> {
    let x = model.sample_features(mc_size, seed);
    let accepted: Vec<f64> = x
        .outer_iter()
        .map(|r| model.true_entropy(r).value())
        .filter(|&e| e <= lambda)
        .collect();
    (!accepted.is_empty()).then(|| accepted.iter().sum::<f64>() / accepted.len() as f64)
}

/// Finite covariate law: point `i` has mass `mass[i]`, entropy `entropy[i]` and
/// divergence `divergence[i]` between the candidate forecast and the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteModel {
    pub entropy: Vec<f64>,
    pub mass: Vec<f64>,
    pub divergence: Vec<f64>,
}

impl FiniteModel {
    /// Model where the forecast equals the truth (zero divergence).
    pub fn exact(entropy: Vec<f64>, mass: Vec<f64>) -> Self {
        let divergence = vec![0.0; entropy.len()];
        Self {
            entropy,
            mass,
            divergence,
        }
    }
}

/// Result of the exhaustive search.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceOptimum {
    pub accept: Vec<bool>,
    /// `E[crps 1{accept}] + lambda * P(reject)`.
    pub risk: f64,
}

impl BruteForceOptimum {
    pub fn rejection_mass(&self, model: &FiniteModel) -> f64 {
        let total: f64 = model.mass.iter().sum();
        self.accept
            .iter()
            .zip(&model.mass)
            .filter(|(&a, _)| !a)
            .map(|(_, m)| m)
            .sum::<f64>()
            / total
    }

    /// `E[crps | accept]`, `None` if nothing is accepted.
    pub fn accepted_error(&self, model: &FiniteModel) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in (0..self.accept.len()).filter(|&i| self.accept[i]) {
            num += model.mass[i] * (model.entropy[i] + model.divergence[i]);
            den += model.mass[i];
        }
        (den > 0.0).then(|| num / den)
    }
}

pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Minimizes `R_lambda` over all `2^m` accept/reject assignments.
///
/// Per point the accepted cost is `mass * (div + ent)` and the rejected cost
/// `mass * lambda`. Among assignments with equal risk the one accepting more points wins,
/// so boundary points with `ent = lambda` are accepted.
pub fn brute_force_optimal(model: &FiniteModel, lambda: f64) -> Result<BruteForceOptimum> {
    let m = model.entropy.len();
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::SupportTooLarge {
            size: m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if model.mass.len() != m || model.divergence.len() != m {
        return Err(Error::LengthMismatch {
            values: m,
            weights: model.mass.len(),
        });
    }
    if model.mass.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidParameter("masses must be >= 0".into()));
    }
    let total: f64 = model.mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let accept_cost: Vec<f64> = (0..m)
        .map(|i| model.mass[i] / total * (model.divergence[i] + model.entropy[i]))
        .collect();
    let reject_cost: Vec<f64> = (0..m).map(|i| model.mass[i] / total * lambda).collect();

    let mut best: Option<(f64, u32, u32)> = None;
    for mask in 0u32..(1u32 << m) {
        let risk: f64 = (0..m)
            .map(|i| {
                if mask >> i & 1 == 1 {
                    accept_cost[i]
                } else {
                    reject_cost[i]
                }
            })
            .sum();
        let accepted = mask.count_ones();
        let better = match best {
            None => true,
            Some((r, _, a)) => {
                let tol = 1e-14 * (1.0 + r.abs());
                risk < r - tol || ((risk - r).abs() <= tol && accepted > a)
            }
        };
        if better {
            best = Some((risk, mask, accepted));
        }
    }
    let (risk, mask, _) = best.unwrap();
    Ok(BruteForceOptimum {
        accept: (0..m).map(|i| mask >> i & 1 == 1).collect(),
        risk,
    })
}
