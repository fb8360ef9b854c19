//! One-dimensional predictive distributions.
//!
//! [`WeightedEmpirical`] is the representation every backend produces: a sorted, merged
//! support with normalized weights. [`GaussianPredictive`] covers the closed-form CRPS
//! path and the synthetic ground truth. [`CdfFunction`] wraps any evaluable CDF with
//! finite integration bounds so the quadrature oracles can treat all of them alike.

use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

/// Discrete distribution `sum_i w_i * delta(y_i)` with strictly increasing support.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEmpirical<T> {
    points: Vec<T>,
    weights: Vec<T>,
    // cumulative[i] = sum of weights[..=i]; the last entry is exactly one.
    cumulative: Vec<T>,
}

impl<T: Real> WeightedEmpirical<T> {
    /// Builds a distribution from an unsorted weighted sample.
    ///
    /// Values are sorted, exactly-equal values are merged (weights summed) and the
    /// weights are renormalized to sum to one. Zero weights are kept out of the support.
    pub fn from_weighted_sample(values: &[T], weights: &[T]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.len() != weights.len() {
            return Err(Error::LengthMismatch {
                values: values.len(),
                weights: weights.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample values"));
        }
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite("sample weights"));
            }
            if w < T::zero() {
                return Err(Error::NegativeWeight {
                    index,
                    weight: w.as_f64(),
                });
            }
        }
        let total: T = weights.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::ZeroTotalWeight);
        }

        let mut pairs: Vec<(T, T)> = values
            .iter()
            .copied()
            .zip(weights.iter().copied())
            .filter(|&(_, w)| w > T::zero())
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values are ordered"));

        let mut points: Vec<T> = Vec::with_capacity(pairs.len());
        let mut merged: Vec<T> = Vec::with_capacity(pairs.len());
        for (v, w) in pairs {
            match points.last() {
                Some(&last) if last == v => *merged.last_mut().unwrap() += w,
                _ => {
                    points.push(v);
                    merged.push(w);
                }
            }
        }
        let weights: Vec<T> = merged.into_iter().map(|w| w / total).collect();
        Ok(Self::from_sorted_parts(points, weights))
    }

    /// Uniform weights over `values`.
    pub fn uniform(values: &[T]) -> Result<Self> {
        Self::from_weighted_sample(values, &vec![T::one(); values.len()])
    }

    pub fn point_mass(at: T) -> Result<Self> {
        Self::from_weighted_sample(&[at], &[T::one()])
    }

    fn from_sorted_parts(points: Vec<T>, weights: Vec<T>) -> Self {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = T::zero();
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = T::one();
        }
        Self {
            points,
            weights,
            cumulative,
        }
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Running sums of the weights; entry `i` equals `cdf(points[i])`.
    pub fn cumulative(&self) -> &[T] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min(&self) -> T {
        self.points[0]
    }

    pub fn max(&self) -> T {
        self.points[self.points.len() - 1]
    }

    pub fn mean(&self) -> T {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&y, &w)| y * w)
            .sum()
    }

    /// Right-continuous step CDF: total weight of the points `<= u`.
    pub fn cdf(&self, u: T) -> T {
        let below = self.points.partition_point(|&p| p <= u);
        if below == 0 {
            T::zero()
        } else {
            self.cumulative[below - 1]
        }
    }

    /// Generalized inverse `inf { t : cdf(t) >= p }` for `p` in `(0, 1]`.
    pub fn quantile(&self, p: T) -> Result<T> {
        if !(p > T::zero() && p <= T::one()) {
            return Err(Error::InvalidProbability(p.as_f64()));
        }
        let idx = self.cumulative.partition_point(|&c| c < p);
        Ok(self.points[idx.min(self.points.len() - 1)])
    }

    /// Adds `shift` to every support point.
    pub fn translate(&self, shift: T) -> Self {
        Self::from_sorted_parts(
            self.points.iter().map(|&p| p + shift).collect(),
            self.weights.clone(),
        )
    }

    /// Draws from the distribution given a uniform variate in `[0, 1)`.
    pub fn inverse_sample(&self, uniform: T) -> T {
        let idx = self.cumulative.partition_point(|&c| c <= uniform);
        self.points[idx.min(self.points.len() - 1)]
    }
}

/// Normal predictive distribution `N(mean, stddev^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPredictive<T> {
    mean: T,
    stddev: T,
}

impl<T: Real> GaussianPredictive<T> {
    pub fn new(mean: T, stddev: T) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::NonFinite("gaussian mean"));
        }
        if !(stddev > T::zero() && stddev.is_finite()) {
            return Err(Error::InvalidStddev(stddev.as_f64()));
        }
        Ok(Self { mean, stddev })
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn stddev(&self) -> T {
        self.stddev
    }

    pub fn cdf(&self, u: T) -> T {
        ((u - self.mean) / self.stddev).norm_cdf()
    }

    /// Integration window `mean +- 10 stddev`.
    pub fn bounds(&self) -> (T, T) {
        let half = T::of(10.0) * self.stddev;
        (self.mean - half, self.mean + half)
    }
}

/// Either of the two concrete predictive representations.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictive<T> {
    Discrete(WeightedEmpirical<T>),
    Gaussian(GaussianPredictive<T>),
}

impl<T: Real> Predictive<T> {
    pub fn cdf(&self, u: T) -> T {
        match self {
            Predictive::Discrete(d) => d.cdf(u),
            Predictive::Gaussian(g) => g.cdf(u),
        }
    }

    pub fn bounds(&self) -> (T, T) {
        match self {
            Predictive::Discrete(d) => (d.min(), d.max()),
            Predictive::Gaussian(g) => g.bounds(),
        }
    }

    /// Jump locations of the CDF.
    pub fn breakpoints(&self) -> &[T] {
        match self {
            Predictive::Discrete(d) => d.points(),
            Predictive::Gaussian(_) => &[],
        }
    }

    pub fn to_cdf_function(&self) -> CdfFunction<'_, T> {
        let (lo, hi) = self.bounds();
        CdfFunction {
            eval: Box::new(move |u| self.cdf(u)),
            lo,
            hi,
            breakpoints: self.breakpoints().to_vec(),
        }
    }
}

impl<T> From<WeightedEmpirical<T>> for Predictive<T> {
    fn from(d: WeightedEmpirical<T>) -> Self {
        Predictive::Discrete(d)
    }
}

impl<T> From<GaussianPredictive<T>> for Predictive<T> {
    fn from(g: GaussianPredictive<T>) -> Self {
        Predictive::Gaussian(g)
    }
}

/// Tolerance on `H(lo)` and `1 - H(hi)` for a declared integration window.
pub const CDF_TAIL_TOLERANCE: f64 = 1e-9;

/// An evaluable CDF with a finite window `[lo, hi]` outside which it is 0 or 1.
///
/// `breakpoints` lists known discontinuities; quadrature splits there so that step
/// functions integrate exactly.
pub struct CdfFunction<'a, T> {
    eval: Box<dyn Fn(T) -> T + Send + Sync + 'a>,
    lo: T,
    hi: T,
    breakpoints: Vec<T>,
}

impl<'a, T: Real> CdfFunction<'a, T> {
    /// Wraps a user CDF, checking the tail conditions at the window ends.
    pub fn new(
        eval: impl Fn(T) -> T + Send + Sync + 'a,
        lo: T,
        hi: T,
        mut breakpoints: Vec<T>,
    ) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidCdfBounds(format!(
                "[{}, {}] is not a finite interval",
                lo, hi
            )));
        }
        let tol = T::of(CDF_TAIL_TOLERANCE);
        let (f_lo, f_hi) = (eval(lo - lo.abs().max(T::one()) * T::epsilon()), eval(hi));
        if f_lo > tol || f_hi < T::one() - tol {
            return Err(Error::InvalidCdfBounds(format!(
                "H(lo) = {}, H(hi) = {}",
                f_lo, f_hi
            )));
        }
        breakpoints.retain(|b| b.is_finite());
        breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breakpoints.dedup();
        Ok(Self {
            eval: Box::new(eval),
            lo,
            hi,
            breakpoints,
        })
    }

    pub fn from_empirical(d: &'a WeightedEmpirical<T>) -> Self {
        CdfFunction {
            eval: Box::new(move |u| d.cdf(u)),
            lo: d.min(),
            hi: d.max(),
            breakpoints: d.points().to_vec(),
        }
    }

    pub fn from_gaussian(g: GaussianPredictive<T>) -> Self {
        let (lo, hi) = g.bounds();
        CdfFunction {
            eval: Box::new(move |u| g.cdf(u)),
            lo,
            hi,
            breakpoints: Vec::new(),
        }
    }

    pub fn eval(&self, u: T) -> T {
        (self.eval)(u)
    }

    pub fn bounds(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }
}

impl<T: fmt::Debug> fmt::Debug for CdfFunction<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CdfFunction")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("breakpoints", &self.breakpoints.len())
            .finish()
    }
}
