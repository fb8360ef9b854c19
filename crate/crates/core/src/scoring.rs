//! CRPS and its entropy/divergence decomposition.
//!
//! For a forecast CDF `H` and outcome `y`, `crps(H, y) = int (H(u) - 1{y <= u})^2 du`.
//! Averaging over `Y ~ K` gives `Ent(K) + Div(H, K)` with `Ent(K) = int K (1 - K)` and
//! `Div(H, K) = int (H - K)^2`. Closed forms are provided for discrete and Gaussian
//! forecasts; the `*_numeric` functions integrate the defining integrals directly and act
//! as oracles for them.

use std::fmt;

use crate::dist::{CdfFunction, GaussianPredictive, Predictive, WeightedEmpirical};
use crate::error::{Error, Result};
use crate::quadrature::integrate_piecewise;
use crate::real::Real;

/// Absolute tolerance of the quadrature oracles (`f64`).
pub const QUADRATURE_TOLERANCE: f64 = 1e-10;

/// A nonnegative, finite score value (CRPS, entropy, divergence or distance).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Score<T>(T);

impl<T: Real> Score<T> {
    pub fn new(value: T) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("score"));
        }
        if value < T::zero() {
            return Err(Error::InvalidParameter(format!(
                "score must be nonnegative, got {value}"
            )));
        }
        Ok(Score(value))
    }

    // Closed forms built from differences can land a few ulps below zero.
    pub(crate) fn clamped(value: T) -> Self {
        debug_assert!(value.is_finite(), "non-finite score {value:?}");
        Score(value.max(T::zero()))
    }

    pub fn value(self) -> T {
        self.0
    }
}

impl<T: fmt::Display> fmt::Display for Score<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn oracle_tolerance<T: Real>() -> T {
    T::of(QUADRATURE_TOLERANCE).max(T::epsilon() * T::of(64.0))
}

fn check_monotone<T: Real>(h: &CdfFunction<'_, T>, lo: T, hi: T) -> Result<()> {
    const GRID: usize = 256;
    let slack = T::of(1e-12).max(T::epsilon() * T::of(4.0));
    let mut probes: Vec<T> = (0..=GRID)
        .map(|i| lo + (hi - lo) * T::of_usize(i) / T::of_usize(GRID))
        .collect();
    probes.extend(h.breakpoints().iter().copied());
    probes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut prev = h.eval(probes[0]);
    for &u in &probes[1..] {
        let cur = h.eval(u);
        if !cur.is_finite() || cur < prev - slack || cur < -slack || cur > T::one() + slack {
            return Err(Error::NonMonotoneCdf { at: u.as_f64() });
        }
        prev = cur;
    }
    Ok(())
}

/// CRPS by adaptive quadrature of the defining integral.
///
/// The integration window is the CDF's declared bounds widened to contain `y`.
pub fn crps_numeric<T: Real>(h: &CdfFunction<'_, T>, y: T) -> Result<Score<T>> {
    if !y.is_finite() {
        return Err(Error::NonFinite("observation"));
    }
    let (lo, hi) = h.bounds();
    let (lo, hi) = (lo.min(y), hi.max(y));
    check_monotone(h, lo, hi)?;
    let mut cuts = h.breakpoints().to_vec();
    cuts.push(y);
    let value = integrate_piecewise(
        |u| {
            let step = if y <= u { T::one() } else { T::zero() };
            let d = h.eval(u) - step;
            d * d
        },
        lo,
        hi,
        &cuts,
        oracle_tolerance(),
    );
    Ok(Score::clamped(value))
}

/// `int H(1 - H)` by quadrature.
pub fn entropy_numeric<T: Real>(h: &CdfFunction<'_, T>) -> Result<Score<T>> {
    let (lo, hi) = h.bounds();
    check_monotone(h, lo, hi)?;
    let value = integrate_piecewise(
        |u| {
            let p = h.eval(u);
            p * (T::one() - p)
        },
        lo,
        hi,
        h.breakpoints(),
        oracle_tolerance(),
    );
    Ok(Score::clamped(value))
}

fn pairwise_numeric<T: Real>(
    h: &CdfFunction<'_, T>,
    k: &CdfFunction<'_, T>,
    pointwise: impl Fn(T) -> T,
) -> Result<Score<T>> {
    let (h_lo, h_hi) = h.bounds();
    let (k_lo, k_hi) = k.bounds();
    let (lo, hi) = (h_lo.min(k_lo), h_hi.max(k_hi));
    check_monotone(h, lo, hi)?;
    check_monotone(k, lo, hi)?;
    let mut cuts = h.breakpoints().to_vec();
    cuts.extend_from_slice(k.breakpoints());
    let value = integrate_piecewise(
        |u| pointwise(h.eval(u) - k.eval(u)),
        lo,
        hi,
        &cuts,
        oracle_tolerance(),
    );
    Ok(Score::clamped(value))
}

/// `int (H - K)^2` by quadrature.
pub fn divergence_numeric<T: Real>(
    h: &CdfFunction<'_, T>,
    k: &CdfFunction<'_, T>,
) -> Result<Score<T>> {
    pairwise_numeric(h, k, |d| d * d)
}

/// `int |H - K|` by quadrature.
pub fn wasserstein1_numeric<T: Real>(
    h: &CdfFunction<'_, T>,
    k: &CdfFunction<'_, T>,
) -> Result<Score<T>> {
    pairwise_numeric(h, k, |d| d.abs())
}

/// CRPS of a discrete forecast: `sum_i w_i |y_i - y| - sum_{i<j} w_i w_j |y_i - y_j|`.
///
/// The pair sum is `Ent(H)`, evaluated with prefix sums over the sorted support.
pub fn crps_discrete<T: Real>(h: &WeightedEmpirical<T>, y: T) -> Score<T> {
    let spread: T = h
        .points()
        .iter()
        .zip(h.weights())
        .map(|(&p, &w)| w * (p - y).abs())
        .sum();
    Score::clamped(spread - entropy_discrete(h).value())
}

/// Closed-form CRPS of `N(m, s^2)`: `s (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi))`.
pub fn crps_gaussian<T: Real>(g: &GaussianPredictive<T>, y: T) -> Score<T> {
    let s = g.stddev();
    let z = (y - g.mean()) / s;
    let two = T::of(2.0);
    let inv_sqrt_pi = T::FRAC_2_SQRT_PI() / two;
    Score::clamped(s * (z * (two * z.norm_cdf() - T::one()) + two * z.norm_pdf() - inv_sqrt_pi))
}

/// Convenience wrapper over [`crps_gaussian`] that validates `stddev`.
pub fn crps_gaussian_params<T: Real>(mean: T, stddev: T, y: T) -> Result<Score<T>> {
    Ok(crps_gaussian(&GaussianPredictive::new(mean, stddev)?, y))
}

/// `Ent(H) = sum_i sum_j w_i w_j (y_j - y_i) 1{y_i < y_j}`.
///
/// Evaluated as `sum_k F_k (1 - F_k) (y_{k+1} - y_k)` where `F_k` is the prefix weight
/// and `1 - F_k` the suffix weight, which is the same sum regrouped by gap.
pub fn entropy_discrete<T: Real>(h: &WeightedEmpirical<T>) -> Score<T> {
    let points = h.points();
    let weights = h.weights();
    let n = points.len();
    if n < 2 {
        return Score::clamped(T::zero());
    }
    let mut suffix = vec![T::zero(); n];
    for i in (0..n - 1).rev() {
        suffix[i] = suffix[i + 1] + weights[i + 1];
    }
    let mut prefix = T::zero();
    let mut total = T::zero();
    for i in 0..n - 1 {
        prefix += weights[i];
        total += prefix * suffix[i] * (points[i + 1] - points[i]);
    }
    Score::clamped(total)
}

/// `Ent(N(m, s^2)) = s / sqrt(pi)`.
pub fn entropy_gaussian<T: Real>(g: &GaussianPredictive<T>) -> Score<T> {
    Score::clamped(g.stddev() * T::FRAC_2_SQRT_PI() / T::of(2.0))
}

pub fn entropy<T: Real>(h: &Predictive<T>) -> Score<T> {
    match h {
        Predictive::Discrete(d) => entropy_discrete(d),
        Predictive::Gaussian(g) => entropy_gaussian(g),
    }
}

pub fn crps<T: Real>(h: &Predictive<T>, y: T) -> Score<T> {
    match h {
        Predictive::Discrete(d) => crps_discrete(d, y),
        Predictive::Gaussian(g) => crps_gaussian(g, y),
    }
}

// Integral of f(H(u) - K(u)) for two step CDFs, walking the merged support.
fn discrete_pair_integral<T: Real>(
    h: &WeightedEmpirical<T>,
    k: &WeightedEmpirical<T>,
    f: impl Fn(T) -> T,
) -> T {
    let (hp, hc) = (h.points(), h.cumulative());
    let (kp, kc) = (k.points(), k.cumulative());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fh, mut fk) = (T::zero(), T::zero());
    let mut prev: Option<T> = None;
    let mut total = T::zero();
    while i < hp.len() || j < kp.len() {
        let next = match (hp.get(i), kp.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            total += f(fh - fk) * (next - p);
        }
        while i < hp.len() && hp[i] == next {
            fh = hc[i];
            i += 1;
        }
        while j < kp.len() && kp[j] == next {
            fk = kc[j];
            j += 1;
        }
        prev = Some(next);
    }
    total
}

// E|X - Y| for independent X ~ N(m1, s1^2), Y ~ N(m2, s2^2).
fn gaussian_mean_abs_difference<T: Real>(a: &GaussianPredictive<T>, b: &GaussianPredictive<T>) -> T {
    let s = (a.stddev() * a.stddev() + b.stddev() * b.stddev()).sqrt();
    let mu = a.mean() - b.mean();
    let z = mu / s;
    let two = T::of(2.0);
    s * (two * z.norm_pdf() + z * (two * z.norm_cdf() - T::one()))
}

/// Squared Cramér distance `int (H - K)^2`.
///
/// Exact for every pair: discrete pairs integrate the step difference piecewise; pairs
/// involving a Gaussian use `Div(H, K) = E_{Y~K} crps(H, Y) - Ent(K)` with the Gaussian
/// expectations in closed form.
pub fn divergence<T: Real>(h: &Predictive<T>, k: &Predictive<T>) -> Score<T> {
    let value = match (h, k) {
        (Predictive::Discrete(a), Predictive::Discrete(b)) => {
            discrete_pair_integral(a, b, |d| d * d)
        }
        (Predictive::Discrete(d), Predictive::Gaussian(g))
        | (Predictive::Gaussian(g), Predictive::Discrete(d)) => {
            let expected: T = d
                .points()
                .iter()
                .zip(d.weights())
                .map(|(&y, &w)| w * crps_gaussian(g, y).value())
                .sum();
            expected - entropy_discrete(d).value()
        }
        (Predictive::Gaussian(a), Predictive::Gaussian(b)) => {
            gaussian_mean_abs_difference(a, b)
                - entropy_gaussian(a).value()
                - entropy_gaussian(b).value()
        }
    };
    Score::clamped(value)
}

/// Wasserstein-1 distance `int |H - K|`; exact for discrete pairs, quadrature otherwise.
pub fn wasserstein1<T: Real>(h: &Predictive<T>, k: &Predictive<T>) -> Score<T> {
    match (h, k) {
        (Predictive::Discrete(a), Predictive::Discrete(b)) => {
            Score::clamped(discrete_pair_integral(a, b, |d| d.abs()))
        }
        _ => wasserstein1_numeric(&h.to_cdf_function(), &k.to_cdf_function())
            .expect("valid predictive CDFs are monotone"),
    }
}

/// Expected CRPS of forecast `H` against outcomes drawn from `K`: `Ent(K) + Div(H, K)`.
pub fn expected_crps<T: Real>(h: &Predictive<T>, k: &Predictive<T>) -> Score<T> {
    Score::clamped(entropy(k).value() + divergence(h, k).value())
}
