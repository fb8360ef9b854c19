//! Weight-generating regressors.
//!
//! Both backends are local-average estimators: a query `x` yields probability weights
//! `w_i(x)` over the training points and the predictive distribution is
//! `sum_i w_i(x) delta(Y_i)`.

mod forest;
mod knn;
mod select;

pub use forest::{forest_fit, ForestParams, ForestRegressor};
pub use knn::{knn_fit, KnnRegressor};
pub use select::{select_k, select_mtry};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::dist::WeightedEmpirical;
use crate::error::{Error, Result};
use crate::real::Real;

/// Feature matrix (one row per observation) with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    features: Array2<T>,
    targets: Array1<T>,
}

impl<T: Real> LabeledDataset<T> {
    pub fn new(features: Array2<T>, targets: Array1<T>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptySample);
        }
        if features.nrows() != targets.len() {
            return Err(Error::LengthMismatch {
                values: features.nrows(),
                weights: targets.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("targets"));
        }
        Ok(Self { features, targets })
    }

    pub fn features(&self) -> ArrayView2<'_, T> {
        self.features.view()
    }

    pub fn targets(&self) -> ArrayView1<'_, T> {
        self.targets.view()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            targets: self.targets.select(Axis(0), indices),
        }
    }

    pub fn into_parts(self) -> (Array2<T>, Array1<T>) {
        (self.features, self.targets)
    }
}

/// A fitted model that turns a query into weights over its training targets.
pub trait WeightModel<T: Real>: Send + Sync {
    /// Number of features a query must have.
    fn dim(&self) -> usize;

    fn targets(&self) -> &[T];

    /// Nonzero `(training index, weight)` pairs; the weights sum to one.
    fn weights(&self, x: ArrayView1<'_, T>) -> Result<Vec<(usize, T)>>;

    /// Predictive distribution at `x`.
    fn predict(&self, x: ArrayView1<'_, T>) -> Result<WeightedEmpirical<T>> {
        let weights = self.weights(x)?;
        let targets = self.targets();
        let (values, w): (Vec<T>, Vec<T>) = weights.iter().map(|&(i, w)| (targets[i], w)).unzip();
        WeightedEmpirical::from_weighted_sample(&values, &w)
    }
}

pub(crate) fn check_query<T: Real>(x: ArrayView1<'_, T>, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query"));
    }
    Ok(())
}

/// Either fitted backend.
#[derive(Debug, Clone)]
pub enum Regressor<T> {
    Knn(KnnRegressor<T>),
    Forest(ForestRegressor<T>),
}

impl<T: Real> WeightModel<T> for Regressor<T> {
    fn dim(&self) -> usize {
        match self {
            Regressor::Knn(r) => r.dim(),
            Regressor::Forest(r) => r.dim(),
        }
    }

    fn targets(&self) -> &[T] {
        match self {
            Regressor::Knn(r) => r.targets(),
            Regressor::Forest(r) => r.targets(),
        }
    }

    fn weights(&self, x: ArrayView1<'_, T>) -> Result<Vec<(usize, T)>> {
        match self {
            Regressor::Knn(r) => r.weights(x),
            Regressor::Forest(r) => r.weights(x),
        }
    }
}

impl<T> From<KnnRegressor<T>> for Regressor<T> {
    fn from(r: KnnRegressor<T>) -> Self {
        Regressor::Knn(r)
    }
}

impl<T> From<ForestRegressor<T>> for Regressor<T> {
    fn from(r: ForestRegressor<T>) -> Self {
        Regressor::Forest(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::<f64>::new(Array2::zeros((0, 2)), Array1::zeros(0)).is_err());
        assert!(LabeledDataset::new(array![[1.0], [2.0]], array![1.0]).is_err());
        assert!(LabeledDataset::new(array![[f64::NAN]], array![1.0]).is_err());
        assert!(LabeledDataset::new(array![[1.0]], array![f64::INFINITY]).is_err());
        let d = LabeledDataset::new(array![[1.0, 2.0], [3.0, 4.0]], array![5.0, 6.0]).unwrap();
        assert_eq!((d.len(), d.dim()), (2, 2));
        let s = d.select(&[1]);
        assert_eq!(s.targets()[0], 6.0);
    }
}
