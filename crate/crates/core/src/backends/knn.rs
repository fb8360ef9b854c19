use std::cmp::Ordering;

use ndarray::ArrayView1;

use super::{check_query, LabeledDataset, WeightModel};
use crate::error::{Error, Result};
use crate::real::Real;

/// Distributional k-nearest neighbours ("analog method").
///
/// Weight `1/k` on each of the `k` nearest training points by Euclidean distance.
/// Among equidistant points the one with the lower training index counts as closer.
#[derive(Debug, Clone)]
pub struct KnnRegressor<T> {
    /// Row-major features.
    features: Vec<T>,
    dim: usize,
    targets: Vec<T>,
    k: usize,
}

pub fn knn_fit<T: Real>(data: &LabeledDataset<T>, k: usize) -> Result<KnnRegressor<T>> {
    if k == 0 || k > data.len() {
        return Err(Error::InvalidK { k, n: data.len() });
    }
    Ok(KnnRegressor {
        features: data.features().iter().copied().collect(),
        dim: data.dim(),
        targets: data.targets().to_vec(),
        k,
    })
}

fn by_distance_then_index<T: Real>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .expect("distances between finite points are ordered")
        .then(a.1.cmp(&b.1))
}

impl<T: Real> KnnRegressor<T> {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Indices of the `count` nearest training points, nearest first.
    pub fn nearest(&self, x: ArrayView1<'_, T>, count: usize) -> Result<Vec<usize>> {
        check_query(x, self.dim)?;
        let count = count.min(self.targets.len());
        let q: Vec<T> = x.iter().copied().collect();
        let mut dist: Vec<(T, usize)> = self
            .features
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, row)| {
                let mut d2 = T::zero();
                for (&a, &b) in row.iter().zip(&q) {
                    d2 += (a - b) * (a - b);
                }
                (d2, i)
            })
            .collect();
        if count == 0 {
            return Ok(Vec::new());
        }
        if count < dist.len() {
            dist.select_nth_unstable_by(count - 1, by_distance_then_index);
            dist.truncate(count);
        }
        dist.sort_unstable_by(by_distance_then_index);
        Ok(dist.into_iter().map(|(_, i)| i).collect())
    }
}

impl<T: Real> WeightModel<T> for KnnRegressor<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn targets(&self) -> &[T] {
        &self.targets
    }

    fn weights(&self, x: ArrayView1<'_, T>) -> Result<Vec<(usize, T)>> {
        let w = T::one() / T::of_usize(self.k);
        Ok(self
            .nearest(x, self.k)?
            .into_iter()
            .map(|i| (i, w))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::entropy_discrete;
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::*;

    fn line() -> LabeledDataset<f64> {
        LabeledDataset::new(array![[0.0], [1.0], [2.0]], array![10.0, 20.0, 30.0]).unwrap()
    }

    #[test]
    fn two_nearest() {
        let r = knn_fit(&line(), 2).unwrap();
        let w = r.weights(array![0.1].view()).unwrap();
        assert_eq!(w, vec![(0, 0.5), (1, 0.5)]);
        let p = r.predict(array![0.1].view()).unwrap();
        assert_eq!(p.points(), &[10.0, 20.0]);
        assert_eq!(p.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn k_equals_n_is_full_empirical() {
        let r = knn_fit(&line(), 3).unwrap();
        let p = r.predict(array![-40.0].view()).unwrap();
        assert_eq!(p.points(), &[10.0, 20.0, 30.0]);
        for &w in p.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn k_one_is_point_mass() {
        let r = knn_fit(&line(), 1).unwrap();
        let p = r.predict(array![1.8].view()).unwrap();
        assert_eq!(p.points(), &[30.0]);
        assert_eq!(entropy_discrete(&p).value(), 0.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let data =
            LabeledDataset::new(array![[0.0], [2.0], [-2.0]], array![1.0, 2.0, 3.0]).unwrap();
        let r = knn_fit(&data, 2).unwrap();
        assert_eq!(r.nearest(array![0.0].view(), 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn errors() {
        assert!(matches!(knn_fit(&line(), 0), Err(Error::InvalidK { .. })));
        assert!(matches!(knn_fit(&line(), 4), Err(Error::InvalidK { .. })));
        let r = knn_fit(&line(), 1).unwrap();
        assert!(matches!(
            r.predict(array![0.0, 1.0].view()),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    fn brute_force(features: &Array2<f64>, x: &[f64], k: usize) -> Vec<usize> {
        let n = features.nrows();
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..k {
            let mut best: Option<(f64, usize)> = None;
            for i in (0..n).filter(|i| !chosen.contains(i)) {
                let d: f64 = features
                    .row(i)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
            chosen.push(best.unwrap().1);
        }
        chosen
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn matches_exhaustive_search(
            rows in prop::collection::vec(prop::collection::vec(-3i32..3, 2), 1..15),
            x in prop::collection::vec(-3i32..3, 2),
            k_seed in 0usize..100,
        ) {
            // Integer coordinates make distance ties common.
            let n = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().map(|&v| v as f64).collect();
            let features = Array2::from_shape_vec((n, 2), flat).unwrap();
            let data = LabeledDataset::new(features.clone(), Array1::zeros(n)).unwrap();
            let k = 1 + k_seed % n;
            let r = knn_fit(&data, k).unwrap();
            let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let got = r.nearest(ArrayView1::from(&x), k).unwrap();
            prop_assert_eq!(got, brute_force(&features, &x, k));
        }

        #[test]
        fn self_query_gets_weight(
            rows in prop::collection::vec(-100.0f64..100.0, 2..30),
            pick in 0usize..30,
            k_seed in 0usize..30,
        ) {
            let n = rows.len();
            let i = pick % n;
            let unique = rows.iter().filter(|&&v| v == rows[i]).count() == 1;
            prop_assume!(unique);
            let data = LabeledDataset::new(
                Array2::from_shape_vec((n, 1), rows.clone()).unwrap(),
                Array1::zeros(n),
            ).unwrap();
            let k = 1 + k_seed % n;
            let r = knn_fit(&data, k).unwrap();
            let w = r.weights(ArrayView1::from(&rows[i..i + 1])).unwrap();
            prop_assert!(w.contains(&(i, 1.0 / k as f64)));
        }
    }
}
