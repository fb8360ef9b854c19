//! Hyper-parameter choice by mean CRPS on an internal holdout.

use rand::seq::SliceRandom;

use super::{forest_fit, knn_fit, ForestParams, LabeledDataset, WeightModel};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scoring::crps_discrete;
use crate::seed;

fn holdout_split<T: Real>(
    data: &LabeledDataset<T>,
    val_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "val_fraction {val_fraction} outside (0, 1)"
        )));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::SplitTooSmall(format!(
            "model selection needs at least 2 points, got {n}"
        )));
    }
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, 0x5e1ec7));
    let (val, train) = order.split_at(n_val);
    Ok((data.select(train), data.select(val)))
}

fn sorted_grid(grid: &[usize]) -> Result<Vec<usize>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty selection grid".into()));
    }
    let mut g = grid.to_vec();
    g.sort_unstable();
    g.dedup();
    Ok(g)
}

fn argmin_first(scores: &[(usize, f64)]) -> usize {
    let mut best = scores[0];
    for &cand in &scores[1..] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    best.0
}

/// The `k` in `grid` with the lowest mean CRPS on a holdout of `val_fraction` of `data`;
/// the smallest such `k` on ties.
pub fn select_k<T: Real>(
    data: &LabeledDataset<T>,
    grid: &[usize],
    val_fraction: f64,
    seed: u64,
) -> Result<usize> {
    let grid = sorted_grid(grid)?;
    if grid.len() == 1 {
        let k = grid[0];
        if k == 0 || k > data.len() {
            return Err(Error::InvalidK { k, n: data.len() });
        }
        return Ok(k);
    }
    let (train, val) = holdout_split(data, val_fraction, seed)?;
    let k_max = *grid.last().unwrap();
    if grid[0] == 0 || k_max > train.len() {
        let k = if grid[0] == 0 { 0 } else { k_max };
        return Err(Error::InvalidK {
            k,
            n: train.len(),
        });
    }
    let model = knn_fit(&train, k_max)?;
    let targets = train.targets();
    let mut totals = vec![0.0f64; grid.len()];
    for (x, &y) in val.features().outer_iter().zip(val.targets().iter()) {
        let nearest = model.nearest(x, k_max)?;
        for (slot, &k) in totals.iter_mut().zip(&grid) {
            let values: Vec<T> = nearest[..k].iter().map(|&i| targets[i]).collect();
            let pred = crate::dist::WeightedEmpirical::uniform(&values)?;
            *slot += crps_discrete(&pred, y).value().as_f64();
        }
    }
    let scores: Vec<(usize, f64)> = grid.iter().copied().zip(totals).collect();
    Ok(argmin_first(&scores))
}

/// Forest `mtry` chosen the same way as [`select_k`]; other parameters come from `base`.
pub fn select_mtry<T: Real>(
    data: &LabeledDataset<T>,
    base: &ForestParams,
    grid: &[usize],
    val_fraction: f64,
    seed: u64,
) -> Result<usize> {
    let grid = sorted_grid(grid)?;
    let dim = data.dim();
    if grid[0] == 0 || *grid.last().unwrap() > dim {
        return Err(Error::InvalidParameter(format!(
            "mtry grid {grid:?} outside 1..={dim}"
        )));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let (train, val) = holdout_split(data, val_fraction, seed)?;
    let mut scores = Vec::with_capacity(grid.len());
    for &mtry in &grid {
        let params = ForestParams {
            mtry: Some(mtry),
            ..base.clone()
        };
        let model = forest_fit(&train, &params)?;
        let mut total = 0.0;
        for (x, &y) in val.features().outer_iter().zip(val.targets().iter()) {
            total += crps_discrete(&model.predict(x)?, y).value().as_f64();
        }
        scores.push((mtry, total));
    }
    Ok(argmin_first(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    fn identity_data(n: usize) -> LabeledDataset<f64> {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        let y = Array1::from_shape_fn(n, |i| i as f64 / n as f64);
        LabeledDataset::new(x, y).unwrap()
    }

    #[test]
    fn singleton_grid() {
        assert_eq!(select_k(&identity_data(10), &[1], 0.3, 1).unwrap(), 1);
    }

    #[test]
    fn noiseless_prefers_one_neighbour() {
        let data = identity_data(100);
        let n_train = 100 - 30;
        // Exhaustive check of both candidates on the same holdout.
        let (train, val) = holdout_split(&data, 0.3, 9).unwrap();
        let mean_crps = |k: usize| {
            let m = knn_fit(&train, k).unwrap();
            val.features()
                .outer_iter()
                .zip(val.targets().iter())
                .map(|(x, &y)| crps_discrete(&m.predict(x).unwrap(), y).value())
                .sum::<f64>()
        };
        assert!(mean_crps(1) < mean_crps(n_train));
        assert_eq!(select_k(&data, &[1, n_train], 0.3, 9).unwrap(), 1);
    }

    #[test]
    fn ties_pick_smallest() {
        // Constant targets: every k scores zero.
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let data = LabeledDataset::new(x, Array1::from_elem(20, 4.0)).unwrap();
        assert_eq!(select_k(&data, &[5, 3, 7], 0.25, 2).unwrap(), 3);
    }

    #[test]
    fn grid_errors() {
        let data = identity_data(10);
        assert!(select_k(&data, &[], 0.3, 1).is_err());
        assert!(matches!(select_k(&data, &[0, 2], 0.3, 1), Err(Error::InvalidK { .. })));
        assert!(matches!(select_k(&data, &[1, 10], 0.3, 1), Err(Error::InvalidK { .. })));
        assert!(select_k(&data, &[1, 2], 1.0, 1).is_err());
    }

    #[test]
    fn mtry_selection_runs() {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * (j + 3)) % 17) as f64);
        let y = Array1::from_shape_fn(40, |i| x[[i, 0]] * 2.0);
        let data = LabeledDataset::new(x, y).unwrap();
        let base = ForestParams {
            num_trees: 10,
            ..ForestParams::default()
        };
        let m = select_mtry(&data, &base, &[1, 3], 0.25, 4).unwrap();
        assert!(m == 1 || m == 3);
        assert!(select_mtry(&data, &base, &[4], 0.25, 4).is_err());
    }
}
