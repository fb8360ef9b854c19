//! CSV loading, labeled/unlabeled/test splitting and feature standardization.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backends::LabeledDataset;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::seed;

/// Reads a comma-separated file with a header row.
///
/// Features are all non-target columns in header order. Every cell must parse as a
/// number; empty cells are rejected.
pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<LabeledDataset<f64>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: shown.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let csv_err = |e: csv::Error| Error::Csv {
        path: shown.clone(),
        message: e.to_string(),
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_col = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::MissingColumn(target.to_string()))?;

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::NonNumericCell {
                row: row + 1,
                column: header[col].clone(),
                value: cell.to_string(),
            })?;
            if col == target_col {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
    }
    let n = targets.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let x = Array2::from_shape_vec((n, header.len() - 1), features)
        .expect("rows have the header's length");
    LabeledDataset::new(x, Array1::from(targets))
}

/// Split fractions with the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub labeled_frac: f64,
    pub unlabeled_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(labeled_frac: f64, unlabeled_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let s = Self {
            labeled_frac,
            unlabeled_frac,
            test_frac,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.labeled_frac, self.unlabeled_frac, self.test_frac];
        if f.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "split fractions {f:?} must all be positive"
            )));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "split fractions {f:?} must sum to 1"
            )));
        }
        Ok(())
    }

    /// `(floor(labeled_frac n), floor(unlabeled_frac n), remainder)`.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if n < 3 {
            return Err(Error::SplitTooSmall(format!("{n} rows, need at least 3")));
        }
        let floor = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
        let (l, u) = (floor(self.labeled_frac), floor(self.unlabeled_frac));
        let t = n.saturating_sub(l + u);
        if l == 0 || u == 0 || t == 0 {
            return Err(Error::SplitTooSmall(format!(
                "{n} rows give split sizes {l}/{u}/{t}"
            )));
        }
        Ok((l, u, t))
    }
}

/// The three parts of a split; the unlabeled part keeps features only.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub labeled: LabeledDataset<T>,
    pub unlabeled: Array2<T>,
    pub test: LabeledDataset<T>,
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, 0x5b1));
    order
}

/// Row indices of the labeled, unlabeled and test parts, in shuffled order.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    let (l, u, _) = spec.sizes(n)?;
    let order = shuffled(n, spec.seed);
    Ok([
        order[..l].to_vec(),
        order[l..l + u].to_vec(),
        order[l + u..].to_vec(),
    ])
}

fn assemble<T: Real>(data: &LabeledDataset<T>, idx: [Vec<usize>; 3]) -> Split<T> {
    let [l, u, t] = idx;
    Split {
        labeled: data.select(&l),
        unlabeled: data.features().select(Axis(0), &u),
        test: data.select(&t),
    }
}

pub fn split<T: Real>(data: &LabeledDataset<T>, spec: &SplitSpec) -> Result<Split<T>> {
    Ok(assemble(data, split_indices(data.len(), spec)?))
}

/// Split with explicit part sizes; rows beyond their sum are dropped.
pub fn split_counts<T: Real>(
    data: &LabeledDataset<T>,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<Split<T>> {
    let (l, u, t) = counts;
    if l == 0 || u == 0 || t == 0 {
        return Err(Error::SplitTooSmall(format!("split sizes {l}/{u}/{t}")));
    }
    if l + u + t > data.len() {
        return Err(Error::SplitTooSmall(format!(
            "split sizes {l}/{u}/{t} exceed {} rows",
            data.len()
        )));
    }
    let order = shuffled(data.len(), seed);
    Ok(assemble(
        data,
        [
            order[..l].to_vec(),
            order[l..l + u].to_vec(),
            order[l + u..l + u + t].to_vec(),
        ],
    ))
}

/// Per-feature z-scoring with statistics from one sample.
///
/// Constant columns pass through unchanged (mean 0, stddev 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    mean: Array1<T>,
    stddev: Array1<T>,
}

impl<T: Real> Standardizer<T> {
    /// Population mean and standard deviation of each column.
    pub fn fit(features: ArrayView2<'_, T>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let nt = T::of_usize(n);
        let mut mean = Array1::zeros(features.ncols());
        let mut stddev = Array1::ones(features.ncols());
        for (j, col) in features.axis_iter(Axis(1)).enumerate() {
            let m = col.iter().copied().sum::<T>() / nt;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / nt;
            if var > T::zero() {
                mean[j] = m;
                stddev[j] = var.sqrt();
            } else {
                log::warn!("feature {j} is constant; left unscaled");
            }
        }
        Ok(Self { mean, stddev })
    }

    pub fn mean(&self) -> &Array1<T> {
        &self.mean
    }

    pub fn stddev(&self) -> &Array1<T> {
        &self.stddev
    }

    pub fn apply(&self, features: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: features.ncols(),
            });
        }
        Ok((&features - &self.mean) / &self.stddev)
    }

    pub fn apply_dataset(&self, data: &LabeledDataset<T>) -> Result<LabeledDataset<T>> {
        LabeledDataset::new(self.apply(data.features())?, data.targets().to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_features_in_header_order() {
        let f = write_csv("a,y,b\n1,10,2\n3,30,4.5\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.features(), array![[1.0, 2.0], [3.0, 4.5]]);
        assert_eq!(d.targets(), array![10.0, 30.0]);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(load_csv("/nonexistent/file.csv", "y"), Err(Error::Io { .. })));
        let f = write_csv("a,b\n1,2\n");
        assert!(matches!(load_csv(f.path(), "y"), Err(Error::MissingColumn(c)) if c == "y"));
        let f = write_csv("a,y\n1,2\n3,x\n");
        let err = load_csv(f.path(), "y").unwrap_err();
        assert!(matches!(&err, Error::NonNumericCell { row: 2, column, .. } if column == "y"));
        assert!(err.to_string().contains("row 2"));
        let f = write_csv("a,y\n1,\n");
        assert!(matches!(load_csv(f.path(), "y"), Err(Error::NonNumericCell { .. })));
        let f = write_csv("a,y\n1,2,3\n");
        assert!(matches!(load_csv(f.path(), "y"), Err(Error::Csv { .. })));
    }

    fn numbered(n: usize) -> LabeledDataset<f64> {
        LabeledDataset::new(
            Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64),
            Array1::from_shape_fn(n, |i| i as f64),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::new(0.5, 0.2, 0.3, 1).unwrap();
        assert_eq!(spec.sizes(546).unwrap(), (273, 109, 164));
        assert_eq!(spec.sizes(10).unwrap(), (5, 2, 3));
        assert!(spec.sizes(2).is_err());
        assert!(SplitSpec::new(0.5, 0.2, 0.2, 1).is_err());
        assert!(SplitSpec::new(0.0, 0.7, 0.3, 1).is_err());
        let thin = SplitSpec::new(0.5, 0.1, 0.4, 1).unwrap();
        assert!(matches!(thin.sizes(5), Err(Error::SplitTooSmall(_))));
    }

    #[test]
    fn split_partitions_rows() {
        let data = numbered(50);
        let spec = SplitSpec::new(0.5, 0.2, 0.3, 8).unwrap();
        let s = split(&data, &spec).unwrap();
        assert_eq!(s, split(&data, &spec).unwrap());
        let mut seen: Vec<f64> = s
            .labeled
            .targets()
            .iter()
            .chain(s.test.targets().iter())
            .copied()
            .chain(s.unlabeled.column(0).iter().map(|v| v / 2.0))
            .collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..50).map(|i| i as f64).collect::<Vec<_>>());
        let other = split(&data, &SplitSpec { seed: 9, ..spec }).unwrap();
        assert_ne!(s.labeled, other.labeled);
    }

    #[test]
    fn explicit_counts() {
        let data = numbered(20);
        let s = split_counts(&data, (5, 4, 3), 2).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.nrows(), s.test.len()), (5, 4, 3));
        assert!(split_counts(&data, (10, 10, 1), 2).is_err());
        assert!(split_counts(&data, (10, 0, 1), 2).is_err());
    }

    #[test]
    fn standardize() {
        let x = array![[1.0, 5.0, 0.0], [2.0, 5.0, 10.0], [3.0, 5.0, 20.0], [6.0, 5.0, -2.0]];
        let s = Standardizer::fit(x.view()).unwrap();
        let z = s.apply(x.view()).unwrap();
        for j in [0, 2] {
            let col = z.column(j);
            let m: f64 = col.sum() / 4.0;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0).sqrt();
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
        assert_eq!(z.column(1), x.column(1));
        assert_eq!(s.stddev()[1], 1.0);
        let other = array![[3.0, 5.0, 20.0]];
        assert_eq!(s.apply(other.view()).unwrap().row(0), z.row(2));
        assert!(s.apply(array![[1.0]].view()).is_err());
    }
}
