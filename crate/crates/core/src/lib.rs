//! Distributional regression with a reject option.
//!
//! Predictive distributions are scored with the CRPS. A query is rejected when the
//! predicted CRPS entropy exceeds a threshold, either fixed or calibrated on unlabeled
//! data to a target rejection rate.
//!
//! The numerical core (`dist`, `scoring`, `backends`, `selective`) is generic over
//! [`Real`] (`f32` or `f64`); the synthetic models and the experiment harness use `f64`.
//!
//! ```
//! use crps_reject::{crps_discrete, entropy_discrete, WeightedEmpiricalF64};
//!
//! let h = WeightedEmpiricalF64::from_weighted_sample(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
//! assert!((crps_discrete(&h, 0.0).value() - 0.25).abs() < 1e-15);
//! assert!((entropy_discrete(&h).value() - 0.25).abs() < 1e-15);
//! ```

pub mod backends;
pub mod data_io;
pub mod dist;
pub mod error;
pub mod eval;
pub mod quadrature;
pub mod real;
pub mod scoring;
pub mod seed;
pub mod selective;
pub mod synthetic;

pub use backends::{
    forest_fit, knn_fit, select_k, select_mtry, ForestParams, ForestRegressor, KnnRegressor,
    LabeledDataset, Regressor, WeightModel,
};
pub use dist::{CdfFunction, GaussianPredictive, Predictive, WeightedEmpirical};
pub use error::{Error, Result};
pub use real::Real;
pub use scoring::{
    crps, crps_discrete, crps_gaussian, crps_numeric, divergence, divergence_numeric, entropy,
    entropy_discrete, entropy_gaussian, entropy_numeric, expected_crps, wasserstein1,
    wasserstein1_numeric, Score,
};
pub use selective::{
    entropy_scores, predict_epsilon, predict_lambda, CalibrationTable, EpsilonPolicy, Jitter,
    QueryRng, RejectPrediction, SelectivePredictor,
};

pub type WeightedEmpiricalF64 = WeightedEmpirical<f64>;
pub type WeightedEmpiricalF32 = WeightedEmpirical<f32>;
pub type GaussianF64 = GaussianPredictive<f64>;
pub type GaussianF32 = GaussianPredictive<f32>;
pub type PredictiveF64 = Predictive<f64>;
pub type PredictiveF32 = Predictive<f32>;
pub type LabeledDatasetF64 = LabeledDataset<f64>;
pub type LabeledDatasetF32 = LabeledDataset<f32>;
pub type RegressorF64 = Regressor<f64>;
pub type RegressorF32 = Regressor<f32>;
pub type CalibrationTableF64 = CalibrationTable<f64>;
pub type CalibrationTableF32 = CalibrationTable<f32>;
pub type EpsilonPolicyF64 = EpsilonPolicy<f64>;
pub type EpsilonPolicyF32 = EpsilonPolicy<f32>;
pub type ScoreF64 = Score<f64>;
pub type ScoreF32 = Score<f32>;
