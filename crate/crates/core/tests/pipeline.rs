use std::io::Write;

use crps_reject::data_io::{load_csv, split, SplitSpec, Standardizer};
use crps_reject::eval::{
    run_lambda_sweep, run_sweep, BackendConfig, DataSource, ExperimentConfig, KChoice, SplitPlan,
};
use crps_reject::synthetic::{
    brute_force_optimal, excess_risk, FiniteModel, OraclePredictor, SyntheticModel,
};
use crps_reject::{
    entropy_scores, knn_fit, seed, EpsilonPolicy, ForestParams, Jitter, LabeledDataset,
    LabeledDatasetF32, WeightModel,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn brute_force_rates_are_monotone_in_lambda() {
    let mut rng = seed::rng(31, 0);
    for _ in 0..200 {
        let m = rng.random_range(1..=10);
        let model = FiniteModel {
            entropy: (0..m).map(|_| rng.random_range(0.0..1.0)).collect(),
            mass: (0..m).map(|_| rng.random_range(0.01..1.0)).collect(),
            divergence: vec![0.0; m],
        };
        let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at_lo = brute_force_optimal(&model, lo).unwrap();
        let at_hi = brute_force_optimal(&model, hi).unwrap();
        assert!(at_hi.rejection_mass(&model) <= at_lo.rejection_mass(&model) + 1e-15);
        if let (Some(e_lo), Some(e_hi)) = (at_lo.accepted_error(&model), at_hi.accepted_error(&model)) {
            assert!(e_lo <= e_hi + 1e-15);
        }
    }
}

#[test]
fn brute_force_with_estimation_error_thresholds_total_cost() {
    // With a forecast divergence the pointwise accept cost is Ent + Div.
    let model = FiniteModel {
        entropy: vec![0.1, 0.2, 0.3],
        mass: vec![1.0, 1.0, 1.0],
        divergence: vec![0.5, 0.0, 0.1],
    };
    assert_eq!(brute_force_optimal(&model, 0.35).unwrap().accept, vec![false, true, false]);
}

#[test]
fn oracle_excess_risk_vanishes() {
    let model = SyntheticModel::sigma_linear();
    for eps in [0.2, 0.5, 0.8] {
        let rule = model.oracle_lambda(eps, 0, 0).unwrap();
        let oracle = OraclePredictor { model: &model, lambda: rule.lambda_eps };
        let mc = 20_000;
        let r = excess_risk(&oracle, &model, &rule, mc, 3).unwrap();
        assert!(r.total().value() <= 5.0 / (mc as f64).sqrt());
    }
}

fn numbered(n: usize) -> LabeledDataset<f64> {
    LabeledDataset::new(
        Array2::from_shape_fn((n, 2), |(i, j)| (i * 10 + j) as f64),
        Array1::from_shape_fn(n, |i| i as f64),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_then_merge_recovers_rows(n in 3usize..200, seed in any::<u64>()) {
        let data = numbered(n);
        let spec = SplitSpec::new(0.5, 0.2, 0.3, seed).unwrap();
        prop_assume!(spec.sizes(n).is_ok());
        let s = split(&data, &spec).unwrap();
        let mut rows: Vec<usize> = s.labeled.features().column(0).iter()
            .chain(s.unlabeled.column(0).iter())
            .chain(s.test.features().column(0).iter())
            .map(|&v| v as usize / 10)
            .collect();
        // Labels stay attached to their rows.
        for part in [&s.labeled, &s.test] {
            for (x, &y) in part.features().outer_iter().zip(part.targets().iter()) {
                prop_assert_eq!(x[0] as usize / 10, y as usize);
            }
        }
        rows.sort_unstable();
        prop_assert_eq!(rows, (0..n).collect::<Vec<_>>());
    }
}

fn synthetic_sweep(model: SyntheticModel, n: usize, reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        source: DataSource::Synthetic { model, n },
        split: SplitPlan::default(),
        backend: BackendConfig::knn(KChoice::Power { exponent: 2.0 / 3.0 }),
        epsilons: (0..10).map(|i| i as f64 / 10.0).collect(),
        jitter: Jitter::Default,
        repetitions: reps,
        base_seed: 41,
    }
}

#[test]
fn sweep_rejection_rates_track_targets() {
    let config = synthetic_sweep(SyntheticModel::sigma_linear(), 1500, 20);
    let res = run_sweep(&config).unwrap();
    let big_n = 300.0f64;
    for (row, evals) in res.rows.iter().zip(&res.raw) {
        let dev = evals.iter().map(|e| (e.reject_rate - row.param).abs()).sum::<f64>()
            / evals.len() as f64;
        assert!(dev <= 3.0 / big_n.sqrt(), "eps {}: {dev}", row.param);
        assert!((0.0..=1.0).contains(&row.rej_mean));
        assert!(row.err_mean.unwrap() >= 0.0);
    }
    assert_eq!(res.rows[0].rej_mean, 0.0);
}

#[test]
fn lambda_sweep_follows_rate_error_tradeoff() {
    let mut config = synthetic_sweep(SyntheticModel::sigma_linear(), 1500, 10);
    config.epsilons.clear();
    let lambdas: Vec<f64> = (0..21).map(|i| i as f64 * 0.05).collect();
    let res = run_lambda_sweep(&config, &lambdas).unwrap();
    for w in res.rows.windows(2) {
        assert!(w[1].rej_mean <= w[0].rej_mean);
        if let (Some(a), Some(b)) = (w[0].err_mean, w[1].err_mean) {
            let noise = w[0].err_std.unwrap_or(0.0).max(w[1].err_std.unwrap_or(0.0));
            assert!(b + 1e-12 >= a - noise);
        }
    }
    assert_eq!(res.rows.last().unwrap().rej_mean, 0.0);
}

#[test]
fn homoscedastic_model_has_flat_error() {
    // With constant entropy nothing distinguishes points, so error barely moves.
    let res = run_sweep(&synthetic_sweep(SyntheticModel::homoscedastic(0.5), 1500, 10)).unwrap();
    let e0 = res.rows[0].err_mean.unwrap();
    let e9 = res.rows[9].err_mean.unwrap();
    assert!((e9 - e0).abs() < 0.25 * e0);
}

#[test]
fn forest_pipeline_from_csv() {
    let mut rng = seed::rng(5, 0);
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "x1,x2,target").unwrap();
    for _ in 0..400 {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let noise: f64 = rng.random_range(-1.0..1.0);
        writeln!(file, "{a},{b},{}", 3.0 * a + a * noise).unwrap();
    }
    let data = load_csv(file.path(), "target").unwrap();
    assert_eq!((data.len(), data.dim()), (400, 2));
    let config = ExperimentConfig {
        source: DataSource::Csv {
            path: file.path().to_path_buf(),
            target: "target".into(),
        },
        split: SplitPlan::default(),
        backend: BackendConfig::Forest {
            params: ForestParams { num_trees: 60, min_node_size: 5, ..ForestParams::default() },
            mtry_grid: Some(vec![1, 2]),
            val_fraction: 0.25,
            standardize: false,
        },
        epsilons: vec![0.0, 0.5, 0.9],
        jitter: Jitter::Default,
        repetitions: 4,
        base_seed: 8,
    };
    let res = run_sweep(&config).unwrap();
    assert_eq!(res, run_sweep(&config).unwrap());
    let err: Vec<f64> = res.rows.iter().map(|r| r.err_mean.unwrap()).collect();
    assert!(err[2] < err[0]);
}

#[test]
fn single_precision_calibration() {
    let n = 200;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f32 / n as f32);
    let y = Array1::from_shape_fn(n, |i| (i as f32 / n as f32) * ((i * 7919 % 13) as f32 - 6.0));
    let data: LabeledDatasetF32 = LabeledDataset::new(x, y).unwrap();
    let st = Standardizer::fit(data.features()).unwrap();
    let data = st.apply_dataset(&data).unwrap();
    let r = knn_fit(&data, 15).unwrap();
    let unl = Array2::from_shape_fn((100, 1), |(i, _)| (i as f32 / 100.0 - 0.5) * 3.4);
    let table = entropy_scores(&r, unl.view(), 1e-6, 2).unwrap();
    let policy = EpsilonPolicy::new(0.3, table).unwrap();
    let accepted = unl
        .outer_iter()
        .filter(|q| {
            let ent = crps_reject::entropy_discrete(&r.predict(*q).unwrap()).value();
            policy.accepts(ent)
        })
        .count();
    assert!((60..=80).contains(&accepted), "{accepted}");
}
