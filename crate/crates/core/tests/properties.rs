use crps_reject::{
    crps, crps_discrete, crps_gaussian, crps_numeric, divergence, divergence_numeric, entropy,
    entropy_numeric, expected_crps, wasserstein1, wasserstein1_numeric, CdfFunction,
    GaussianPredictive, Predictive, WeightedEmpirical,
};
use proptest::prelude::*;

fn empirical() -> impl Strategy<Value = WeightedEmpirical<f64>> {
    prop::collection::vec((-10.0f64..10.0, 0.01f64..1.0), 1..12).prop_map(|pairs| {
        let (v, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        WeightedEmpirical::from_weighted_sample(&v, &w).unwrap()
    })
}

fn gaussian() -> impl Strategy<Value = GaussianPredictive<f64>> {
    (-3.0f64..3.0, 0.1f64..3.0).prop_map(|(m, s)| GaussianPredictive::new(m, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Against a discrete truth the expectation is a finite sum, so the decomposition
    /// holds to rounding.
    #[test]
    fn expected_score_is_entropy_plus_divergence(h in empirical(), k in empirical()) {
        let direct: f64 = k
            .points()
            .iter()
            .zip(k.weights())
            .map(|(&y, &w)| w * crps_discrete(&h, y).value())
            .sum();
        let (h, k) = (Predictive::Discrete(h), Predictive::Discrete(k));
        let split = expected_crps(&h, &k).value();
        prop_assert!((direct - split).abs() <= 1e-11 * (1.0 + direct));
        prop_assert!((entropy(&k).value() + divergence(&h, &k).value() - split).abs() < 1e-12);
    }

    #[test]
    fn crps_is_nonnegative_and_minimized_by_truth(h in empirical(), k in empirical()) {
        let (hp, kp) = (Predictive::Discrete(h.clone()), Predictive::Discrete(k.clone()));
        prop_assert!(expected_crps(&hp, &kp).value() + 1e-12 >= expected_crps(&kp, &kp).value());
        for &y in h.points() {
            prop_assert!(crps(&kp, y).value() >= 0.0);
        }
    }

    #[test]
    fn bounded_by_wasserstein(h in empirical(), k in empirical()) {
        let (h, k) = (Predictive::Discrete(h), Predictive::Discrete(k));
        let w1 = wasserstein1(&h, &k).value();
        let slack = 1e-12 * (1.0 + w1);
        prop_assert!((entropy(&h).value() - entropy(&k).value()).abs() <= w1 + slack);
        prop_assert!(divergence(&h, &k).value() <= w1 + slack);
    }

    #[test]
    fn discrete_closed_forms_match_quadrature(h in empirical(), k in empirical(), y in -12.0f64..12.0) {
        let (hc, kc) = (CdfFunction::from_empirical(&h), CdfFunction::from_empirical(&k));
        prop_assert!((crps_discrete(&h, y).value() - crps_numeric(&hc, y).unwrap().value()).abs() < 1e-9);
        let (hp, kp) = (Predictive::Discrete(h.clone()), Predictive::Discrete(k.clone()));
        prop_assert!((entropy(&hp).value() - entropy_numeric(&hc).unwrap().value()).abs() < 1e-9);
        let div = divergence_numeric(&hc, &kc).unwrap().value();
        prop_assert!((divergence(&hp, &kp).value() - div).abs() < 1e-9);
        let w1 = wasserstein1_numeric(&hc, &kc).unwrap().value();
        prop_assert!((wasserstein1(&hp, &kp).value() - w1).abs() < 1e-9);
    }

    #[test]
    fn gaussian_divergences_match_quadrature(g in gaussian(), f in gaussian(), h in empirical()) {
        let gc = CdfFunction::from_gaussian(g);
        let fc = CdfFunction::from_gaussian(f);
        let hc = CdfFunction::from_empirical(&h);
        let (gp, fp, hp) = (Predictive::Gaussian(g), Predictive::Gaussian(f), Predictive::Discrete(h.clone()));
        prop_assert!((divergence(&gp, &fp).value() - divergence_numeric(&gc, &fc).unwrap().value()).abs() < 1e-9);
        prop_assert!((divergence(&hp, &gp).value() - divergence_numeric(&hc, &gc).unwrap().value()).abs() < 1e-9);
        prop_assert!((divergence(&gp, &hp).value() - divergence(&hp, &gp).value()).abs() < 1e-12);
        prop_assert!((wasserstein1(&hp, &gp).value() - wasserstein1_numeric(&hc, &gc).unwrap().value()).abs() < 1e-8);
    }

    #[test]
    fn gaussian_crps_matches_quadrature(g in gaussian(), z in -6.0f64..6.0) {
        let y = g.mean() + z * g.stddev();
        let num = crps_numeric(&CdfFunction::from_gaussian(g), y).unwrap().value();
        prop_assert!((crps_gaussian(&g, y).value() - num).abs() < 1e-8);
    }

    #[test]
    fn single_precision_tracks_double(pairs in prop::collection::vec((-10i32..10, 1u8..10), 1..10), y in -10i32..10) {
        let v64: Vec<f64> = pairs.iter().map(|p| p.0 as f64 * 0.5).collect();
        let w64: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let v32: Vec<f32> = v64.iter().map(|&v| v as f32).collect();
        let w32: Vec<f32> = w64.iter().map(|&v| v as f32).collect();
        let d64 = WeightedEmpirical::from_weighted_sample(&v64, &w64).unwrap();
        let d32 = WeightedEmpirical::from_weighted_sample(&v32, &w32).unwrap();
        let (c64, c32) = (crps_discrete(&d64, y as f64).value(), crps_discrete(&d32, y as f32).value());
        prop_assert!((c64 - c32 as f64).abs() < 1e-4 * (1.0 + c64));
    }
}
