//! Closed-form and dual-formula cross-checks of the regression statistics.

mod support;

use proptest::prelude::*;
use svyboot_core::data::{DesignKind, SurveyDataset, UnitRecord};
use svyboot_core::models::{self, Model, Restriction};
use svyboot_core::regression;

use support::*;

#[test]
fn full_and_reduced_quasi_score_agree_on_100_datasets() {
    let gap = quasi_score_forms_gap(100);
    assert!(gap < 1e-8, "max relative gap {gap:e}");
}

#[test]
fn example_one_closed_form_matches_generic_statistic() {
    let gap = example_one_gap(100);
    assert!(gap < 1e-8, "max relative gap {gap:e}");
}

#[test]
fn gaussian_pseudo_mle_is_weighted_least_squares() {
    let gap = gaussian_wls_gap(50);
    assert!(gap < 1e-10, "max abs gap {gap:e}");
}

#[test]
fn lrt_and_quasi_score_agree_under_the_null_at_n_5000() {
    let model = Model::logistic();
    let null = Restriction::new(vec![2], vec![0.3]).unwrap();
    let close = (0..50u64)
        .filter(|&s| {
            let data = random_logistic(5000, 2, 7000 + s);
            let w = regression::lrt(&model, &data, &null).unwrap().statistic;
            let qs = regression::quasi_score(&model, &data, &null).unwrap().statistic;
            (w - qs).abs() / w < 0.05
        })
        .count();
    assert!(close >= 45, "only {close} of 50 within 5%");
}

fn scaled(data: &SurveyDataset, c: f64) -> SurveyDataset {
    let units: Vec<UnitRecord> =
        data.units().iter().map(|u| UnitRecord { weight: u.weight * c, ..u.clone() }).collect();
    let n = (data.population_size() as f64 * c).round() as u64;
    SurveyDataset::new(units, n, DesignKind::Poisson).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn profile_never_beats_the_unrestricted_fit(seed in 0u64..10_000, value in -1.5f64..1.5) {
        let data = random_logistic(80, 2, seed);
        let model = Model::logistic();
        let w = data.weights();
        let full = models::fit(&model, &data, &w, None).unwrap();
        let null = Restriction::new(vec![1], vec![value]).unwrap();
        let prof = models::fit_profile(&model, &data, &w, &null, None).unwrap();
        prop_assert!(full.loglik.unwrap() - prof.loglik.unwrap() >= -1e-12);
    }

    #[test]
    fn statistics_ignore_a_common_weight_scale(seed in 0u64..10_000, c in 1u32..20) {
        let data = random_logistic(70, 2, seed);
        let big = scaled(&data, c as f64);
        let model = Model::logistic();
        let null = Restriction::new(vec![2], vec![0.0]).unwrap();
        let a = regression::lrt(&model, &data, &null).unwrap().statistic;
        let b = regression::lrt(&model, &big, &null).unwrap().statistic;
        prop_assert!(rel_err(b, a) < 1e-8);
        let a = regression::quasi_score(&model, &data, &null).unwrap().statistic;
        let b = regression::quasi_score(&model, &big, &null).unwrap().statistic;
        prop_assert!(rel_err(b, a) < 1e-8);
    }

    #[test]
    fn logistic_score_is_the_weighted_residual_sum(seed in 0u64..10_000, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let data = random_logistic(30, 1, seed);
        let theta = svyboot_core::linalg::Vector::from_vec(vec![a, b]);
        let s = models::weighted_score(&Model::logistic(), &data, &theta, &data.weights()).unwrap();
        let big_n = data.population_size() as f64;
        let mut lit = [0.0; 2];
        for u in data.units() {
            let r = u.weight * (u.y - expit(a + b * u.x[0]));
            lit[0] += r / big_n;
            lit[1] += r * u.x[0] / big_n;
        }
        prop_assert!((s[0] - lit[0]).abs() < 1e-12 && (s[1] - lit[1]).abs() < 1e-12);
    }
}
