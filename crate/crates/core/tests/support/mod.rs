//! Fixtures and measurements shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};

use svyboot_core::bootstrap::{bootstrap_weights, PpswrPlan};
use svyboot_core::categorical::{gof_bootstrap, gof_eigenvalues, independence_bootstrap, independence_eigenvalues};
use svyboot_core::data::{
    proportions_from, two_way_table_with_weights, CategoricalVar, DesignKind, SurveyDataset, UnitRecord,
};
use svyboot_core::designs::{
    draw_poisson, draw_ppswr, draw_stratified_srs, draw_two_stage, FinitePopulation, PopulationUnit,
};
use svyboot_core::exec::Sequential;
use svyboot_core::linalg::{self, Matrix, Vector};
use svyboot_core::models::{self, Model, Restriction};
use svyboot_core::refdist::{self, mixture_eigenvalues, ChiSqMixture};
use svyboot_core::regression::{self, ReplicateRequest};
use svyboot_core::rng;

pub fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Rough relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-3)
}

/// Logistic sample with `p` covariates, `n` records and unequal weights.
pub fn random_logistic(n: usize, p: usize, seed: u64) -> SurveyDataset {
    let mut r = rng::stream(seed, 0xA1, 0);
    let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
    let mut total = 0.0;
    let units: Vec<UnitRecord> = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..p).map(|_| normal.sample(&mut r)).collect();
            let eta = 0.3 + x.iter().enumerate().map(|(j, v)| 0.6 * v / (j + 1) as f64).sum::<f64>();
            let y = if r.random::<f64>() < expit(eta) { 1.0 } else { 0.0 };
            let w = r.random_range(1.0..10.0);
            total += w;
            UnitRecord::new(y, x, w)
        })
        .collect();
    SurveyDataset::new(units, total.round() as u64, DesignKind::Poisson).unwrap()
}

/// Gaussian sample `y = 1 + x₁ − 0.5 x₂ + e` with unequal weights.
pub fn random_gaussian(n: usize, seed: u64) -> SurveyDataset {
    let mut r = rng::stream(seed, 0xA2, 0);
    let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
    let mut total = 0.0;
    let units: Vec<UnitRecord> = (0..n)
        .map(|_| {
            let x = vec![normal.sample(&mut r), r.random_range(-2.0..2.0)];
            let y = 1.0 + x[0] - 0.5 * x[1] + normal.sample(&mut r) * (1.0 + 0.5 * x[1].abs());
            let w = r.random_range(1.0..4.0);
            total += w;
            UnitRecord::new(y, x, w)
        })
        .collect();
    SurveyDataset::new(units, total.round() as u64, DesignKind::Poisson).unwrap()
}

// ---------------------------------------------------------------- oracles

/// Logistic closed form `N⁻¹ Sᵀ A⁻¹ S` (centred at the weighted `x̄_w`) for `H₀: slopes = θ₂⁰`, with the
/// restricted intercept found by bisection.
pub fn example_one(data: &SurveyDataset, slopes: &[f64]) -> f64 {
    let units = data.units();
    let w = data.weights();
    let offset: Vec<f64> = units.iter().map(|u| u.x.iter().zip(slopes).map(|(a, b)| a * b).sum()).collect();
    let score =
        |a: f64| -> f64 { units.iter().zip(&w).zip(&offset).map(|((u, wi), o)| wi * (u.y - expit(a + o))).sum() };
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let q = slopes.len();
    let p0: Vec<f64> = offset.iter().map(|o| expit(a + o)).collect();
    let v: Vec<f64> = p0.iter().zip(&w).map(|(p, wi)| wi * p * (1.0 - p)).collect();
    let vsum: f64 = v.iter().sum();
    let xbar: Vec<f64> = (0..q).map(|j| units.iter().zip(&v).map(|(u, vi)| vi * u.x[j]).sum::<f64>() / vsum).collect();
    let mut s = Vector::zeros(q);
    let mut big_a = Matrix::zeros(q, q);
    for (i, u) in units.iter().enumerate() {
        for j in 0..q {
            s[j] += w[i] * (u.y - p0[i]) * u.x[j];
            for k in 0..q {
                big_a[(j, k)] += v[i] * (u.x[j] - xbar[j]) * (u.x[k] - xbar[k]);
            }
        }
    }
    s.dot(&linalg::solve(&big_a, &s).unwrap()) / data.population_size() as f64
}

/// Normal equations solved by Gram–Schmidt QR on `√w`-scaled rows.
pub fn wls_oracle(data: &SurveyDataset) -> Vec<f64> {
    let p = data.x_dim() + 1;
    let rows: Vec<(Vec<f64>, f64)> = data
        .units()
        .iter()
        .map(|u| {
            let s = u.weight.sqrt();
            let mut z = vec![s];
            z.extend(u.x.iter().map(|v| v * s));
            (z, u.y * s)
        })
        .collect();
    let n = rows.len();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        let mut v: Vec<f64> = rows.iter().map(|(z, _)| z[j]).collect();
        for (k, qk) in q.iter().enumerate() {
            let d: f64 = (0..n).map(|i| qk[i] * rows[i].0[j]).sum();
            r[k][j] = d;
            for i in 0..n {
                v[i] -= d * qk[i];
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        r[j][j] = norm;
        q.push(v.into_iter().map(|a| a / norm).collect());
    }
    let qty: Vec<f64> = q.iter().map(|qk| (0..n).map(|i| qk[i] * rows[i].1).sum()).collect();
    let mut beta = vec![0.0; p];
    for j in (0..p).rev() {
        beta[j] = (qty[j] - ((j + 1)..p).map(|k| r[j][k] * beta[k]).sum::<f64>()) / r[j][j];
    }
    beta
}

/// Largest relative gap between the full and reduced quasi-score forms over
/// `count` random logistic datasets.
pub fn quasi_score_forms_gap(count: usize) -> f64 {
    let model = Model::logistic();
    (0..count as u64)
        .map(|s| {
            let p = 1 + (s % 3) as usize;
            let data = random_logistic(60 + 7 * s as usize, p, s);
            let tested: Vec<usize> = (1 + (s as usize % p)..=p).collect();
            let null = Restriction::new(tested.clone(), vec![0.1; tested.len()]).unwrap();
            let reduced = regression::quasi_score(&model, &data, &null).unwrap().unscaled;
            let full = regression::quasi_score_full(&model, &data, &null).unwrap();
            rel_err(full, reduced)
        })
        .fold(0.0, f64::max)
}

pub fn example_one_gap(count: usize) -> f64 {
    let model = Model::logistic();
    (0..count as u64)
        .map(|s| {
            let p = 1 + (s % 3) as usize;
            let data = random_logistic(50 + 5 * s as usize, p, 1000 + s);
            let slopes: Vec<f64> = (0..p).map(|j| 0.2 + 0.1 * j as f64).collect();
            let null = Restriction::new((1..=p).collect(), slopes.clone()).unwrap();
            let generic = regression::quasi_score(&model, &data, &null).unwrap().unscaled;
            rel_err(example_one(&data, &slopes), generic)
        })
        .fold(0.0, f64::max)
}

pub fn gaussian_wls_gap(count: usize) -> f64 {
    (0..count as u64)
        .map(|s| {
            let data = random_gaussian(40 + 3 * s as usize, s);
            let fit = models::fit(&Model::gaussian(), &data, &data.weights(), None).unwrap();
            let oracle = wls_oracle(&data);
            oracle.iter().enumerate().map(|(j, b)| (fit.theta[j] - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- numerics

/// Worst relative error of the analytic score against a central-difference
/// gradient of the log-likelihood, and of the information against a
/// central-difference Jacobian of the score.
pub fn derivative_errors() -> (f64, f64) {
    let cases: Vec<(Model, SurveyDataset)> = vec![
        (Model::logistic(), random_logistic(80, 2, 5)),
        (Model::poisson(), poisson_counts(80, 6)),
        (Model::gaussian_known(1.5), random_gaussian(80, 7)),
    ];
    let (mut grad, mut jac) = (0.0f64, 0.0f64);
    for (model, data) in &cases {
        let w = data.weights();
        let p = data.x_dim() + 1;
        let theta = Vector::from_fn(p, |j, _| 0.2 - 0.15 * j as f64);
        let score = models::weighted_score(model, data, &theta, &w).unwrap();
        let info = models::weighted_info(model, data, &theta, &w).unwrap();
        let h = 1e-5;
        for j in 0..p {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (models::weighted_loglik(model, data, &up, &w).unwrap()
                - models::weighted_loglik(model, data, &down, &w).unwrap())
                / (2.0 * h);
            grad = grad.max((fd - score[j]).abs() / score.amax().max(1e-8));
            let su = models::weighted_score(model, data, &up, &w).unwrap();
            let sd = models::weighted_score(model, data, &down, &w).unwrap();
            for i in 0..p {
                let fd = -(su[i] - sd[i]) / (2.0 * h);
                jac = jac.max((fd - info[(i, j)]).abs() / info.amax());
            }
        }
    }
    (grad, jac)
}

pub fn poisson_counts(n: usize, seed: u64) -> SurveyDataset {
    let mut r = rng::stream(seed, 0xA3, 0);
    let mut total = 0.0;
    let units: Vec<UnitRecord> = (0..n)
        .map(|_| {
            let x = vec![r.random_range(-1.0..1.0)];
            let mu = f64::exp(0.5 + 0.7 * x[0]);
            let y = rand_distr::Poisson::new(mu).unwrap().sample(&mut r);
            let w = r.random_range(1.0..5.0);
            total += w;
            UnitRecord::new(y, x, w)
        })
        .collect();
    SurveyDataset::new(units, total.round() as u64, DesignKind::Poisson).unwrap()
}

// ---------------------------------------------------------------- bootstrap moments

pub struct PoissonMoments {
    pub population: f64,
    pub mean_total: f64,
    pub total_se: f64,
    /// Largest `|mean w*_i − w_i N / Σw| / SE_i` over units.
    pub worst_unit_z: f64,
}

/// `B` Poisson replicates of a small unequal-probability sample.
pub fn poisson_moments(replicates: usize, seed: u64) -> PoissonMoments {
    let mut r = rng::stream(seed, 0xA4, 0);
    let units: Vec<UnitRecord> = (0..40).map(|_| UnitRecord::new(0.0, vec![], r.random_range(2.0..12.0))).collect();
    let data = SurveyDataset::new(units, 300, DesignKind::Poisson).unwrap();
    let m = bootstrap_weights(&data, replicates, seed, &Sequential).unwrap();
    let b = replicates as f64;
    let totals: Vec<f64> = m.columns().map(|c| c.iter().sum()).collect();
    let (mean_total, total_se) = mean_se(&totals);
    let w = data.weights();
    let wsum: f64 = w.iter().sum();
    let n_pop = data.population_size() as f64;
    let worst_unit_z = (0..data.len())
        .map(|i| {
            let col: Vec<f64> = (0..replicates).map(|k| m.get(i, k)).collect();
            let (mean, se) = mean_se(&col);
            (mean - w[i] * n_pop / wsum).abs() / se
        })
        .fold(0.0, f64::max);
    let _ = b;
    PoissonMoments { population: n_pop, mean_total, total_se, worst_unit_z }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Number of PPSWR replicates whose bootstrap population counts miss `N`.
pub fn ppswr_count_violations(replicates: u64, seed: u64) -> usize {
    let pop = FinitePopulation::new((0..500).map(|i| PopulationUnit { y: i as f64, ..Default::default() }).collect());
    let size: Vec<f64> = (0..500).map(|i| 1.0 + (i % 17) as f64).collect();
    let total: f64 = size.iter().sum();
    let probs: Vec<f64> = size.iter().map(|s| s / total).collect();
    let data = draw_ppswr(&pop, &probs, 60, seed).unwrap();
    let plan = PpswrPlan::from_dataset(&data).unwrap();
    (0..replicates)
        .filter(|&b| plan.replicate(seed, b).population_counts.iter().sum::<u64>() != data.population_size())
        .count()
}

// ---------------------------------------------------------------- distributional checks

pub const KS_REPLICATES: usize = 2000;
const MIXTURE_DRAWS: usize = 100_000;

fn mixture_ks(statistics: &[f64], mixture: &ChiSqMixture, seed: u64) -> f64 {
    let reference = mixture.sample(MIXTURE_DRAWS, seed);
    let mut s = statistics.to_vec();
    s.sort_by(f64::total_cmp);
    refdist::ks_two_sample(&s, &reference)
}

/// Logistic super-population of `size` units with one informative-size
/// covariate; returns units and a positive size measure.
fn logistic_population(size: usize, seed: u64) -> (FinitePopulation, Vec<f64>) {
    let mut r = rng::stream(seed, 0xB1, 0);
    let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
    let mut measure = Vec::with_capacity(size);
    let units = (0..size)
        .map(|_| {
            let x = vec![normal.sample(&mut r), normal.sample(&mut r)];
            let y = if r.random::<f64>() < expit(-0.5 + 0.8 * x[0]) { 1.0 } else { 0.0 };
            measure.push(1.0 + y + r.random::<f64>() * 3.0);
            PopulationUnit { y, x, categories: vec![] }
        })
        .collect();
    (FinitePopulation::new(units), measure)
}

/// KS distance between `{W*}` or `{n X²*}` and the mixture `Σ λ_j Z_j²` with
/// `λ` the eigenvalues of `n V̂(θ̂₂*) Î_{22·1}`.
fn regression_ks(data: &SurveyDataset, lrt: bool, seed: u64) -> f64 {
    let model = Model::logistic();
    let w = data.weights();
    let full = models::fit(&model, data, &w, None).unwrap();
    let tested = [2usize];
    let m = bootstrap_weights(data, KS_REPLICATES, seed, &Sequential).unwrap();
    let stats = regression::replicate_statistics(
        &model,
        data,
        &full,
        &tested,
        &m,
        ReplicateRequest { lrt: true, estimates: true },
        &Sequential,
    )
    .unwrap();
    let cov = stats.covariance().unwrap();
    let v22 = linalg::submatrix(&cov, &tested, &tested) * data.len() as f64;
    let i221 = regression::info_22_1(&full.info, &tested).unwrap();
    let mixture = mixture_eigenvalues(&v22, &i221).unwrap();
    mixture_ks(if lrt { &stats.lrt } else { &stats.quasi_score }, &mixture, seed)
}

pub fn poisson_regression_ks(seed: u64) -> (f64, f64) {
    let (pop, measure) = logistic_population(5000, seed);
    let total: f64 = measure.iter().sum();
    let inclusion: Vec<f64> = measure.iter().map(|m| (500.0 * m / total).min(1.0)).collect();
    let data = draw_poisson(&pop, &inclusion, seed).unwrap();
    (regression_ks(&data, true, seed), regression_ks(&data, false, seed))
}

pub fn stratified_regression_ks(seed: u64) -> f64 {
    let (pop, measure) = logistic_population(6000, seed + 1);
    let strata: Vec<u32> =
        pop.units.iter().zip(&measure).map(|(u, m)| (u.y as u32) * 2 + u32::from(*m > 2.5)).collect();
    let data = draw_stratified_srs(&pop, &strata, &[125, 125, 125, 125], seed).unwrap();
    regression_ks(&data, true, seed)
}

/// PPSWR sample of `n = 500` draws from a four-category population.
pub fn ppswr_gof_ks(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0xB2, 0);
    let size_n = 8000;
    let mut measure = Vec::with_capacity(size_n);
    let units = (0..size_n)
        .map(|_| {
            let u: f64 = r.random();
            let k = if u < 0.4 {
                0
            } else if u < 0.7 {
                1
            } else if u < 0.9 {
                2
            } else {
                3
            };
            measure.push(1.0 + k as f64 + r.random::<f64>() * 4.0);
            PopulationUnit { y: 0.0, x: vec![], categories: vec![k] }
        })
        .collect();
    let mut pop = FinitePopulation::new(units);
    pop.categorical = vec![CategoricalVar { name: "k".into(), levels: (0..4).map(|k| k.to_string()).collect() }];
    let total: f64 = measure.iter().sum();
    let probs: Vec<f64> = measure.iter().map(|m| m / total).collect();
    let data = draw_ppswr(&pop, &probs, 500, seed).unwrap();
    let codes: Vec<u32> = data.units().iter().map(|u| u.categories[0]).collect();
    let p_hat = proportions_from(&codes, &data.weights(), 4).unwrap();
    let m = bootstrap_weights(&data, KS_REPLICATES, seed, &Sequential).unwrap();
    let reps: Vec<Vec<f64>> = m.columns().map(|c| proportions_from(&codes, c, 4).unwrap()).collect();
    let (x2, _) = gof_bootstrap(&p_hat, &reps, data.len()).unwrap();
    let mixture = ChiSqMixture::new(gof_eigenvalues(&p_hat, &reps, data.len()).unwrap()).unwrap();
    mixture_ks(&x2, &mixture, seed)
}

/// Two-stage sample (50 clusters × 10 units) of a 3×3 table with cluster effects.
pub fn two_stage_independence_ks(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0xB3, 0);
    let clusters = 400;
    let mut sizes = Vec::with_capacity(clusters);
    let mut units = Vec::new();
    let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
    let pick = |r: &mut rng::Stream, shift: f64| -> u32 {
        let t = shift + normal.sample(r);
        if t < -0.5 {
            0
        } else if t < 0.6 {
            1
        } else {
            2
        }
    };
    for _ in 0..clusters {
        let m = r.random_range(15..40usize);
        let (a, b) = (0.8 * normal.sample(&mut r), 0.8 * normal.sample(&mut r));
        for _ in 0..m {
            let row = pick(&mut r, a);
            let col = pick(&mut r, b);
            units.push(PopulationUnit { y: 0.0, x: vec![], categories: vec![row, col] });
        }
        sizes.push(m);
    }
    let mut pop = FinitePopulation::with_clusters(units, sizes).unwrap();
    let levels: Vec<String> = (0..3).map(|k| k.to_string()).collect();
    pop.categorical =
        vec![CategoricalVar { name: "r".into(), levels: levels.clone() }, CategoricalVar { name: "c".into(), levels }];
    let data = draw_two_stage(&pop, 50, 10, seed).unwrap();
    let table = two_way_table_with_weights(&data, 0, 1, &data.weights()).unwrap();
    let m = bootstrap_weights(&data, KS_REPLICATES, seed, &Sequential).unwrap();
    let reps: Vec<_> = m.columns().map(|c| two_way_table_with_weights(&data, 0, 1, c).unwrap()).collect();
    let (x2, _) = independence_bootstrap(&table, &reps).unwrap();
    let mixture = ChiSqMixture::new(independence_eigenvalues(&table, &reps).unwrap()).unwrap();
    mixture_ks(&x2, &mixture, seed)
}

/// Component-wise KS distance of `√n(θ̂* − θ̂)` from `N(0, n Σ̂_sandwich)` for a
/// Gaussian working model on a Poisson sample.
pub fn lemma_one_ks(seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0xB4, 0);
    let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
    let size_n = 5000;
    let mut measure = Vec::with_capacity(size_n);
    let units = (0..size_n)
        .map(|_| {
            let x = vec![normal.sample(&mut r)];
            let y = 1.0 + 0.5 * x[0] + normal.sample(&mut r);
            measure.push(1.0 + (y - 1.0).abs());
            PopulationUnit { y, x, categories: vec![] }
        })
        .collect();
    let pop = FinitePopulation::new(units);
    let total: f64 = measure.iter().sum();
    let inclusion: Vec<f64> = measure.iter().map(|m| (500.0 * m / total).min(1.0)).collect();
    let data = draw_poisson(&pop, &inclusion, seed).unwrap();
    let model = Model::gaussian();
    let fit = models::fit(&model, &data, &data.weights(), None).unwrap();
    let sandwich = regression::sandwich_covariance(&model, &data, &fit).unwrap();
    let m = bootstrap_weights(&data, KS_REPLICATES, seed, &Sequential).unwrap();
    let estimates: Vec<Vector> =
        m.columns().map(|w| models::fit(&model, &data, w, Some(&fit.theta)).unwrap().theta).collect();
    (0..fit.theta.len())
        .map(|j| {
            let sd = sandwich[(j, j)].sqrt();
            let mut z: Vec<f64> = estimates.iter().map(|t| (t[j] - fit.theta[j]) / sd).collect();
            z.sort_by(f64::total_cmp);
            refdist::ks_one_sample(&z, refdist::normal_cdf)
        })
        .collect()
}
