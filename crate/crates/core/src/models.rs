//! Mean/variance model descriptors and survey-weighted pseudo-likelihood
//! estimation.
//!
//! Every model has a linear predictor `η = θ₀ + Σ_j θ_j x_j`. Criteria are
//! normalized by the known population size `N`:
//!
//! * `l_w(θ) = N⁻¹ Σ w_i log f(y_i; θ)`
//! * `Ŝ_w(θ) = N⁻¹ Σ w_i u(θ; y_i)`, `u = (y − μ) V₀(μ)⁻¹ ∂μ/∂θ`
//! * `Î_w(θ) = N⁻¹ Σ w_i I(θ; y_i)`, `I = −∂u/∂θᵀ`

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::SurveyDataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub const SCORE_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 50;
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

/// Working variance function `V₀(μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceFn {
    Constant(f64),
    /// `μ(1 − μ)`
    Binomial,
    /// `μ`
    Poisson,
}

/// Gaussian dispersion: fixed, or concentrated out of the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dispersion {
    Known(f64),
    Estimated,
}

/// Parametric density used by likelihood-ratio statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Gaussian(Dispersion),
    Bernoulli,
    Poisson,
}

/// Mean, working variance, and (optionally) density of a regression model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub link: Link,
    pub variance: VarianceFn,
    pub density: Option<Density>,
}

impl Model {
    /// Gaussian linear model with the residual variance profiled out of the
    /// likelihood. Estimating equations use `V₀ = 1`; test statistics rescale
    /// by the estimated `σ̂²`.
    pub fn gaussian() -> Self {
        Self {
            link: Link::Identity,
            variance: VarianceFn::Constant(1.0),
            density: Some(Density::Gaussian(Dispersion::Estimated)),
        }
    }

    pub fn gaussian_known(sigma2: f64) -> Self {
        Self {
            link: Link::Identity,
            variance: VarianceFn::Constant(sigma2),
            density: Some(Density::Gaussian(Dispersion::Known(sigma2))),
        }
    }

    pub fn logistic() -> Self {
        Self { link: Link::Logit, variance: VarianceFn::Binomial, density: Some(Density::Bernoulli) }
    }

    pub fn poisson() -> Self {
        Self { link: Link::Log, variance: VarianceFn::Poisson, density: Some(Density::Poisson) }
    }

    /// Mean/variance-only model (no likelihood).
    pub fn quasi(link: Link, variance: VarianceFn) -> Self {
        Self { link, variance, density: None }
    }

    pub fn name(&self) -> &'static str {
        match (self.link, self.density) {
            (Link::Identity, Some(Density::Gaussian(_))) => "gaussian",
            (Link::Logit, Some(Density::Bernoulli)) => "logistic",
            (Link::Log, Some(Density::Poisson)) => "poisson",
            _ => "quasi",
        }
    }

    pub fn estimates_dispersion(&self) -> bool {
        matches!(self.density, Some(Density::Gaussian(Dispersion::Estimated)))
    }

    pub fn is_parametric(&self) -> bool {
        self.density.is_some()
    }

    fn is_canonical(&self) -> bool {
        matches!(
            (self.link, self.variance),
            (Link::Identity, VarianceFn::Constant(_))
                | (Link::Logit, VarianceFn::Binomial)
                | (Link::Log, VarianceFn::Poisson)
        )
    }

    /// `(μ, dμ/dη, d²μ/dη²)`.
    fn mean(&self, eta: f64) -> (f64, f64, f64) {
        match self.link {
            Link::Identity => (eta, 1.0, 0.0),
            Link::Logit => {
                let mu = logistic(eta);
                let d1 = mu * (1.0 - mu);
                (mu, d1, d1 * (1.0 - 2.0 * mu))
            }
            Link::Log => {
                let mu = libm::exp(eta);
                (mu, mu, mu)
            }
        }
    }

    /// `(V₀(μ), V₀'(μ))`.
    fn working_variance(&self, mu: f64) -> (f64, f64) {
        match self.variance {
            VarianceFn::Constant(c) => (c, 0.0),
            VarianceFn::Binomial => (mu * (1.0 - mu), 1.0 - 2.0 * mu),
            VarianceFn::Poisson => (mu, 1.0),
        }
    }

    /// Per-unit `(score multiplier, information multiplier)`: the unit score is
    /// `a · z` and the unit information `b · z zᵀ` with `z = (1, x)`.
    fn unit_terms(&self, eta: f64, y: f64) -> (f64, f64) {
        let (mu, d1, d2) = self.mean(eta);
        if self.is_canonical() {
            let scale = match self.variance {
                VarianceFn::Constant(c) => 1.0 / c,
                _ => 1.0,
            };
            return ((y - mu) * scale, d1 * scale);
        }
        let (v, dv) = self.working_variance(mu);
        let g = d1 / v;
        let dg = (d2 * v - d1 * dv * d1) / (v * v);
        ((y - mu) * g, d1 * g - (y - mu) * dg)
    }

    fn log_density(&self, eta: f64, y: f64) -> f64 {
        match self.density {
            Some(Density::Gaussian(Dispersion::Known(s2))) => {
                let r = y - eta;
                -0.5 * libm::log(2.0 * core::f64::consts::PI * s2) - r * r / (2.0 * s2)
            }
            // Concentrated form is handled at the aggregate level.
            Some(Density::Gaussian(Dispersion::Estimated)) => {
                let r = y - eta;
                -r * r
            }
            Some(Density::Bernoulli) => y * eta - softplus(eta),
            Some(Density::Poisson) => y * eta - libm::exp(eta) - libm::lgamma(y + 1.0),
            None => f64::NAN,
        }
    }

    /// Factor relating the quasi-score information to the log-likelihood
    /// information (`σ̂²(θ)` for a Gaussian model with estimated dispersion).
    pub fn dispersion(&self, data: &SurveyDataset, theta: &Vector, weights: &[f64]) -> f64 {
        match self.density {
            Some(Density::Gaussian(Dispersion::Estimated)) => {
                let (rss, total) = weighted_rss(data, theta, weights);
                rss / total
            }
            _ => 1.0,
        }
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + libm::exp(-eta))
    } else {
        let e = libm::exp(eta);
        e / (1.0 + e)
    }
}

/// `log(1 + e^η)` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + libm::log1p(libm::exp(-eta))
    } else {
        libm::log1p(libm::exp(eta))
    }
}

#[inline]
fn linear_predictor(theta: &Vector, x: &[f64]) -> f64 {
    theta[0] + x.iter().zip(theta.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>()
}

fn check_dims(data: &SurveyDataset, theta: &Vector, weights: &[f64]) -> Result<()> {
    let p = data.x_dim() + 1;
    if theta.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: theta.len() });
    }
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), got: weights.len() });
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(invalid("non-finite parameter"));
    }
    Ok(())
}

fn weighted_rss(data: &SurveyDataset, theta: &Vector, weights: &[f64]) -> (f64, f64) {
    data.units().iter().zip(weights).filter(|(_, &w)| w != 0.0).fold((0.0, 0.0), |(rss, tot), (u, &w)| {
        let r = u.y - linear_predictor(theta, &u.x);
        (rss + w * r * r, tot + w)
    })
}

/// Survey-weighted log-likelihood `l_w(θ)`; `weights` may be base or replicate weights.
pub fn weighted_loglik(model: &Model, data: &SurveyDataset, theta: &Vector, weights: &[f64]) -> Result<f64> {
    check_dims(data, theta, weights)?;
    let big_n = data.population_size() as f64;
    match model.density {
        None => Err(Error::Unsupported(format!("{} model has no likelihood", model.name()))),
        Some(Density::Gaussian(Dispersion::Estimated)) => {
            let (rss, total) = weighted_rss(data, theta, weights);
            let s2 = rss / total;
            Ok(total / big_n * (-0.5 * libm::log(2.0 * core::f64::consts::PI * s2) - 0.5))
        }
        Some(_) => {
            let sum: f64 = data
                .units()
                .iter()
                .zip(weights)
                .filter(|(_, &w)| w != 0.0)
                .map(|(u, &w)| w * model.log_density(linear_predictor(theta, &u.x), u.y))
                .sum();
            Ok(sum / big_n)
        }
    }
}

/// Score and information accumulated in one pass.
fn accumulate(model: &Model, data: &SurveyDataset, theta: &Vector, weights: &[f64], info: bool) -> (Vector, Matrix) {
    let p = theta.len();
    let big_n = data.population_size() as f64;
    let mut score = Vector::zeros(p);
    let mut information = Matrix::zeros(if info { p } else { 0 }, if info { p } else { 0 });
    let mut z = alloc::vec![1.0; p];
    for (u, &w) in data.units().iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        z[1..].copy_from_slice(&u.x);
        let (a, b) = model.unit_terms(linear_predictor(theta, &u.x), u.y);
        let (wa, wb) = (w * a, w * b);
        for j in 0..p {
            score[j] += wa * z[j];
        }
        if info {
            for j in 0..p {
                let zj = wb * z[j];
                for k in 0..=j {
                    information[(j, k)] += zj * z[k];
                }
            }
        }
    }
    if info {
        for j in 0..p {
            for k in 0..j {
                information[(k, j)] = information[(j, k)];
            }
        }
        information /= big_n;
    }
    (score / big_n, information)
}

pub fn weighted_score(model: &Model, data: &SurveyDataset, theta: &Vector, weights: &[f64]) -> Result<Vector> {
    check_dims(data, theta, weights)?;
    Ok(accumulate(model, data, theta, weights, false).0)
}

pub fn weighted_info(model: &Model, data: &SurveyDataset, theta: &Vector, weights: &[f64]) -> Result<Matrix> {
    check_dims(data, theta, weights)?;
    Ok(accumulate(model, data, theta, weights, true).1)
}

/// `N⁻² Σ w_i² u_i u_iᵀ`, the with-replacement plug-in variance of `Ŝ_w`.
pub fn score_variance(model: &Model, data: &SurveyDataset, theta: &Vector, weights: &[f64]) -> Result<Matrix> {
    check_dims(data, theta, weights)?;
    let p = theta.len();
    let big_n = data.population_size() as f64;
    let mut out = Matrix::zeros(p, p);
    let mut z = alloc::vec![1.0; p];
    for (u, &w) in data.units().iter().zip(weights) {
        z[1..].copy_from_slice(&u.x);
        let a = w * model.unit_terms(linear_predictor(theta, &u.x), u.y).0;
        for j in 0..p {
            for k in 0..p {
                out[(j, k)] += a * a * z[j] * z[k];
            }
        }
    }
    Ok(out / (big_n * big_n))
}

/// Parameters pinned at fixed values (`θ₂ = θ₂⁽⁰⁾`); the rest form `θ₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restriction {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Restriction {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: indices.len(), got: values.len() });
        }
        let mut pairs: Vec<(usize, f64)> = indices.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("repeated restricted index"));
        }
        if pairs.iter().any(|p| !p.1.is_finite()) {
            return Err(invalid("restricted value must be finite"));
        }
        Ok(Self { indices: pairs.iter().map(|p| p.0).collect(), values: pairs.iter().map(|p| p.1).collect() })
    }

    pub fn none() -> Self {
        Self { indices: Vec::new(), values: Vec::new() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Same indices, values taken from `theta`.
    pub fn at(&self, theta: &Vector) -> Self {
        Self { indices: self.indices.clone(), values: self.indices.iter().map(|&i| theta[i]).collect() }
    }

    /// Indices of the free block `θ₁` for a `p`-vector.
    pub fn free(&self, p: usize) -> Vec<usize> {
        (0..p).filter(|i| !self.indices.contains(i)).collect()
    }

    fn validate(&self, p: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= p) {
            Some(i) => Err(invalid(format!("restricted index {i} outside parameter dimension {p}"))),
            None => Ok(()),
        }
    }
}

/// Fitted parameter with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub theta: Vector,
    /// `‖Ŝ_w‖∞` over the free parameters at the solution.
    pub score_norm: f64,
    pub info: Matrix,
    pub iterations: usize,
    pub converged: bool,
    pub loglik: Option<f64>,
    /// Euclidean score norms of the accepted iterates, starting at `init`.
    pub score_path: Vec<f64>,
}

/// Closed-form weighted least squares `(Xᵀ W X)⁻¹ Xᵀ W y`.
pub fn weighted_least_squares(data: &SurveyDataset, weights: &[f64]) -> Result<Vector> {
    let p = data.x_dim() + 1;
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = Vector::zeros(p);
    let mut z = alloc::vec![1.0; p];
    for (u, &w) in data.units().iter().zip(weights) {
        z[1..].copy_from_slice(&u.x);
        for j in 0..p {
            xty[j] += w * z[j] * u.y;
            for k in 0..p {
                xtx[(j, k)] += w * z[j] * z[k];
            }
        }
    }
    linalg::solve(&xtx, &xty)
}

fn default_init(model: &Model, data: &SurveyDataset, weights: &[f64]) -> Vector {
    let p = data.x_dim() + 1;
    match model.link {
        Link::Identity => weighted_least_squares(data, weights).unwrap_or_else(|_| Vector::zeros(p)),
        _ => Vector::zeros(p),
    }
}

/// Solves `Ŝ_w(θ) = 0` by Newton–Raphson with step halving.
pub fn fit(model: &Model, data: &SurveyDataset, weights: &[f64], init: Option<&Vector>) -> Result<ModelFit> {
    fit_profile(model, data, weights, &Restriction::none(), init)
}

/// Solves the free block `Ŝ_{w1}(θ₁, θ₂⁽⁰⁾) = 0` with the restricted entries pinned.
pub fn fit_profile(
    model: &Model,
    data: &SurveyDataset,
    weights: &[f64],
    fixed: &Restriction,
    init: Option<&Vector>,
) -> Result<ModelFit> {
    let p = data.x_dim() + 1;
    if data.len() < p {
        return Err(invalid(format!("{} records cannot identify {p} parameters", data.len())));
    }
    fixed.validate(p)?;
    let free = fixed.free(p);
    let mut theta = match init {
        Some(t) => t.clone(),
        None => default_init(model, data, weights),
    };
    check_dims(data, &theta, weights)?;
    for (&i, &v) in fixed.indices.iter().zip(&fixed.values) {
        theta[i] = v;
    }

    let (mut score, mut info) = accumulate(model, data, &theta, weights, true);
    let free_norm = |s: &Vector| -> (f64, f64) {
        let sub = linalg::subvector(s, &free);
        (sub.amax(), sub.norm())
    };
    let (mut sup, mut norm) = free_norm(&score);
    let mut score_path = alloc::vec![norm];
    let mut iterations = 0;
    let mut converged = sup < SCORE_TOL || free.is_empty();
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let info_free = linalg::submatrix(&info, &free, &free);
        let step = linalg::solve(&info_free, &linalg::subvector(&score, &free))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = theta.clone();
            for (k, &i) in free.iter().enumerate() {
                trial[i] += scale * step[k];
            }
            if trial.iter().all(|t| t.is_finite()) {
                let (s, inf) = accumulate(model, data, &trial, weights, true);
                let (trial_sup, trial_norm) = free_norm(&s);
                if trial_norm < norm && trial_sup.is_finite() {
                    theta = trial;
                    score = s;
                    info = inf;
                    sup = trial_sup;
                    norm = trial_norm;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        score_path.push(norm);
        converged = sup < SCORE_TOL;
    }
    let loglik = if model.is_parametric() { Some(weighted_loglik(model, data, &theta, weights)?) } else { None };
    Ok(ModelFit { theta, score_norm: sup, info, iterations, converged, loglik, score_path })
}
