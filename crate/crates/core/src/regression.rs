//! Tests of `H₀: θ₂ = θ₂⁽⁰⁾` in survey-weighted regression models: the
//! pseudo-likelihood ratio and quasi-score statistics with naive χ²,
//! Lumley–Scott, and bootstrap reference distributions, plus Wald tests.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapWeightMatrix;
use crate::data::{DesignKind, SurveyDataset};
use crate::error::{invalid, Error, Result};
use crate::exec::Executor;
use crate::linalg::{self, Matrix, Vector};
use crate::models::{self, Model, ModelFit, Restriction};
use crate::refdist;

/// Largest tolerated share of non-converged bootstrap replicates.
pub const MAX_DROP_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Naive likelihood ratio: `W` against `χ²(q)`.
    #[serde(rename = "NLR")]
    Nlr,
    /// Naive quasi-score: `n X²_QS` against `χ²(q)`.
    #[serde(rename = "NQS")]
    Nqs,
    /// Lumley–Scott: `W / δ̂` against `F(1, k)`.
    #[serde(rename = "LS")]
    Ls,
    /// `W` against the bootstrap distribution of `W*`.
    #[serde(rename = "BLR")]
    Blr,
    /// `n X²_QS` against the bootstrap distribution of `n X²*_QS`.
    #[serde(rename = "BQS")]
    Bqs,
    #[serde(rename = "Wald")]
    Wald,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Nlr, Method::Nqs, Method::Ls, Method::Blr, Method::Bqs, Method::Wald];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nlr => "NLR",
            Method::Nqs => "NQS",
            Method::Ls => "LS",
            Method::Blr => "BLR",
            Method::Bqs => "BQS",
            Method::Wald => "Wald",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    pub fn needs_likelihood(self) -> bool {
        matches!(self, Method::Nlr | Method::Ls | Method::Blr)
    }

    pub fn needs_replicates(self) -> bool {
        matches!(self, Method::Ls | Method::Blr | Method::Bqs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    ChiSq { df: usize },
    F { df1: f64, df2: f64 },
    BootstrapEmpirical { replicates: usize },
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    Sandwich,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub replicates_used: usize,
    pub replicates_dropped: usize,
    /// Lumley–Scott `δ̂`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design_effect: Option<f64>,
    /// Sorted replicate statistics of bootstrap-calibrated methods.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_statistics: Option<Vec<f64>>,
}

impl TestResult {
    fn plain(method: Method, statistic: f64, reference: Reference, p_value: f64) -> Self {
        Self {
            method,
            statistic,
            reference,
            p_value,
            replicates_used: 0,
            replicates_dropped: 0,
            design_effect: None,
            bootstrap_statistics: None,
        }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// `(1 + #{T*_b ≥ T}) / (B_eff + 1)`.
pub fn empirical_p(statistic: f64, replicates: &[f64]) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::EmptyData);
    }
    let exceed = replicates.iter().filter(|&&t| t >= statistic).count();
    Ok((1 + exceed) as f64 / (replicates.len() + 1) as f64)
}

fn tested_restriction(data: &SurveyDataset, null: &Restriction) -> Result<()> {
    let p = data.x_dim() + 1;
    if null.is_empty() {
        return Err(invalid("null hypothesis restricts no parameter"));
    }
    if let Some(i) = null.indices().iter().find(|&&i| i >= p) {
        return Err(invalid(format!("tested index {i} outside parameter dimension {p}")));
    }
    Ok(())
}

fn require_likelihood(model: &Model) -> Result<()> {
    if model.is_parametric() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{} model has no likelihood", model.name())))
    }
}

fn converged(fit: ModelFit) -> Result<ModelFit> {
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged { iterations: fit.iterations, score_norm: fit.score_norm })
    }
}

/// `Î_{22·1} = Î₂₂ − Î₂₁ Î₁₁⁻¹ Î₁₂`.
pub fn info_22_1(info: &Matrix, tested: &[usize]) -> Result<Matrix> {
    let free: Vec<usize> = (0..info.nrows()).filter(|i| !tested.contains(i)).collect();
    let i22 = linalg::submatrix(info, tested, tested);
    if free.is_empty() {
        return Ok(i22);
    }
    let i11 = linalg::submatrix(info, &free, &free);
    let i12 = linalg::submatrix(info, &free, tested);
    let i11_inv = linalg::inverse(&i11)?;
    Ok(linalg::symmetrize(&(i22 - i12.transpose() * i11_inv * i12)))
}

/// `Ŝ₂ᵀ Î_{22·1}⁻¹ Ŝ₂`, valid where the free block of the score vanishes.
pub fn score_quadratic(score: &Vector, info: &Matrix, tested: &[usize]) -> Result<f64> {
    let s2 = linalg::subvector(score, tested);
    let schur = info_22_1(info, tested)?;
    Ok(s2.dot(&linalg::solve(&schur, &s2)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRatio {
    /// `W = −2n{l_w(θ̂⁽⁰⁾) − l_w(θ̂)}`.
    pub statistic: f64,
    pub full: ModelFit,
    pub null: ModelFit,
}

/// Pseudo-likelihood ratio statistic.
pub fn lrt(model: &Model, data: &SurveyDataset, null: &Restriction) -> Result<LikelihoodRatio> {
    require_likelihood(model)?;
    tested_restriction(data, null)?;
    let w = data.weights();
    let full = converged(models::fit(model, data, &w, None)?)?;
    lrt_with(model, data, null, full)
}

fn lrt_with(model: &Model, data: &SurveyDataset, null: &Restriction, full: ModelFit) -> Result<LikelihoodRatio> {
    let w = data.weights();
    let null_fit = converged(models::fit_profile(model, data, &w, null, Some(&full.theta))?)?;
    let n = data.len() as f64;
    let statistic = -2.0 * n * (null_fit.loglik.unwrap_or(f64::NAN) - full.loglik.unwrap_or(f64::NAN));
    Ok(LikelihoodRatio { statistic, full, null: null_fit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiScore {
    /// `n X²_QS`, the scale compared with reference distributions.
    pub statistic: f64,
    /// `X²_QS` itself.
    pub unscaled: f64,
    pub null: ModelFit,
    /// Working-variance scale `σ̂²` (1 unless the model estimates it).
    pub dispersion: f64,
}

/// `σ̂²` at the unrestricted fit for models that estimate the dispersion.
fn working_scale(model: &Model, data: &SurveyDataset, weights: &[f64], init: Option<&Vector>) -> Result<f64> {
    if !model.estimates_dispersion() {
        return Ok(1.0);
    }
    let full = converged(models::fit(model, data, weights, init)?)?;
    Ok(model.dispersion(data, &full.theta, weights))
}

/// Quasi-score statistic in its reduced form, evaluated at the restricted
/// estimate `θ̂⁽⁰⁾ = (θ̂₁⁽⁰⁾, θ₂⁽⁰⁾)`. A Gaussian model with estimated
/// dispersion uses the working variance `V₀ = σ̂²` from the unrestricted fit.
pub fn quasi_score(model: &Model, data: &SurveyDataset, null: &Restriction) -> Result<QuasiScore> {
    tested_restriction(data, null)?;
    let w = data.weights();
    let null_fit = converged(models::fit_profile(model, data, &w, null, None)?)?;
    let score = models::weighted_score(model, data, &null_fit.theta, &w)?;
    let dispersion = working_scale(model, data, &w, None)?;
    let unscaled = score_quadratic(&score, &null_fit.info, null.indices())? / dispersion;
    Ok(QuasiScore { statistic: data.len() as f64 * unscaled, unscaled, null: null_fit, dispersion })
}

/// `Ŝᵀ Î⁻¹ Ŝ` at `θ̂⁽⁰⁾` using the full score vector (unscaled).
pub fn quasi_score_full(model: &Model, data: &SurveyDataset, null: &Restriction) -> Result<f64> {
    tested_restriction(data, null)?;
    let w = data.weights();
    let null_fit = converged(models::fit_profile(model, data, &w, null, None)?)?;
    let score = models::weighted_score(model, data, &null_fit.theta, &w)?;
    Ok(score.dot(&linalg::solve(&null_fit.info, &score)?) / working_scale(model, data, &w, None)?)
}

/// Per-replicate outcomes, in replicate order, for replicates whose fits converged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicateStatistics {
    /// `W*_b`; empty when the likelihood statistic was not requested.
    pub lrt: Vec<f64>,
    /// `n X²*_b`.
    pub quasi_score: Vec<f64>,
    /// Unrestricted replicate estimates `θ̂*_b`; empty unless requested.
    pub estimates: Vec<Vector>,
    pub replicates: usize,
    pub dropped: usize,
}

impl ReplicateStatistics {
    pub fn used(&self) -> usize {
        self.replicates - self.dropped
    }

    /// Bootstrap covariance of `θ̂*` (divisor `B_eff`).
    pub fn covariance(&self) -> Result<Matrix> {
        if self.estimates.len() < 2 {
            return Err(Error::SingularVariance);
        }
        let rows: Vec<Vec<f64>> = self.estimates.iter().map(|t| t.iter().copied().collect()).collect();
        Ok(linalg::covariance(&rows, self.estimates[0].len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplicateRequest {
    pub lrt: bool,
    pub estimates: bool,
}

/// Refits every replicate and evaluates the bootstrap statistics
///
/// `W* = −2n{l*_w(θ̂₁*⁽⁰⁾, θ̂₂) − l*_w(θ̂*)}` and `n X²*_QS(θ̂₂)`, both pinned at
/// the full-sample `θ̂₂` (`σ̂²` for the quasi-score comes from the replicate's
/// unrestricted fit). Replicates whose fits fail are dropped; more than
/// [`MAX_DROP_RATE`] dropped is an error.
pub fn replicate_statistics<E: Executor>(
    model: &Model,
    data: &SurveyDataset,
    full: &ModelFit,
    tested: &[usize],
    matrix: &BootstrapWeightMatrix,
    request: ReplicateRequest,
    exec: &E,
) -> Result<ReplicateStatistics> {
    if matrix.rows() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), got: matrix.rows() });
    }
    if matrix.replicates() == 0 {
        return Err(Error::EmptyData);
    }
    if request.lrt {
        require_likelihood(model)?;
    }
    let pinned = Restriction::new(tested.to_vec(), tested.iter().map(|&i| full.theta[i]).collect())?;
    let n = data.len() as f64;
    let outcomes = exec.map_indexed(matrix.replicates(), |b| {
        let w = matrix.column(b);
        let prof = models::fit_profile(model, data, w, &pinned, Some(&full.theta)).ok().filter(|f| f.converged)?;
        let score = models::weighted_score(model, data, &prof.theta, w).ok()?;
        let mut qs = n * score_quadratic(&score, &prof.info, tested).ok()?;
        let unrestricted = if request.lrt || request.estimates || model.estimates_dispersion() {
            Some(models::fit(model, data, w, Some(&full.theta)).ok().filter(|f| f.converged)?)
        } else {
            None
        };
        if let (true, Some(u)) = (model.estimates_dispersion(), &unrestricted) {
            qs /= model.dispersion(data, &u.theta, w);
        }
        let lrt = match (&unrestricted, request.lrt) {
            (Some(u), true) => Some(-2.0 * n * (prof.loglik? - u.loglik?)),
            _ => None,
        };
        if !qs.is_finite() || lrt.is_some_and(|v| !v.is_finite()) {
            return None;
        }
        Some((lrt, qs, unrestricted.filter(|_| request.estimates).map(|u| u.theta)))
    });

    let mut out = ReplicateStatistics { replicates: matrix.replicates(), ..Default::default() };
    for o in outcomes {
        match o {
            Some((lrt, qs, theta)) => {
                out.lrt.extend(lrt);
                out.quasi_score.push(qs);
                out.estimates.extend(theta);
            }
            None => out.dropped += 1,
        }
    }
    if out.dropped as f64 > MAX_DROP_RATE * out.replicates as f64 {
        return Err(Error::TooManyDropped { dropped: out.dropped, total: out.replicates });
    }
    Ok(out)
}

/// `{W*_b}` for the replicate columns of `matrix`.
pub fn lrt_bootstrap<E: Executor>(
    model: &Model,
    data: &SurveyDataset,
    full: &ModelFit,
    tested: &[usize],
    matrix: &BootstrapWeightMatrix,
    exec: &E,
) -> Result<ReplicateStatistics> {
    replicate_statistics(model, data, full, tested, matrix, ReplicateRequest { lrt: true, estimates: false }, exec)
}

/// `{n X²*_b}` for the replicate columns of `matrix`.
pub fn quasi_score_bootstrap<E: Executor>(
    model: &Model,
    data: &SurveyDataset,
    full: &ModelFit,
    tested: &[usize],
    matrix: &BootstrapWeightMatrix,
    exec: &E,
) -> Result<ReplicateStatistics> {
    replicate_statistics(model, data, full, tested, matrix, ReplicateRequest::default(), exec)
}

/// Sandwich covariance `Î⁻¹ [N⁻² Σ w² u uᵀ] Î⁻¹` of `θ̂`.
pub fn sandwich_covariance(model: &Model, data: &SurveyDataset, fit: &ModelFit) -> Result<Matrix> {
    let w = data.weights();
    let bread = linalg::inverse(&fit.info)?;
    let meat = models::score_variance(model, data, &fit.theta, &w)?;
    Ok(linalg::symmetrize(&(&bread * meat * &bread)))
}

fn wald_from(theta: &Vector, cov: &Matrix, null: &Restriction) -> Result<TestResult> {
    let idx = null.indices();
    let diff = Vector::from_iterator(idx.len(), idx.iter().zip(null.values()).map(|(&i, &v)| theta[i] - v));
    let v = linalg::submatrix(cov, idx, idx);
    if idx.len() == 1 {
        if !(v[(0, 0)] > 0.0) {
            return Err(Error::SingularVariance);
        }
        let z = diff[0] / libm::sqrt(v[(0, 0)]);
        let p = (2.0 * refdist::normal_sf(z.abs())).min(1.0);
        return Ok(TestResult::plain(Method::Wald, z, Reference::Normal, p));
    }
    let inv = linalg::inverse(&v).map_err(|_| Error::SingularVariance)?;
    let stat = diff.dot(&(inv * &diff));
    let p = refdist::chisq_sf(stat.max(0.0), idx.len() as f64)?;
    Ok(TestResult::plain(Method::Wald, stat, Reference::ChiSq { df: idx.len() }, p))
}

/// Wald test; scalar restrictions give `z` against `N(0,1)`, vector ones a
/// quadratic form against `χ²(q)`.
pub fn wald<E: Executor>(
    model: &Model,
    data: &SurveyDataset,
    null: &Restriction,
    variance: VarianceMethod,
    matrix: Option<&BootstrapWeightMatrix>,
    exec: &E,
) -> Result<TestResult> {
    tested_restriction(data, null)?;
    let full = converged(models::fit(model, data, &data.weights(), None)?)?;
    match variance {
        VarianceMethod::Sandwich => wald_from(&full.theta, &sandwich_covariance(model, data, &full)?, null),
        VarianceMethod::Bootstrap => {
            let matrix = matrix.ok_or_else(|| invalid("bootstrap variance needs replicate weights"))?;
            let reps = replicate_statistics(
                model,
                data,
                &full,
                null.indices(),
                matrix,
                ReplicateRequest { lrt: false, estimates: true },
                exec,
            )?;
            let mut r = wald_from(&full.theta, &reps.covariance()?, null)?;
            r.replicates_used = reps.used();
            r.replicates_dropped = reps.dropped;
            Ok(r)
        }
    }
}

/// Degrees of freedom `k` of the design-based variance estimator.
pub fn lumley_scott_df(data: &SurveyDataset) -> f64 {
    let p = (data.x_dim() + 1) as f64;
    let effective = match data.design() {
        DesignKind::Poisson | DesignKind::Ppswr => data.len() as f64,
        DesignKind::StratifiedSrs => data.stratum_sizes().iter().map(|&(_, n)| n as f64 - 1.0).sum(),
        DesignKind::TwoStageCluster => data.cluster_count() as f64,
    };
    (effective - p).max(1.0)
}

fn lumley_scott_from(
    model: &Model,
    data: &SurveyDataset,
    ratio: &LikelihoodRatio,
    tested: usize,
    variance: f64,
) -> Result<TestResult> {
    // Log-likelihood information at the restricted estimate (θ̂₁⁽⁰⁾, θ₂⁽⁰⁾).
    let phi = model.dispersion(data, &ratio.null.theta, &data.weights());
    let schur = info_22_1(&(&ratio.null.info / phi), &[tested])?[(0, 0)];
    let delta = data.len() as f64 * variance * schur;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::SingularVariance);
    }
    let k = lumley_scott_df(data);
    let statistic = ratio.statistic / delta;
    let p = refdist::f_sf(statistic.max(0.0), 1.0, k)?;
    let mut r = TestResult::plain(Method::Ls, statistic, Reference::F { df1: 1.0, df2: k }, p);
    r.design_effect = Some(delta);
    Ok(r)
}

/// Lumley–Scott test `W / δ̂` with `δ̂ = n V̂(θ̂₂) Î_{w,22·1}` against `F(1, k)`.
pub fn lumley_scott<E: Executor>(
    model: &Model,
    data: &SurveyDataset,
    null: &Restriction,
    variance: VarianceMethod,
    matrix: Option<&BootstrapWeightMatrix>,
    exec: &E,
) -> Result<TestResult> {
    if null.len() != 1 {
        return Err(Error::Unsupported("Lumley-Scott test of more than one parameter".into()));
    }
    let ratio = lrt(model, data, null)?;
    let i = null.indices()[0];
    match variance {
        VarianceMethod::Sandwich => {
            let v = sandwich_covariance(model, data, &ratio.full)?[(i, i)];
            lumley_scott_from(model, data, &ratio, i, v)
        }
        VarianceMethod::Bootstrap => {
            let matrix = matrix.ok_or_else(|| invalid("bootstrap variance needs replicate weights"))?;
            let reps = replicate_statistics(
                model,
                data,
                &ratio.full,
                &[i],
                matrix,
                ReplicateRequest { lrt: false, estimates: true },
                exec,
            )?;
            let mut r = lumley_scott_from(model, data, &ratio, i, reps.covariance()?[(i, i)])?;
            r.replicates_used = reps.used();
            r.replicates_dropped = reps.dropped;
            Ok(r)
        }
    }
}

fn bootstrap_result(
    method: Method,
    statistic: f64,
    values: &[f64],
    reps: &ReplicateStatistics,
    keep: bool,
) -> Result<TestResult> {
    let p = empirical_p(statistic, values)?;
    let mut r = TestResult::plain(method, statistic, Reference::BootstrapEmpirical { replicates: values.len() }, p);
    r.replicates_used = reps.used();
    r.replicates_dropped = reps.dropped;
    if keep {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        r.bootstrap_statistics = Some(sorted);
    }
    Ok(r)
}

/// Options shared by [`run_tests`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOptions {
    /// Variance used by Lumley–Scott and Wald.
    pub variance: VarianceMethod,
    /// Attach sorted replicate statistics to bootstrap results.
    pub keep_replicates: bool,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self { variance: VarianceMethod::Bootstrap, keep_replicates: false }
    }
}

/// Runs several methods for one hypothesis, sharing the model fits and a
/// single pass over the replicates. Results follow the order of `methods`.
pub fn run_tests<E: Executor>(
    model: &Model,
    data: &SurveyDataset,
    null: &Restriction,
    methods: &[Method],
    matrix: Option<&BootstrapWeightMatrix>,
    options: TestOptions,
    exec: &E,
) -> Result<Vec<TestResult>> {
    let mut out = run_tests_for_nulls(model, data, core::slice::from_ref(null), methods, matrix, options, exec)?;
    Ok(out.remove(0))
}

/// [`run_tests`] for several null values of the same parameter block. The
/// bootstrap statistics are pinned at `θ̂₂` and so are computed once.
pub fn run_tests_for_nulls<E: Executor>(
    model: &Model,
    data: &SurveyDataset,
    nulls: &[Restriction],
    methods: &[Method],
    matrix: Option<&BootstrapWeightMatrix>,
    options: TestOptions,
    exec: &E,
) -> Result<Vec<Vec<TestResult>>> {
    let first = nulls.first().ok_or_else(|| invalid("no null hypothesis given"))?;
    for null in nulls {
        tested_restriction(data, null)?;
        if null.indices() != first.indices() {
            return Err(invalid("null hypotheses must restrict the same parameters"));
        }
    }
    if let Some(m) = methods.iter().find(|m| m.needs_likelihood()) {
        if !model.is_parametric() {
            return Err(Error::Unsupported(format!(
                "{} needs a likelihood; {} model has none",
                m.name(),
                model.name()
            )));
        }
    }
    let q = first.len();
    if q != 1 && methods.contains(&Method::Ls) {
        return Err(Error::Unsupported("Lumley-Scott test of more than one parameter".into()));
    }
    let boot_variance = options.variance == VarianceMethod::Bootstrap;
    let needs_matrix = methods.iter().any(|m| match m {
        Method::Blr | Method::Bqs => true,
        Method::Ls | Method::Wald => boot_variance,
        _ => false,
    });
    let matrix = match (needs_matrix, matrix) {
        (true, None) => return Err(invalid("bootstrap methods need replicate weights")),
        (true, Some(m)) => Some(m),
        (false, _) => None,
    };
    let w = data.weights();
    let full = converged(models::fit(model, data, &w, None)?)?;
    let reps = match matrix {
        Some(mx) => {
            let request = ReplicateRequest {
                lrt: methods.contains(&Method::Blr),
                estimates: boot_variance && methods.iter().any(|m| matches!(m, Method::Ls | Method::Wald)),
            };
            Some(replicate_statistics(model, data, &full, first.indices(), mx, request, exec)?)
        }
        None => None,
    };
    let cov = if methods.iter().any(|m| matches!(m, Method::Ls | Method::Wald)) {
        Some(match &reps {
            Some(r) if boot_variance => r.covariance()?,
            _ => sandwich_covariance(model, data, &full)?,
        })
    } else {
        None
    };
    let note_replicates = |r: &mut TestResult| {
        if let (true, Some(reps)) = (boot_variance, &reps) {
            r.replicates_used = reps.used();
            r.replicates_dropped = reps.dropped;
        }
    };

    let mut all = Vec::with_capacity(nulls.len());
    for null in nulls {
        let ratio = if methods.iter().any(|m| m.needs_likelihood()) {
            Some(lrt_with(model, data, null, full.clone())?)
        } else {
            None
        };
        let qs = if methods.iter().any(|m| matches!(m, Method::Nqs | Method::Bqs)) {
            Some(quasi_score(model, data, null)?)
        } else {
            None
        };
        let w_stat = ratio.as_ref().map(|r| r.statistic).unwrap_or(f64::NAN);
        let x_stat = qs.as_ref().map(|r| r.statistic).unwrap_or(f64::NAN);
        let mut results = Vec::with_capacity(methods.len());
        for &m in methods {
            let r = match m {
                Method::Nlr => TestResult::plain(
                    m,
                    w_stat,
                    Reference::ChiSq { df: q },
                    refdist::chisq_sf(w_stat.max(0.0), q as f64)?,
                ),
                Method::Nqs => TestResult::plain(
                    m,
                    x_stat,
                    Reference::ChiSq { df: q },
                    refdist::chisq_sf(x_stat.max(0.0), q as f64)?,
                ),
                Method::Ls => {
                    let i = null.indices()[0];
                    let ratio = ratio.as_ref().ok_or(Error::EmptyData)?;
                    let v = cov.as_ref().ok_or(Error::SingularVariance)?[(i, i)];
                    let mut r = lumley_scott_from(model, data, ratio, i, v)?;
                    note_replicates(&mut r);
                    r
                }
                Method::Blr => {
                    let reps = reps.as_ref().ok_or(Error::EmptyData)?;
                    bootstrap_result(m, w_stat, &reps.lrt, reps, options.keep_replicates)?
                }
                Method::Bqs => {
                    let reps = reps.as_ref().ok_or(Error::EmptyData)?;
                    bootstrap_result(m, x_stat, &reps.quasi_score, reps, options.keep_replicates)?
                }
                Method::Wald => {
                    let mut r = wald_from(&full.theta, cov.as_ref().ok_or(Error::SingularVariance)?, null)?;
                    note_replicates(&mut r);
                    r
                }
            };
            results.push(r);
        }
        all.push(results);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::bootstrap_weights;
    use crate::data::UnitRecord;
    use crate::exec::Sequential;
    use crate::rng;
    use alloc::vec;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dataset(rows: Vec<(f64, Vec<f64>, f64)>, population: u64, design: DesignKind) -> SurveyDataset {
        let units = rows.into_iter().map(|(y, x, w)| UnitRecord::new(y, x, w)).collect();
        SurveyDataset::new(units, population, design).unwrap()
    }

    fn logistic_data(seed: u64, n: usize, dim: usize) -> SurveyDataset {
        let mut r = rng::stream(seed, 99, 0);
        let rows: Vec<(f64, Vec<f64>, f64)> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
                let eta = -0.2 + x.iter().enumerate().map(|(j, v)| (0.6 - 0.3 * j as f64) * v).sum::<f64>();
                let y = if r.random::<f64>() < 1.0 / (1.0 + libm::exp(-eta)) { 1.0 } else { 0.0 };
                (y, x, 1.0 + 5.0 * r.random::<f64>())
            })
            .collect();
        let total: f64 = rows.iter().map(|r| r.2).sum();
        dataset(rows, libm::round(total) as u64, DesignKind::Poisson)
    }

    fn gaussian_data(seed: u64, n: usize) -> SurveyDataset {
        let mut r = rng::stream(seed, 98, 0);
        let rows = (0..n)
            .map(|_| {
                let x = 5.0 * r.random::<f64>();
                let e: f64 = StandardNormal.sample(&mut r);
                (1.0 + x + e, vec![x], 1.0 + 3.0 * r.random::<f64>())
            })
            .collect();
        dataset(rows, 2 * n as u64 + 7, DesignKind::Poisson)
    }

    #[test]
    fn empirical_p_boundaries() {
        let reps: Vec<f64> = (0..999).map(|i| i as f64).collect();
        assert_eq!(empirical_p(1e9, &reps).unwrap(), 1.0 / 1000.0);
        assert_eq!(empirical_p(f64::NEG_INFINITY, &reps).unwrap(), 1.0);
        assert_eq!(empirical_p(499.0, &reps).unwrap(), 501.0 / 1000.0);
        assert!(empirical_p(1.0, &[]).is_err());
    }

    #[test]
    fn lrt_zero_at_estimate() {
        let d = logistic_data(1, 100, 2);
        let full = models::fit(&Model::logistic(), &d, &d.weights(), None).unwrap();
        let null = Restriction::new(vec![2], vec![full.theta[2]]).unwrap();
        assert!(lrt(&Model::logistic(), &d, &null).unwrap().statistic.abs() < 1e-8);
    }

    #[test]
    fn gaussian_known_lrt_is_rss_difference() {
        let d = gaussian_data(2, 40);
        let null = Restriction::new(vec![1], vec![1.2]).unwrap();
        let w = lrt(&Model::gaussian_known(1.0), &d, &null).unwrap().statistic;
        // Closed-form: full fit by WLS, restricted fit regresses y − 1.2x on a constant.
        let wt = d.weights();
        let wls = models::weighted_least_squares(&d, &wt).unwrap();
        let rss = |a: f64, b: f64| d.units().iter().map(|u| u.weight * (u.y - a - b * u.x[0]).powi(2)).sum::<f64>();
        let a0 = d.units().iter().map(|u| u.weight * (u.y - 1.2 * u.x[0])).sum::<f64>() / d.weight_total();
        let oracle = d.len() as f64 / d.population_size() as f64 * (rss(a0, 1.2) - rss(wls[0], wls[1]));
        assert!((w - oracle).abs() < 1e-9 * oracle.max(1.0));
    }

    #[test]
    fn reduced_and_full_quasi_score_agree() {
        for seed in 0..20 {
            let d = logistic_data(100 + seed, 80, 3);
            let null = Restriction::new(vec![2, 3], vec![0.1, -0.4]).unwrap();
            let reduced = quasi_score(&Model::logistic(), &d, &null).unwrap().unscaled;
            let full = quasi_score_full(&Model::logistic(), &d, &null).unwrap();
            assert!((reduced - full).abs() < 1e-8 * full.max(1.0));
        }
    }

    #[test]
    fn quasi_score_zero_without_nuisance() {
        let d = logistic_data(3, 60, 1);
        let full = models::fit(&Model::logistic(), &d, &d.weights(), None).unwrap();
        let null = Restriction::new(vec![0, 1], vec![full.theta[0], full.theta[1]]).unwrap();
        assert!(quasi_score(&Model::logistic(), &d, &null).unwrap().statistic.abs() < 1e-10);
    }

    #[test]
    fn degenerate_replicates_give_zero_statistics() {
        let d = logistic_data(4, 60, 2);
        let m = BootstrapWeightMatrix::repeat_base(&d, 5);
        let full = models::fit(&Model::logistic(), &d, &d.weights(), None).unwrap();
        let reps = lrt_bootstrap(&Model::logistic(), &d, &full, &[2], &m, &Sequential).unwrap();
        assert_eq!(reps.used(), 5);
        assert!(reps.lrt.iter().chain(&reps.quasi_score).all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn bootstrap_statistics_are_nonnegative() {
        let d = logistic_data(5, 150, 2);
        let m = bootstrap_weights(&d, 50, 11, &Sequential).unwrap();
        let full = models::fit(&Model::logistic(), &d, &d.weights(), None).unwrap();
        let reps = lrt_bootstrap(&Model::logistic(), &d, &full, &[1], &m, &Sequential).unwrap();
        assert!(reps.lrt.iter().all(|&v| v >= -1e-10));
        assert!(reps.quasi_score.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn wald_symmetric_in_sign() {
        let d = gaussian_data(6, 60);
        let full = models::fit(&Model::gaussian(), &d, &d.weights(), None).unwrap();
        let delta = 0.07;
        let up = Restriction::new(vec![1], vec![full.theta[1] + delta]).unwrap();
        let down = Restriction::new(vec![1], vec![full.theta[1] - delta]).unwrap();
        let a = wald(&Model::gaussian(), &d, &up, VarianceMethod::Sandwich, None, &Sequential).unwrap();
        let b = wald(&Model::gaussian(), &d, &down, VarianceMethod::Sandwich, None, &Sequential).unwrap();
        assert!((a.statistic + b.statistic).abs() < 1e-12);
        assert!((a.p_value - b.p_value).abs() < 1e-14);
    }

    #[test]
    fn sandwich_is_robust_ols_on_four_points() {
        // Equal weights w = N/n: the sandwich is (XᵀX)⁻¹ Σ r² x xᵀ (XᵀX)⁻¹.
        let pts = [(0.0, 1.0), (1.0, 2.5), (2.0, 2.0), (3.0, 4.5)];
        let rows = pts.iter().map(|&(x, y)| (y, vec![x], 2.0)).collect();
        let d = dataset(rows, 8, DesignKind::Poisson);
        let fit = models::fit(&Model::gaussian(), &d, &d.weights(), None).unwrap();
        // OLS: x̄ = 1.5, ȳ = 2.5, Sxx = 5, Sxy = 5 → b = 1, a = 1.
        assert!((fit.theta[1] - 1.0).abs() < 1e-12 && (fit.theta[0] - 1.0).abs() < 1e-12);
        let r = [0.0, 0.5, -1.0, 0.5];
        let xtx_inv = [[7.0 / 10.0, -3.0 / 10.0], [-3.0 / 10.0, 1.0 / 5.0]];
        let mut meat = [[0.0; 2]; 2];
        for (k, &(x, _)) in pts.iter().enumerate() {
            let z = [1.0, x];
            for a in 0..2 {
                for b in 0..2 {
                    meat[a][b] += r[k] * r[k] * z[a] * z[b];
                }
            }
        }
        let mut oracle = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for e in 0..2 {
                        oracle[a][b] += xtx_inv[a][c] * meat[c][e] * xtx_inv[e][b];
                    }
                }
            }
        }
        let v = sandwich_covariance(&Model::gaussian(), &d, &fit).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((v[(a, b)] - oracle[a][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lumley_scott_unit_effect_matches_chisq() {
        // δ̂ = 1 and k → ∞ reduce F(1, k) to χ²(1).
        let p_f = refdist::f_sf(3.2, 1.0, 1e9).unwrap();
        let p_c = refdist::chisq_sf(3.2, 1.0).unwrap();
        assert!((p_f - p_c).abs() < 0.005);
    }

    #[test]
    fn lumley_scott_rejects_vector_nulls() {
        let d = logistic_data(7, 60, 2);
        let null = Restriction::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let r = lumley_scott(&Model::logistic(), &d, &null, VarianceMethod::Sandwich, None, &Sequential);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn lrt_needs_likelihood() {
        let d = gaussian_data(8, 30);
        let model = Model::quasi(crate::models::Link::Identity, crate::models::VarianceFn::Constant(1.0));
        let null = Restriction::new(vec![1], vec![1.0]).unwrap();
        assert!(matches!(lrt(&model, &d, &null), Err(Error::Unsupported(_))));
        assert!(quasi_score(&model, &d, &null).is_ok());
    }

    #[test]
    fn run_tests_matches_individual_operations() {
        let d = logistic_data(9, 120, 2);
        let m = bootstrap_weights(&d, 40, 5, &Sequential).unwrap();
        let null = Restriction::new(vec![2], vec![0.0]).unwrap();
        let model = Model::logistic();
        let out = run_tests(&model, &d, &null, &Method::ALL, Some(&m), TestOptions::default(), &Sequential).unwrap();
        assert_eq!(out.iter().map(|r| r.method).collect::<Vec<_>>(), Method::ALL.to_vec());
        assert_eq!(out[0].statistic, lrt(&model, &d, &null).unwrap().statistic);
        assert_eq!(out[1].statistic, quasi_score(&model, &d, &null).unwrap().statistic);
        let ls = lumley_scott(&model, &d, &null, VarianceMethod::Bootstrap, Some(&m), &Sequential).unwrap();
        assert_eq!(out[2], ls);
        let wd = wald(&model, &d, &null, VarianceMethod::Bootstrap, Some(&m), &Sequential).unwrap();
        assert_eq!(out[5], wd);
        for r in &out {
            assert!((0.0..=1.0).contains(&r.p_value));
        }
    }

    #[test]
    fn replicate_matrix_must_match_rows() {
        let d = logistic_data(10, 30, 1);
        let other = logistic_data(11, 31, 1);
        let m = BootstrapWeightMatrix::repeat_base(&other, 3);
        let full = models::fit(&Model::logistic(), &d, &d.weights(), None).unwrap();
        assert!(lrt_bootstrap(&Model::logistic(), &d, &full, &[1], &m, &Sequential).is_err());
    }

    #[test]
    fn too_many_dropped_replicates_is_error() {
        let d = logistic_data(12, 40, 1);
        // All-zero replicates leave nothing to fit.
        let mut cols = vec![vec![0.0; d.len()]; 10];
        cols.extend(vec![d.weights(); 90]);
        let m = BootstrapWeightMatrix::from_columns(d.len(), cols, 0, d.design()).unwrap();
        let full = models::fit(&Model::logistic(), &d, &d.weights(), None).unwrap();
        let r = quasi_score_bootstrap(&Model::logistic(), &d, &full, &[1], &m, &Sequential);
        assert!(matches!(r, Err(Error::TooManyDropped { dropped: 10, total: 100 })), "{r:?}");
    }
}
