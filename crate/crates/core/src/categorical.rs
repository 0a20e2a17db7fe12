//! Goodness-of-fit and two-way independence tests for weighted category
//! proportions, with naive χ², first-order Rao–Scott, and bootstrap
//! calibrations.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapWeightMatrix;
use crate::data::{proportions_from, two_way_table_with_weights, CellTable, SurveyDataset};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::refdist;
use crate::regression::{empirical_p, Reference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CategoricalMethod {
    /// Pearson statistic against `χ²`.
    #[serde(rename = "NP")]
    Np,
    /// Likelihood-ratio statistic against `χ²`.
    #[serde(rename = "NLR")]
    Nlr,
    /// First-order Rao–Scott corrected Pearson statistic.
    #[serde(rename = "RS")]
    Rs,
    /// Pearson statistic against its bootstrap distribution.
    #[serde(rename = "BP")]
    Bp,
    /// Likelihood-ratio statistic against its bootstrap distribution.
    #[serde(rename = "BLR")]
    Blr,
}

impl CategoricalMethod {
    pub const ALL: [CategoricalMethod; 5] = [Self::Np, Self::Nlr, Self::Rs, Self::Bp, Self::Blr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Np => "NP",
            Self::Nlr => "NLR",
            Self::Rs => "RS",
            Self::Bp => "BP",
            Self::Blr => "BLR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalResult {
    pub method: CategoricalMethod,
    pub statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub replicates_used: usize,
    /// `λ̂₊` or `δ̂₊` for the Rao–Scott correction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design_effect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_statistics: Option<Vec<f64>>,
}

impl CategoricalResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// All categorical methods for one hypothesis, plus the estimated
/// design-effect eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalAnalysis {
    pub pearson: f64,
    pub likelihood_ratio: f64,
    pub design_effect: f64,
    /// Eigenvalues of the estimated design-effect matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub results: Vec<CategoricalResult>,
}

fn check_simplex(p: &[f64], name: &str) -> Result<()> {
    if p.len() < 2 {
        return Err(invalid(format!("{name} needs at least two categories")));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(invalid(format!("{name} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

fn check_gof(p_hat: &[f64], p0: &[f64]) -> Result<()> {
    check_simplex(p_hat, "estimated proportions")?;
    check_simplex(p0, "hypothesized proportions")?;
    if p_hat.len() != p0.len() {
        return Err(Error::DimensionMismatch { expected: p0.len(), got: p_hat.len() });
    }
    match p0.iter().position(|&v| v <= 0.0) {
        Some(k) => Err(invalid(format!("hypothesized proportion {k} is zero"))),
        None => Ok(()),
    }
}

fn xlogy_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * libm::log(a / b)
    }
}

/// `X² = n Σ (p̂_k − p⁰_k)² / p⁰_k`.
pub fn gof_pearson(p_hat: &[f64], p0: &[f64], n: usize) -> Result<f64> {
    check_gof(p_hat, p0)?;
    Ok(n as f64 * p_hat.iter().zip(p0).map(|(a, b)| (a - b) * (a - b) / b).sum::<f64>())
}

/// `W = 2n Σ p̂_k log(p̂_k / p⁰_k)`.
pub fn gof_lrt(p_hat: &[f64], p0: &[f64], n: usize) -> Result<f64> {
    check_gof(p_hat, p0)?;
    Ok((2.0 * n as f64 * p_hat.iter().zip(p0).map(|(&a, &b)| xlogy_ratio(a, b)).sum::<f64>()).max(0.0))
}

fn positive_cells(p_hat: &[f64]) -> Result<()> {
    match p_hat.iter().position(|&v| v <= 0.0) {
        Some(k) => Err(Error::ZeroEstimatedCell(k)),
        None => Ok(()),
    }
}

/// Bootstrap statistics `X²* = n Σ (p̂*−p̂)²/p̂` and `W* = 2n Σ p̂* log(p̂*/p̂)`
/// for each replicate vector.
pub fn gof_bootstrap(p_hat: &[f64], replicates: &[Vec<f64>], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_simplex(p_hat, "estimated proportions")?;
    positive_cells(p_hat)?;
    let nf = n as f64;
    let mut x2 = Vec::with_capacity(replicates.len());
    let mut w = Vec::with_capacity(replicates.len());
    for r in replicates {
        if r.len() != p_hat.len() {
            return Err(Error::DimensionMismatch { expected: p_hat.len(), got: r.len() });
        }
        x2.push(nf * r.iter().zip(p_hat).map(|(a, b)| (a - b) * (a - b) / b).sum::<f64>());
        w.push(2.0 * nf * r.iter().zip(p_hat).map(|(&a, &b)| xlogy_ratio(a, b)).sum::<f64>());
    }
    Ok((x2, w))
}

/// `n` times the bootstrap covariance of the first `d` coordinates.
fn scaled_covariance(replicates: &[Vec<f64>], d: usize, n: usize) -> Result<Matrix> {
    if replicates.len() < 2 {
        return Err(Error::SingularVariance);
    }
    Ok(linalg::covariance(replicates, d) * n as f64)
}

/// `diag(p) − p pᵀ` over the first `K − 1` categories.
fn multinomial_covariance(p: &[f64]) -> Matrix {
    let d = p.len();
    Matrix::from_fn(d, d, |i, j| if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] })
}

/// Eigenvalues of `D = P₀⁻¹ Σ̂_p` with `Σ̂_p` the scaled bootstrap covariance
/// of the first `K − 1` proportions.
pub fn gof_eigenvalues(p_ref: &[f64], replicates: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    let d = p_ref.len() - 1;
    let sigma = scaled_covariance(replicates, d, n)?;
    let p0 = multinomial_covariance(&p_ref[..d]);
    let info = linalg::inverse(&p0)?;
    Ok(refdist::mixture_eigenvalues(&sigma, &info)?.eigenvalues)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaoScott {
    /// Uncorrected statistic.
    pub statistic: f64,
    /// Statistic divided by the mean design effect.
    pub corrected: f64,
    /// `λ̂₊` or `δ̂₊`.
    pub mean_effect: f64,
    pub df: usize,
    pub p_value: f64,
}

/// First-order correction `X² / λ̂₊` against `χ²(K−1)` with
/// `λ̂₊ = (K−1)⁻¹ Σ (p̂_i / p⁰_i)(1 − p̂_i) d̂_i` and `d̂_i = n v̂(p̂_i) / {p̂_i(1 − p̂_i)}`.
pub fn gof_rao_scott(p_hat: &[f64], p0: &[f64], n: usize, replicates: &[Vec<f64>]) -> Result<RaoScott> {
    let statistic = gof_pearson(p_hat, p0, n)?;
    let k = p_hat.len();
    if replicates.len() < 2 {
        return Err(Error::SingularVariance);
    }
    let b = replicates.len() as f64;
    let mut lambda = 0.0;
    for i in 0..k {
        let p = p_hat[i];
        if p <= 0.0 || p >= 1.0 {
            return Err(Error::UndefinedDesignEffect(i));
        }
        let mean = replicates.iter().map(|r| r[i]).sum::<f64>() / b;
        let var = replicates.iter().map(|r| (r[i] - mean) * (r[i] - mean)).sum::<f64>() / b;
        let d = n as f64 * var / (p * (1.0 - p));
        lambda += p / p0[i] * (1.0 - p) * d;
    }
    lambda /= (k - 1) as f64;
    if !(lambda > 0.0) {
        return Err(Error::SingularVariance);
    }
    let corrected = statistic / lambda;
    Ok(RaoScott {
        statistic,
        corrected,
        mean_effect: lambda,
        df: k - 1,
        p_value: refdist::chisq_sf(corrected, (k - 1) as f64)?,
    })
}

fn check_margins(table: &CellTable) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = table.row_margins();
    let c = table.col_margins();
    if let Some(i) = r.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroMargin(format!("row {i}")));
    }
    if let Some(j) = c.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroMargin(format!("column {j}")));
    }
    Ok((r, c))
}

/// `(X_I², W_I)` for independence in a two-way table.
pub fn independence_stats(table: &CellTable) -> Result<(f64, f64)> {
    let (r, c) = check_margins(table)?;
    let n = table.n as f64;
    let mut x2 = 0.0;
    let mut w = 0.0;
    for i in 0..table.rows() {
        for j in 0..table.cols() {
            let e = r[i] * c[j];
            let p = table.get(i, j);
            x2 += (p - e) * (p - e) / e;
            w += xlogy_ratio(p, e);
        }
    }
    Ok((n * x2, (2.0 * n * w).max(0.0)))
}

/// Bootstrap statistics `X_I²*` (centered numerator) and `W_I*` (with
/// `Δ̂_ij = p̂_ij / (p̂_i+ p̂_+j)`) for each replicate table.
pub fn independence_bootstrap(table: &CellTable, replicates: &[CellTable]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (r, c) = check_margins(table)?;
    let n = table.n as f64;
    let (rows, cols) = (table.rows(), table.cols());
    let mut x2 = Vec::with_capacity(replicates.len());
    let mut w = Vec::with_capacity(replicates.len());
    for rep in replicates {
        if rep.rows() != rows || rep.cols() != cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: rep.rows() * rep.cols() });
        }
        let rs = rep.row_margins();
        let cs = rep.col_margins();
        let mut x = 0.0;
        let mut g = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let e = r[i] * c[j];
                let p = table.get(i, j);
                let ps = rep.get(i, j);
                let es = rs[i] * cs[j];
                let dev = (ps - es) - (p - e);
                x += dev * dev / e;
                let target = es * p / e;
                let log_term = if ps == 0.0 { 0.0 } else { ps * libm::log(ps / target) };
                g += log_term - (ps - target);
            }
        }
        x2.push(n * x);
        w.push(2.0 * n * g);
    }
    Ok((x2, w))
}

/// `h(p)` with `h_ij = p_ij − p_i+ p_+j` for `i < R`, `j < C`.
pub fn independence_contrasts(table: &CellTable) -> Vec<f64> {
    let r = table.row_margins();
    let c = table.col_margins();
    let mut h = Vec::with_capacity((table.rows() - 1) * (table.cols() - 1));
    for i in 0..table.rows() - 1 {
        for j in 0..table.cols() - 1 {
            h.push(table.get(i, j) - r[i] * c[j]);
        }
    }
    h
}

/// `H = ∂h/∂pᵀ` at `table`, a `d × (RC − 1)` matrix with `p_RC` eliminated.
fn contrast_jacobian(table: &CellTable) -> Matrix {
    let (rows, cols) = (table.rows(), table.cols());
    let r = table.row_margins();
    let c = table.col_margins();
    let d = (rows - 1) * (cols - 1);
    let m = rows * cols - 1;
    Matrix::from_fn(d, m, |a, b| {
        let (i, j) = (a / (cols - 1), a % (cols - 1));
        let (k, l) = (b / cols, b % cols);
        let di = if i == k { 1.0 } else { 0.0 };
        let dj = if j == l { 1.0 } else { 0.0 };
        di * dj - di * c[j] - dj * r[i]
    })
}

/// Design-effect matrix `D_h = (P_R⁻¹ ⊗ P_C⁻¹)(H Σ̂_p Hᵀ)` with `Σ̂_p` the scaled
/// bootstrap covariance of the first `RC − 1` cell proportions.
pub fn independence_design_matrix(table: &CellTable, replicates: &[CellTable]) -> Result<Matrix> {
    check_margins(table)?;
    let (rows, cols) = (table.rows(), table.cols());
    let m = rows * cols - 1;
    let vectors: Vec<Vec<f64>> = replicates.iter().map(|t| t.cells()[..m].to_vec()).collect();
    let sigma = scaled_covariance(&vectors, m, table.n)?;
    let h = contrast_jacobian(table);
    let r = table.row_margins();
    let c = table.col_margins();
    let pr = linalg::inverse(&multinomial_covariance(&r[..rows - 1]))?;
    let pc = linalg::inverse(&multinomial_covariance(&c[..cols - 1]))?;
    Ok(pr.kronecker(&pc) * (&h * sigma * h.transpose()))
}

/// Eigenvalues of `D_h` computed on a symmetric similar form.
pub fn independence_eigenvalues(table: &CellTable, replicates: &[CellTable]) -> Result<Vec<f64>> {
    let (rows, cols) = (table.rows(), table.cols());
    let m = rows * cols - 1;
    let vectors: Vec<Vec<f64>> = replicates.iter().map(|t| t.cells()[..m].to_vec()).collect();
    let sigma = scaled_covariance(&vectors, m, table.n)?;
    let h = contrast_jacobian(table);
    let r = table.row_margins();
    let c = table.col_margins();
    let pr = linalg::inverse(&multinomial_covariance(&r[..rows - 1]))?;
    let pc = linalg::inverse(&multinomial_covariance(&c[..cols - 1]))?;
    let cov_h = &h * sigma * h.transpose();
    Ok(refdist::mixture_eigenvalues(&cov_h, &pr.kronecker(&pc))?.eigenvalues)
}

/// `X_I² / δ̂₊` against `χ²((R−1)(C−1))`, `δ̂₊ = tr(D_h) / d`.
pub fn independence_rao_scott(table: &CellTable, replicates: &[CellTable]) -> Result<RaoScott> {
    let (statistic, _) = independence_stats(table)?;
    let dh = independence_design_matrix(table, replicates)?;
    let d = dh.nrows();
    let delta = dh.trace() / d as f64;
    if !(delta > 0.0) {
        return Err(Error::SingularVariance);
    }
    let corrected = statistic / delta;
    Ok(RaoScott { statistic, corrected, mean_effect: delta, df: d, p_value: refdist::chisq_sf(corrected, d as f64)? })
}

fn assemble(
    methods: &[CategoricalMethod],
    df: usize,
    stats: (f64, f64),
    boot: Option<&(Vec<f64>, Vec<f64>)>,
    rao_scott: Option<&RaoScott>,
    keep: bool,
) -> Result<Vec<CategoricalResult>> {
    let chi = Reference::ChiSq { df };
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let base = |statistic: f64, p_value: f64, reference| CategoricalResult {
            method: m,
            statistic,
            reference,
            p_value,
            replicates_used: 0,
            design_effect: None,
            bootstrap_statistics: None,
        };
        let r = match m {
            CategoricalMethod::Np => base(stats.0, refdist::chisq_sf(stats.0, df as f64)?, chi),
            CategoricalMethod::Nlr => base(stats.1, refdist::chisq_sf(stats.1, df as f64)?, chi),
            CategoricalMethod::Rs => {
                let rs = rao_scott.ok_or_else(|| invalid("Rao-Scott needs replicate weights"))?;
                let mut r = base(rs.corrected, rs.p_value, chi);
                r.design_effect = Some(rs.mean_effect);
                r
            }
            CategoricalMethod::Bp | CategoricalMethod::Blr => {
                let (x2, w) = boot.ok_or_else(|| invalid("bootstrap methods need replicate weights"))?;
                let (stat, values) = if m == CategoricalMethod::Bp { (stats.0, x2) } else { (stats.1, w) };
                let mut r =
                    base(stat, empirical_p(stat, values)?, Reference::BootstrapEmpirical { replicates: values.len() });
                r.replicates_used = values.len();
                if keep {
                    let mut sorted = values.clone();
                    sorted.sort_by(f64::total_cmp);
                    r.bootstrap_statistics = Some(sorted);
                }
                r
            }
        };
        out.push(r);
    }
    Ok(out)
}

fn codes(data: &SurveyDataset, var: usize) -> Result<(Vec<u32>, usize)> {
    let levels =
        data.categorical().get(var).ok_or_else(|| invalid(format!("no categorical variable {var}")))?.levels.len();
    Ok((data.units().iter().map(|u| u.categories[var]).collect(), levels))
}

/// Goodness of fit of categorical variable `var` to `p0`.
pub fn gof_analysis(
    data: &SurveyDataset,
    var: usize,
    p0: &[f64],
    matrix: Option<&BootstrapWeightMatrix>,
    methods: &[CategoricalMethod],
    keep_replicates: bool,
) -> Result<CategoricalAnalysis> {
    let (codes, k) = codes(data, var)?;
    if p0.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: p0.len() });
    }
    let n = data.len();
    let p_hat = proportions_from(&codes, &data.weights(), k)?;
    let stats = (gof_pearson(&p_hat, p0, n)?, gof_lrt(&p_hat, p0, n)?);
    let (boot, rs, eigen, effect) = match matrix {
        Some(mx) => {
            if mx.rows() != n {
                return Err(Error::DimensionMismatch { expected: n, got: mx.rows() });
            }
            let reps: Vec<Vec<f64>> = mx.columns().map(|w| proportions_from(&codes, w, k)).collect::<Result<_>>()?;
            let boot = gof_bootstrap(&p_hat, &reps, n)?;
            let rs = gof_rao_scott(&p_hat, p0, n, &reps)?;
            let eigen = gof_eigenvalues(&p_hat, &reps, n)?;
            let effect = rs.mean_effect;
            (Some(boot), Some(rs), eigen, effect)
        }
        None => (None, None, Vec::new(), f64::NAN),
    };
    let results = assemble(methods, k - 1, stats, boot.as_ref(), rs.as_ref(), keep_replicates)?;
    Ok(CategoricalAnalysis {
        pearson: stats.0,
        likelihood_ratio: stats.1,
        design_effect: effect,
        eigenvalues: eigen,
        results,
    })
}

/// Independence of categorical variables `row_var` and `col_var`.
pub fn independence_analysis(
    data: &SurveyDataset,
    row_var: usize,
    col_var: usize,
    matrix: Option<&BootstrapWeightMatrix>,
    methods: &[CategoricalMethod],
    keep_replicates: bool,
) -> Result<CategoricalAnalysis> {
    let table = two_way_table_with_weights(data, row_var, col_var, &data.weights())?;
    let reps = match matrix {
        Some(mx) => {
            if mx.rows() != data.len() {
                return Err(Error::DimensionMismatch { expected: data.len(), got: mx.rows() });
            }
            Some(
                mx.columns()
                    .map(|w| two_way_table_with_weights(data, row_var, col_var, w))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    independence_from_tables(&table, reps.as_deref(), methods, keep_replicates)
}

/// [`independence_analysis`] on precomputed tables.
pub fn independence_from_tables(
    table: &CellTable,
    replicates: Option<&[CellTable]>,
    methods: &[CategoricalMethod],
    keep_replicates: bool,
) -> Result<CategoricalAnalysis> {
    let stats = independence_stats(table)?;
    let df = (table.rows() - 1) * (table.cols() - 1);
    let (boot, rs, eigen, effect) = match replicates {
        Some(reps) => {
            let boot = independence_bootstrap(table, reps)?;
            let rs = independence_rao_scott(table, reps)?;
            let eigen = independence_eigenvalues(table, reps)?;
            let effect = rs.mean_effect;
            (Some(boot), Some(rs), eigen, effect)
        }
        None => (None, None, Vec::new(), f64::NAN),
    };
    let results = assemble(methods, df, stats, boot.as_ref(), rs.as_ref(), keep_replicates)?;
    Ok(CategoricalAnalysis {
        pearson: stats.0,
        likelihood_ratio: stats.1,
        design_effect: effect,
        eigenvalues: eigen,
        results,
    })
}
