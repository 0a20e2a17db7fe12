//! Survey data model, validation, and weighted summary estimators.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapWeightMatrix;
use crate::error::{invalid, Error, Result};

/// Sampling design that produced a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Poisson,
    Ppswr,
    StratifiedSrs,
    TwoStageCluster,
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Poisson => "poisson",
            DesignKind::Ppswr => "ppswr",
            DesignKind::StratifiedSrs => "stratified-srs",
            DesignKind::TwoStageCluster => "two-stage",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "poisson" => Some(DesignKind::Poisson),
            "ppswr" | "pps" => Some(DesignKind::Ppswr),
            "stratified" | "stratified-srs" | "srs" => Some(DesignKind::StratifiedSrs),
            "two-stage" | "two-stage-cluster" | "cluster" => Some(DesignKind::TwoStageCluster),
            _ => None,
        }
    }

    fn needs_strata(self) -> bool {
        matches!(self, DesignKind::StratifiedSrs)
    }

    fn needs_clusters(self) -> bool {
        matches!(self, DesignKind::TwoStageCluster)
    }
}

/// One sampled element (or one with-replacement draw).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UnitRecord {
    pub y: f64,
    pub x: Vec<f64>,
    /// Base sampling weight (population elements represented by this record).
    pub weight: f64,
    pub stratum: Option<u32>,
    /// Cluster draw label; repeated draws of one population cluster get distinct labels.
    pub cluster: Option<u32>,
    /// Population size `M_i` of the cluster this record was drawn from.
    pub cluster_size: Option<u64>,
    pub draw_index: Option<u32>,
    /// Dense category codes, one per declared categorical variable.
    pub categories: Vec<u32>,
}

impl UnitRecord {
    pub fn new(y: f64, x: Vec<f64>, weight: f64) -> Self {
        Self { y, x, weight, ..Self::default() }
    }
}

/// A declared categorical variable with its level labels in code order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalVar {
    pub name: String,
    pub levels: Vec<String>,
}

/// Validated, immutable survey sample.
#[derive(Debug, Clone)]
pub struct SurveyDataset {
    units: Vec<UnitRecord>,
    population_size: u64,
    design: DesignKind,
    population_clusters: Option<u64>,
    covariate_names: Vec<String>,
    categorical: Vec<CategoricalVar>,
    replicate_weights: Option<BootstrapWeightMatrix>,
}

impl SurveyDataset {
    pub fn new(units: Vec<UnitRecord>, population_size: u64, design: DesignKind) -> Result<Self> {
        Self::builder(units, population_size, design).build()
    }

    pub fn builder(units: Vec<UnitRecord>, population_size: u64, design: DesignKind) -> DatasetBuilder {
        DatasetBuilder {
            units,
            population_size,
            design,
            population_clusters: None,
            covariate_names: None,
            categorical: Vec::new(),
        }
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn population_size(&self) -> u64 {
        self.population_size
    }

    pub fn design(&self) -> DesignKind {
        self.design
    }

    pub fn population_clusters(&self) -> Option<u64> {
        self.population_clusters
    }

    pub fn x_dim(&self) -> usize {
        self.units.first().map_or(0, |u| u.x.len())
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn categorical(&self) -> &[CategoricalVar] {
        &self.categorical
    }

    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical.iter().position(|c| c.name == name)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.weight).collect()
    }

    pub fn weight_total(&self) -> f64 {
        self.units.iter().map(|u| u.weight).sum()
    }

    /// Relative gap `|Σw − N| / N` when it exceeds 10%; `N` stays authoritative.
    pub fn weight_total_discrepancy(&self) -> Option<f64> {
        let n = self.population_size as f64;
        let gap = (self.weight_total() - n).abs() / n;
        (gap > 0.1).then_some(gap)
    }

    pub fn replicate_weights(&self) -> Option<&BootstrapWeightMatrix> {
        self.replicate_weights.as_ref()
    }

    /// Returns a copy carrying `matrix` as its replicate weights.
    pub fn attach_weights(&self, matrix: BootstrapWeightMatrix) -> Result<Self> {
        if matrix.rows() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: matrix.rows() });
        }
        let mut out = self.clone();
        out.replicate_weights = Some(matrix);
        Ok(out)
    }

    /// Parameter names for a model with an intercept: `intercept`, then covariates.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.x_dim() + 1);
        names.push("intercept".to_string());
        names.extend(self.covariate_names.iter().cloned());
        names
    }

    /// Number of sampled clusters (distinct cluster draw labels).
    pub fn cluster_count(&self) -> usize {
        let mut ids: Vec<u32> = self.units.iter().filter_map(|u| u.cluster).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Per-stratum sample sizes, keyed by stratum label in ascending order.
    pub fn stratum_sizes(&self) -> Vec<(u32, usize)> {
        let mut ids: Vec<u32> = self.units.iter().filter_map(|u| u.stratum).collect();
        ids.sort_unstable();
        let mut out: Vec<(u32, usize)> = Vec::new();
        for id in ids {
            match out.last_mut() {
                Some((last, count)) if *last == id => *count += 1,
                _ => out.push((id, 1)),
            }
        }
        out
    }
}

pub struct DatasetBuilder {
    units: Vec<UnitRecord>,
    population_size: u64,
    design: DesignKind,
    population_clusters: Option<u64>,
    covariate_names: Option<Vec<String>>,
    categorical: Vec<CategoricalVar>,
}

impl DatasetBuilder {
    pub fn population_clusters(mut self, count: u64) -> Self {
        self.population_clusters = Some(count);
        self
    }

    pub fn covariate_names(mut self, names: Vec<String>) -> Self {
        self.covariate_names = Some(names);
        self
    }

    pub fn categorical(mut self, vars: Vec<CategoricalVar>) -> Self {
        self.categorical = vars;
        self
    }

    pub fn build(self) -> Result<SurveyDataset> {
        let DatasetBuilder { units, population_size, design, population_clusters, covariate_names, categorical } = self;
        if units.is_empty() {
            return Err(Error::EmptyData);
        }
        if population_size == 0 {
            return Err(invalid("population size must be positive"));
        }
        let dim = units[0].x.len();
        for (row, u) in units.iter().enumerate() {
            let row = row + 1;
            if !(u.weight.is_finite() && u.weight > 0.0) {
                return Err(invalid(format!("unit {row}: weight must be positive, got {}", u.weight)));
            }
            if design == DesignKind::Poisson && u.weight < 1.0 - 1e-12 {
                return Err(invalid(format!(
                    "unit {row}: Poisson weight {} implies inclusion probability above 1",
                    u.weight
                )));
            }
            if u.x.len() != dim {
                return Err(invalid(format!("unit {row}: covariate dimension {} != {dim}", u.x.len())));
            }
            if !u.y.is_finite() || u.x.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("unit {row}: non-finite response or covariate")));
            }
            if design.needs_strata() != u.stratum.is_some() {
                return Err(invalid(format!(
                    "unit {row}: stratum label {} for design {}",
                    if u.stratum.is_some() { "not allowed" } else { "required" },
                    design.name()
                )));
            }
            if design.needs_clusters() != u.cluster.is_some() {
                return Err(invalid(format!(
                    "unit {row}: cluster label {} for design {}",
                    if u.cluster.is_some() { "not allowed" } else { "required" },
                    design.name()
                )));
            }
            if design.needs_clusters() && u.cluster_size.is_none_or(|m| m == 0) {
                return Err(invalid(format!("unit {row}: positive cluster size required")));
            }
            if u.categories.len() != categorical.len() {
                return Err(invalid(format!(
                    "unit {row}: {} category codes for {} categorical variables",
                    u.categories.len(),
                    categorical.len()
                )));
            }
            for (code, var) in u.categories.iter().zip(&categorical) {
                if *code as usize >= var.levels.len() {
                    return Err(invalid(format!("unit {row}: code {code} outside levels of {}", var.name)));
                }
            }
        }
        if design.needs_clusters() && population_clusters.is_none() {
            return Err(invalid("two-stage design requires the population cluster count"));
        }
        let covariate_names = match covariate_names {
            Some(names) if names.len() == dim => names,
            Some(names) => return Err(Error::DimensionMismatch { expected: dim, got: names.len() }),
            None => (1..=dim).map(|j| format!("x{j}")).collect(),
        };
        Ok(SurveyDataset {
            units,
            population_size,
            design,
            population_clusters,
            covariate_names,
            categorical,
            replicate_weights: None,
        })
    }
}

/// Weighted category proportions `p̂_k = Σ_{A_k} w_i / Σ_A w_i` for codes in `0..k`.
pub fn proportions_from(codes: &[u32], weights: &[f64], k: usize) -> Result<Vec<f64>> {
    if codes.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut totals = alloc::vec![0.0; k];
    for (&c, &w) in codes.iter().zip(weights) {
        let c = c as usize;
        if c >= k {
            return Err(invalid(format!("category code {c} outside 0..{k}")));
        }
        totals[c] += w;
    }
    let total: f64 = totals.iter().sum();
    if total <= 0.0 {
        return Err(invalid("weights sum to zero"));
    }
    Ok(totals.into_iter().map(|t| t / total).collect())
}

/// Weighted proportions of categorical variable `var` using base weights.
pub fn weighted_proportions(data: &SurveyDataset, var: usize) -> Result<Vec<f64>> {
    let k = data.categorical().get(var).ok_or_else(|| invalid(format!("no categorical variable {var}")))?.levels.len();
    let codes: Vec<u32> = data.units().iter().map(|u| u.categories[var]).collect();
    proportions_from(&codes, &data.weights(), k)
}

/// Estimated cell proportions of an R×C table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    rows: usize,
    cols: usize,
    /// Row-major cell proportions.
    cells: Vec<f64>,
    /// Effective sample size (unit records).
    pub n: usize,
}

impl CellTable {
    /// Builds a table from row-major cell masses, normalizing them to proportions.
    pub fn from_masses(rows: usize, cols: usize, masses: Vec<f64>, n: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(invalid(format!("two-way table needs R, C >= 2, got {rows}x{cols}")));
        }
        if masses.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: masses.len() });
        }
        if masses.iter().any(|&m| m < 0.0 || !m.is_finite()) {
            return Err(invalid("cell masses must be finite and nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyData);
        }
        Ok(Self { rows, cols, cells: masses.into_iter().map(|m| m / total).collect(), n })
    }

    pub fn from_codes(rows: usize, cols: usize, row_codes: &[u32], col_codes: &[u32], weights: &[f64]) -> Result<Self> {
        let mut masses = alloc::vec![0.0; rows * cols];
        for ((&r, &c), &w) in row_codes.iter().zip(col_codes).zip(weights) {
            let (r, c) = (r as usize, c as usize);
            if r >= rows || c >= cols {
                return Err(invalid(format!("cell ({r},{c}) outside {rows}x{cols} table")));
            }
            masses[r * cols + c] += w;
        }
        Self::from_masses(rows, cols, masses, row_codes.len())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.cols + j]
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn row_margins(&self) -> Vec<f64> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self.get(i, j)).sum()).collect()
    }

    pub fn col_margins(&self) -> Vec<f64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.get(i, j)).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let cells =
            (0..self.cols).flat_map(|j| (0..self.rows).map(move |i| (i, j))).map(|(i, j)| self.get(i, j)).collect();
        Self { rows: self.cols, cols: self.rows, cells, n: self.n }
    }
}

/// Weighted two-way table of categorical variables `row_var` × `col_var`.
pub fn weighted_two_way_table(data: &SurveyDataset, row_var: usize, col_var: usize) -> Result<CellTable> {
    two_way_table_with_weights(data, row_var, col_var, &data.weights())
}

pub fn two_way_table_with_weights(
    data: &SurveyDataset,
    row_var: usize,
    col_var: usize,
    weights: &[f64],
) -> Result<CellTable> {
    let vars = data.categorical();
    let rows = vars.get(row_var).ok_or_else(|| invalid("unknown row variable"))?.levels.len();
    let cols = vars.get(col_var).ok_or_else(|| invalid("unknown column variable"))?.levels.len();
    let r: Vec<u32> = data.units().iter().map(|u| u.categories[row_var]).collect();
    let c: Vec<u32> = data.units().iter().map(|u| u.categories[col_var]).collect();
    CellTable::from_codes(rows, cols, &r, &c, weights)
}
