//! Probability sampling designs over synthetic finite populations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

use crate::data::{CategoricalVar, DesignKind, SurveyDataset, UnitRecord};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, tag, Categorical};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PopulationUnit {
    pub y: f64,
    pub x: Vec<f64>,
    pub categories: Vec<u32>,
}

/// Finite population `U_N`. With cluster structure, units are stored
/// cluster by cluster and `cluster_sizes` partitions them.
#[derive(Debug, Clone, Default)]
pub struct FinitePopulation {
    pub units: Vec<PopulationUnit>,
    pub cluster_sizes: Option<Vec<usize>>,
    pub covariate_names: Vec<String>,
    pub categorical: Vec<CategoricalVar>,
}

impl FinitePopulation {
    pub fn new(units: Vec<PopulationUnit>) -> Self {
        Self { units, ..Self::default() }
    }

    pub fn with_clusters(units: Vec<PopulationUnit>, sizes: Vec<usize>) -> Result<Self> {
        if sizes.iter().sum::<usize>() != units.len() {
            return Err(invalid("cluster sizes do not sum to the population size"));
        }
        if sizes.contains(&0) {
            return Err(invalid("empty cluster"));
        }
        Ok(Self { units, cluster_sizes: Some(sizes), ..Self::default() })
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    /// Start offset of each cluster.
    fn cluster_offsets(&self) -> Option<Vec<usize>> {
        self.cluster_sizes.as_ref().map(|sizes| {
            let mut acc = 0;
            sizes
                .iter()
                .map(|&m| {
                    let start = acc;
                    acc += m;
                    start
                })
                .collect()
        })
    }

    fn record(&self, i: usize, weight: f64) -> UnitRecord {
        let u = &self.units[i];
        UnitRecord { categories: u.categories.clone(), ..UnitRecord::new(u.y, u.x.clone(), weight) }
    }

    fn dataset(&self, units: Vec<UnitRecord>, design: DesignKind, clusters: Option<u64>) -> Result<SurveyDataset> {
        let mut b = SurveyDataset::builder(units, self.size() as u64, design).categorical(self.categorical.clone());
        if !self.covariate_names.is_empty() {
            b = b.covariate_names(self.covariate_names.clone());
        }
        if let Some(c) = clusters {
            b = b.population_clusters(c);
        }
        b.build()
    }
}

/// Design selection for one draw.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignConfig {
    Poisson { inclusion: Vec<f64> },
    Ppswr { selection: Vec<f64>, n: usize },
    StratifiedSrs { strata: Vec<u32>, sizes: Vec<usize> },
    TwoStageCluster { first_stage: usize, second_stage: usize },
}

impl DesignConfig {
    pub fn draw(&self, pop: &FinitePopulation, seed: u64) -> Result<SurveyDataset> {
        match self {
            DesignConfig::Poisson { inclusion } => draw_poisson(pop, inclusion, seed),
            DesignConfig::Ppswr { selection, n } => draw_ppswr(pop, selection, *n, seed),
            DesignConfig::StratifiedSrs { strata, sizes } => draw_stratified_srs(pop, strata, sizes, seed),
            DesignConfig::TwoStageCluster { first_stage, second_stage } => {
                draw_two_stage(pop, *first_stage, *second_stage, seed)
            }
        }
    }
}

/// Poisson sampling: unit `i` enters independently with probability `π_i`; `w_i = 1/π_i`.
pub fn draw_poisson(pop: &FinitePopulation, inclusion: &[f64], seed: u64) -> Result<SurveyDataset> {
    if inclusion.len() != pop.size() {
        return Err(Error::DimensionMismatch { expected: pop.size(), got: inclusion.len() });
    }
    if let Some(bad) = inclusion.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(invalid(format!("inclusion probability {} of unit {} outside (0, 1]", inclusion[bad], bad + 1)));
    }
    let mut rng = rng::stream(seed, tag::POISSON_DESIGN, 0);
    let units = inclusion
        .iter()
        .enumerate()
        .filter(|&(_i, &p)| rng.random::<f64>() < p)
        .map(|(i, &p)| pop.record(i, 1.0 / p))
        .collect();
    pop.dataset(units, DesignKind::Poisson, None)
}

/// PPS sampling with replacement: `n` independent draws with probabilities
/// `p`; each draw is its own record with weight `1/(n p_i)`.
pub fn draw_ppswr(pop: &FinitePopulation, selection: &[f64], n: usize, seed: u64) -> Result<SurveyDataset> {
    if n == 0 {
        return Err(invalid("PPSWR sample size must be positive"));
    }
    if selection.len() != pop.size() {
        return Err(Error::DimensionMismatch { expected: pop.size(), got: selection.len() });
    }
    if selection.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(invalid("PPSWR selection probabilities must be positive"));
    }
    let total: f64 = selection.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("PPSWR selection probabilities sum to {total}, not 1")));
    }
    let table = Categorical::new(selection).ok_or_else(|| invalid("degenerate selection probabilities"))?;
    let mut rng = rng::stream(seed, tag::PPSWR_DESIGN, 0);
    let units = (0..n)
        .map(|d| {
            let i = table.sample(&mut rng);
            UnitRecord { draw_index: Some(d as u32), ..pop.record(i, 1.0 / (n as f64 * selection[i])) }
        })
        .collect();
    pop.dataset(units, DesignKind::Ppswr, None)
}

/// Stratified simple random sampling without replacement. `strata[i]` is the
/// dense stratum label of unit `i`; `sizes[h]` is `n_h`. Weights are `N_h/n_h`.
pub fn draw_stratified_srs(
    pop: &FinitePopulation,
    strata: &[u32],
    sizes: &[usize],
    seed: u64,
) -> Result<SurveyDataset> {
    if strata.len() != pop.size() {
        return Err(Error::DimensionMismatch { expected: pop.size(), got: strata.len() });
    }
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); sizes.len()];
    for (i, &h) in strata.iter().enumerate() {
        members.get_mut(h as usize).ok_or_else(|| invalid(format!("stratum label {h} has no sample size")))?.push(i);
    }
    let mut rng = rng::stream(seed, tag::STRATIFIED_DESIGN, 0);
    let mut units = Vec::with_capacity(sizes.iter().sum());
    for (h, (pool, &n_h)) in members.iter().zip(sizes).enumerate() {
        if n_h > pool.len() {
            return Err(invalid(format!("stratum {h}: n_h = {n_h} exceeds N_h = {}", pool.len())));
        }
        if n_h == 0 {
            continue;
        }
        let weight = pool.len() as f64 / n_h as f64;
        let mut picks = rng::sample_without_replacement(&mut rng, pool.len(), n_h);
        picks.sort_unstable();
        for k in picks {
            units.push(UnitRecord { stratum: Some(h as u32), ..pop.record(pool[k], weight) });
        }
    }
    pop.dataset(units, DesignKind::StratifiedSrs, None)
}

/// Two-stage cluster sampling: `first_stage` PPS-with-replacement cluster
/// draws with `p_i = M_i / Σ M`, then SRS of `second_stage` units within each
/// drawn cluster. `w_ij = [n₁ M_i/Σ M]⁻¹ · M_i/n₂`.
pub fn draw_two_stage(
    pop: &FinitePopulation,
    first_stage: usize,
    second_stage: usize,
    seed: u64,
) -> Result<SurveyDataset> {
    let sizes = pop.cluster_sizes.as_ref().ok_or_else(|| invalid("population has no cluster structure"))?;
    let offsets = pop.cluster_offsets().unwrap();
    if first_stage == 0 || second_stage == 0 {
        return Err(invalid("two-stage sample sizes must be positive"));
    }
    let total = pop.size() as f64;
    let probs: Vec<f64> = sizes.iter().map(|&m| m as f64 / total).collect();
    let table = Categorical::new(&probs).ok_or_else(|| invalid("degenerate cluster sizes"))?;
    let mut rng = rng::stream(seed, tag::TWO_STAGE_DESIGN, 0);
    let mut units = Vec::with_capacity(first_stage * second_stage);
    for d in 0..first_stage {
        let c = table.sample(&mut rng);
        let m = sizes[c];
        if second_stage > m {
            return Err(invalid(format!("second-stage size {second_stage} exceeds cluster size {m}")));
        }
        let weight = (total / (first_stage as f64 * m as f64)) * (m as f64 / second_stage as f64);
        let mut picks = rng::sample_without_replacement(&mut rng, m, second_stage);
        picks.sort_unstable();
        for k in picks {
            units.push(UnitRecord {
                cluster: Some(d as u32),
                cluster_size: Some(m as u64),
                draw_index: Some(d as u32),
                ..pop.record(offsets[c] + k, weight)
            });
        }
    }
    pop.dataset(units, DesignKind::TwoStageCluster, Some(sizes.len() as u64))
}
