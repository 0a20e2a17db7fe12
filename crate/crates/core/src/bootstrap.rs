//! Bootstrap replicate weights for Poisson, PPS-with-replacement, stratified
//! SRS, and two-stage cluster designs.
//!
//! Each replicate mimics the design twice over: a bootstrap finite population
//! is built by multinomial replication of the sampled units, and the original
//! design is re-run on it. Only the resulting per-unit weights are kept, so no
//! routine ever materializes a population-sized array.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DesignKind, SurveyDataset};
use crate::error::{invalid, Error, Result};
use crate::exec::{Executor, Sequential};
use crate::rng::{self, tag, Categorical, Stream};

/// `n × B` nonnegative replicate weights, stored column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapWeightMatrix {
    rows: usize,
    replicates: usize,
    values: Vec<f64>,
    pub master_seed: u64,
    pub design: DesignKind,
}

impl BootstrapWeightMatrix {
    pub fn from_columns(rows: usize, columns: Vec<Vec<f64>>, master_seed: u64, design: DesignKind) -> Result<Self> {
        let replicates = columns.len();
        let mut values = Vec::with_capacity(rows * replicates);
        for (b, col) in columns.into_iter().enumerate() {
            if col.len() != rows {
                return Err(invalid(format!("replicate {} has {} rows, expected {rows}", b + 1, col.len())));
            }
            if let Some(v) = col.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(invalid(format!("replicate {} has invalid weight {v}", b + 1)));
            }
            values.extend(col);
        }
        Ok(Self { rows, replicates, values, master_seed, design })
    }

    /// `B` copies of the base weights; every replicate statistic is degenerate.
    pub fn repeat_base(data: &SurveyDataset, replicates: usize) -> Self {
        let base = data.weights();
        let values = (0..replicates).flat_map(|_| base.iter().copied()).collect();
        Self { rows: data.len(), replicates, values, master_seed: 0, design: data.design() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn column(&self, b: usize) -> &[f64] {
        &self.values[b * self.rows..(b + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.rows.max(1)).take(self.replicates)
    }

    pub fn get(&self, i: usize, b: usize) -> f64 {
        self.values[b * self.rows + i]
    }

    /// Rescales every entry (used together with a base-weight rescaling).
    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect(), ..self.clone() }
    }
}

/// Replicate weights matching the dataset's design.
pub fn bootstrap_weights<E: Executor>(
    data: &SurveyDataset,
    replicates: usize,
    master_seed: u64,
    exec: &E,
) -> Result<BootstrapWeightMatrix> {
    let plan = Plan::new(data)?;
    let columns = exec.map_indexed(replicates, |b| plan.replicate(master_seed, b as u64));
    BootstrapWeightMatrix::from_columns(data.len(), columns, master_seed, data.design())
}

fn checked(data: &SurveyDataset, design: DesignKind, replicates: usize, seed: u64) -> Result<BootstrapWeightMatrix> {
    if data.design() != design {
        return Err(invalid(format!("dataset design is {}, not {}", data.design().name(), design.name())));
    }
    bootstrap_weights(data, replicates, seed, &Sequential)
}

pub fn bootstrap_poisson(data: &SurveyDataset, replicates: usize, seed: u64) -> Result<BootstrapWeightMatrix> {
    checked(data, DesignKind::Poisson, replicates, seed)
}

pub fn bootstrap_ppswr(data: &SurveyDataset, replicates: usize, seed: u64) -> Result<BootstrapWeightMatrix> {
    checked(data, DesignKind::Ppswr, replicates, seed)
}

pub fn bootstrap_stratified(data: &SurveyDataset, replicates: usize, seed: u64) -> Result<BootstrapWeightMatrix> {
    checked(data, DesignKind::StratifiedSrs, replicates, seed)
}

pub fn bootstrap_two_stage(data: &SurveyDataset, replicates: usize, seed: u64) -> Result<BootstrapWeightMatrix> {
    checked(data, DesignKind::TwoStageCluster, replicates, seed)
}

/// Per-dataset precomputation shared by all replicates.
enum Plan {
    Poisson { weights: Vec<f64>, population: u64 },
    Ppswr(PpswrPlan),
    Stratified { strata: Vec<Stratum> },
    TwoStage(TwoStagePlan),
}

pub struct PpswrPlan {
    weights: Vec<f64>,
    population: u64,
}

struct Stratum {
    members: Vec<usize>,
    population: u64,
}

struct TwoStagePlan {
    rows: usize,
    population_clusters: u64,
    /// Sampled cluster draws: member rows and population cluster size.
    clusters: Vec<(Vec<usize>, u64)>,
}

/// One PPSWR replicate with its bootstrap population counts `N*_{a,i}`.
#[derive(Debug, Clone)]
pub struct PpswrReplicate {
    pub population_counts: Vec<u64>,
    pub weights: Vec<f64>,
}

impl Plan {
    fn new(data: &SurveyDataset) -> Result<Self> {
        let weights = data.weights();
        let population = data.population_size();
        if (population as usize) < data.len() && data.design() != DesignKind::Ppswr {
            return Err(invalid(format!("population size {population} below sample size {}", data.len())));
        }
        Ok(match data.design() {
            DesignKind::Poisson => Plan::Poisson { weights, population },
            DesignKind::Ppswr => Plan::Ppswr(PpswrPlan { weights, population }),
            DesignKind::StratifiedSrs => {
                let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
                for (i, u) in data.units().iter().enumerate() {
                    groups.entry(u.stratum.expect("validated")).or_default().push(i);
                }
                let strata = groups
                    .into_values()
                    .map(|members| {
                        let total: f64 = members.iter().map(|&i| weights[i]).sum();
                        let population = libm::round(total) as u64;
                        Stratum { population: population.max(members.len() as u64), members }
                    })
                    .collect();
                Plan::Stratified { strata }
            }
            DesignKind::TwoStageCluster => {
                let mut groups: BTreeMap<u32, (Vec<usize>, u64)> = BTreeMap::new();
                for (i, u) in data.units().iter().enumerate() {
                    let entry = groups
                        .entry(u.cluster.expect("validated"))
                        .or_insert_with(|| (Vec::new(), u.cluster_size.expect("validated")));
                    entry.0.push(i);
                }
                let population_clusters =
                    data.population_clusters().ok_or_else(|| invalid("missing population cluster count"))?;
                Plan::TwoStage(TwoStagePlan {
                    rows: data.len(),
                    population_clusters,
                    clusters: groups.into_values().collect(),
                })
            }
        })
    }

    fn replicate(&self, seed: u64, b: u64) -> Vec<f64> {
        match self {
            Plan::Poisson { weights, population } => {
                poisson_replicate(weights, *population, &mut rng::stream(seed, tag::POISSON_BOOT, b))
            }
            Plan::Ppswr(plan) => plan.replicate(seed, b).weights,
            Plan::Stratified { strata } => {
                stratified_replicate(strata, &mut rng::stream(seed, tag::STRATIFIED_BOOT, b))
            }
            Plan::TwoStage(plan) => plan.replicate(&mut rng::stream(seed, tag::TWO_STAGE_BOOT, b)),
        }
    }
}

/// Step 1: `N* ~ MN(N; p ∝ w)`; Step 2: `m_i* ~ Bin(N_i*, π_i)`; Step 3: `w_i* = w_i m_i*`.
fn poisson_replicate(weights: &[f64], population: u64, rng: &mut Stream) -> Vec<f64> {
    let counts = rng::multinomial(rng, population, weights);
    weights.iter().zip(counts).map(|(&w, copies)| w * rng::binomial(rng, copies, (1.0 / w).min(1.0)) as f64).collect()
}

impl PpswrPlan {
    pub fn from_dataset(data: &SurveyDataset) -> Result<Self> {
        if data.design() != DesignKind::Ppswr {
            return Err(invalid("not a PPSWR dataset"));
        }
        Ok(Self { weights: data.weights(), population: data.population_size() })
    }

    /// Draw probabilities are recovered from the weights as `p_{a,i} = 1/(n w_i)`.
    pub fn replicate(&self, seed: u64, b: u64) -> PpswrReplicate {
        let mut rng = rng::stream(seed, tag::PPSWR_BOOT, b);
        let n = self.weights.len() as f64;
        let probs: Vec<f64> = self.weights.iter().map(|w| 1.0 / (n * w)).collect();
        // ρ_i ∝ 1/p_{a,i}, i.e. ∝ w_i.
        let population_counts = rng::multinomial(&mut rng, self.population, &self.weights);
        let mass: Vec<f64> = population_counts.iter().zip(&probs).map(|(&c, &p)| c as f64 * p).collect();
        let c_total: f64 = mass.iter().sum();
        let draws = rng::multinomial(&mut rng, self.weights.len() as u64, &mass);
        let weights =
            draws.iter().zip(&probs).map(|(&k, &p)| if k == 0 { 0.0 } else { k as f64 * c_total / (n * p) }).collect();
        PpswrReplicate { population_counts, weights }
    }
}

/// SRS bootstrap per stratum: replicate the `n_h` units into a bootstrap
/// stratum of `N_h` units (uniform multinomial), redraw `n_h` without
/// replacement, and weight each selection by `N_h/n_h`.
fn stratified_replicate(strata: &[Stratum], rng: &mut Stream) -> Vec<f64> {
    let rows = strata.iter().map(|s| s.members.len()).sum();
    let mut out = alloc::vec![0.0; rows];
    for s in strata {
        let n_h = s.members.len();
        let uniform = alloc::vec![1.0; n_h];
        let copies = rng::multinomial(rng, s.population, &uniform);
        let picks = srs_counts(rng, &copies, n_h);
        let w = s.population as f64 / n_h as f64;
        for (&i, k) in s.members.iter().zip(picks) {
            out[i] = w * k as f64;
        }
    }
    out
}

/// Draws `k` of the `Σ copies` bootstrap units without replacement and
/// returns how many copies of each source unit were taken.
fn srs_counts(rng: &mut Stream, copies: &[u64], k: usize) -> Vec<u64> {
    let total: u64 = copies.iter().sum();
    let k = k.min(total as usize);
    let mut cumulative = Vec::with_capacity(copies.len());
    let mut acc = 0u64;
    for &c in copies {
        acc += c;
        cumulative.push(acc);
    }
    let mut taken = alloc::vec![0u64; copies.len()];
    for pos in sample_positions(rng, total, k) {
        taken[cumulative.partition_point(|&c| c <= pos)] += 1;
    }
    taken
}

/// `k` distinct positions in `0..total` (Floyd's algorithm on u64).
fn sample_positions(rng: &mut Stream, total: u64, k: usize) -> Vec<u64> {
    let mut chosen: Vec<u64> = Vec::with_capacity(k);
    for j in (total - k as u64)..total {
        let t = rng.random_range(0..=j);
        chosen.push(if chosen.contains(&t) { j } else { t });
    }
    chosen
}

impl TwoStagePlan {
    fn replicate(&self, rng: &mut Stream) -> Vec<f64> {
        let n1 = self.clusters.len();
        let sizes: Vec<f64> = self.clusters.iter().map(|c| c.1 as f64).collect();
        // Step 1-a: bootstrap population of clusters, ρ_i ∝ 1/p_{a,i} ∝ 1/M_i.
        let rho: Vec<f64> = sizes.iter().map(|m| 1.0 / m).collect();
        let copies = rng::multinomial(rng, self.population_clusters, &rho);
        // Step 2, first stage: PPSWR of n₁ cluster copies with p ∝ M_i.
        let mass: Vec<f64> = copies.iter().zip(&sizes).map(|(&c, &m)| c as f64 * m).collect();
        let c_total: f64 = mass.iter().sum();
        let table = Categorical::new(&mass).expect("at least one bootstrap cluster");
        // Step 1-b compositions are generated lazily for the copies actually drawn.
        let mut compositions: BTreeMap<(usize, u64), Vec<u64>> = BTreeMap::new();
        let mut out = alloc::vec![0.0; self.rows];
        for _ in 0..n1 {
            let slot = table.sample(rng);
            let copy = rng.random_range(0..copies[slot]);
            let (members, size) = &self.clusters[slot];
            let composition = compositions.entry((slot, copy)).or_insert_with(|| {
                let uniform = alloc::vec![1.0; members.len()];
                rng::multinomial(rng, *size, &uniform)
            });
            // Second stage: SRS of m_i units from the M_i-unit bootstrap cluster.
            let m_i = members.len();
            let weight = c_total / (n1 as f64 * m_i as f64);
            let picks = srs_counts(rng, composition, m_i);
            for (&row, k) in members.iter().zip(picks) {
                out[row] += weight * k as f64;
            }
        }
        out
    }

    /// `E*(Σ w*) = N_I Σ ρ_i M_i`, the expected bootstrap population size.
    fn expected_total(&self) -> f64 {
        let inv: f64 = self.clusters.iter().map(|c| 1.0 / c.1 as f64).sum();
        self.population_clusters as f64 * self.clusters.len() as f64 / inv
    }
}

/// Expected replicate weight total for a two-stage dataset's bootstrap.
pub fn two_stage_expected_total(data: &SurveyDataset) -> Result<f64> {
    match Plan::new(data)? {
        Plan::TwoStage(plan) => Ok(plan.expected_total()),
        _ => Err(Error::InvalidInput("not a two-stage dataset".into())),
    }
}
