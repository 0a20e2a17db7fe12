//! Monte Carlo engine for the four simulation studies: population
//! generation, repeated sampling, the method battery, and rejection-rate
//! tables.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bootstrap::bootstrap_weights;
use crate::categorical::{independence_analysis, CategoricalMethod};
use crate::data::CategoricalVar;
use crate::designs::{DesignConfig, FinitePopulation, PopulationUnit};
use crate::error::{invalid, Error, Result};
use crate::exec::{Executor, Sequential};
use crate::models::{Link, Model, Restriction, VarianceFn};
use crate::regression::{run_tests_for_nulls, Method, TestOptions};
use crate::rng::{self, tag};

/// Largest tolerated share of failed Monte Carlo repetitions.
pub const MAX_EXCLUSION_RATE: f64 = 0.02;

/// Cell probabilities of the 3×3 independence study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableCase {
    I,
    II,
    III,
}

impl TableCase {
    pub const ALL: [TableCase; 3] = [TableCase::I, TableCase::II, TableCase::III];

    /// Row-major `p_ij`.
    pub fn probabilities(self) -> [f64; 9] {
        let (a, b, c) = (1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0);
        match self {
            TableCase::I => [a, b, b, b, c, c, b, c, c],
            TableCase::II => [a, 1.4 * b, 1.4 * b, 0.6 * b, c, 1.4 * c, 0.6 * b, 0.6 * c, c],
            TableCase::III => {
                let (s, t) = (1.0 / 6.0, 1.0 / 12.0);
                [s, t, t, t, t, s, t, s, t]
            }
        }
    }

    /// Non-centrality `γ = Σ (p_ij − p_i+ p_+j)² / (p_i+ p_+j)`.
    pub fn gamma(self) -> f64 {
        let p = self.probabilities();
        let r: Vec<f64> = (0..3).map(|i| (0..3).map(|j| p[3 * i + j]).sum()).collect();
        let c: Vec<f64> = (0..3).map(|j| (0..3).map(|i| p[3 * i + j]).sum()).collect();
        let mut g = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let e = r[i] * c[j];
                g += (p[3 * i + j] - e) * (p[3 * i + j] - e) / e;
            }
        }
        g
    }

    pub fn label(self) -> &'static str {
        match self {
            TableCase::I => "Case I",
            TableCase::II => "Case II",
            TableCase::III => "Case III",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().trim_start_matches("Case ").trim_start_matches("case").trim() {
            "I" | "i" | "1" => Some(TableCase::I),
            "II" | "ii" | "2" => Some(TableCase::II),
            "III" | "iii" | "3" => Some(TableCase::III),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Gaussian regression under informative PPS-with-replacement sampling.
    SingleStagePps { population: usize, sample: usize },
    /// Logistic regression under stratified SRS with strata = group × y.
    StratifiedCaseControl { population: usize, per_stratum: usize },
    /// Linear quasi-score regression under two-stage cluster sampling.
    TwoStageCluster { clusters: usize, min_size: u64, first_stage: usize, second_stage: usize },
    /// Independence in a 3×3 table under PPS-with-replacement sampling.
    IndependenceTable { population: usize, sample: usize },
}

/// Methods for either family of scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimMethod {
    Regression(Method),
    Categorical(CategoricalMethod),
}

impl SimMethod {
    pub fn name(self) -> &'static str {
        match self {
            SimMethod::Regression(m) => m.name(),
            SimMethod::Categorical(m) => m.name(),
        }
    }
}

impl Scenario {
    pub fn is_categorical(&self) -> bool {
        matches!(self, Scenario::IndependenceTable { .. })
    }

    pub fn label(&self) -> String {
        match *self {
            Scenario::SingleStagePps { population, sample } => format!("(N,n)=({population},{sample})"),
            Scenario::StratifiedCaseControl { population, per_stratum } => {
                format!("(N,n_h)=({population},{per_stratum})")
            }
            Scenario::TwoStageCluster { clusters, min_size, first_stage, second_stage } => {
                format!("(G,C0,n1,n2)=({clusters},{min_size},{first_stage},{second_stage})")
            }
            Scenario::IndependenceTable { population, sample } => format!("(N,n)=({population},{sample})"),
        }
    }

    /// Working model of a regression scenario.
    pub fn model(&self) -> Option<Model> {
        match self {
            Scenario::SingleStagePps { .. } => Some(Model::gaussian()),
            Scenario::StratifiedCaseControl { .. } => Some(Model::logistic()),
            Scenario::TwoStageCluster { .. } => Some(Model::quasi(Link::Identity, VarianceFn::Constant(1.0))),
            Scenario::IndependenceTable { .. } => None,
        }
    }

    pub fn default_methods(&self) -> Vec<SimMethod> {
        match self {
            Scenario::SingleStagePps { .. } | Scenario::StratifiedCaseControl { .. } => {
                [Method::Nlr, Method::Nqs, Method::Ls, Method::Blr, Method::Bqs].map(SimMethod::Regression).to_vec()
            }
            Scenario::TwoStageCluster { .. } => {
                vec![SimMethod::Regression(Method::Nqs), SimMethod::Regression(Method::Bqs)]
            }
            Scenario::IndependenceTable { .. } => CategoricalMethod::ALL.map(SimMethod::Categorical).to_vec(),
        }
    }

    pub fn default_nulls(&self) -> Vec<f64> {
        match self {
            Scenario::SingleStagePps { .. } => vec![1.0, 1.1, 1.2],
            Scenario::StratifiedCaseControl { .. } => vec![0.5, 0.4, 0.3],
            Scenario::TwoStageCluster { .. } => vec![1.0, 1.5],
            Scenario::IndependenceTable { .. } => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Scenario::SingleStagePps { population, sample } | Scenario::IndependenceTable { population, sample } => {
                if population == 0 || sample < 2 {
                    return Err(invalid("population must be positive and sample at least 2"));
                }
            }
            Scenario::StratifiedCaseControl { population, per_stratum } => {
                if population == 0 || population % 5 != 0 || per_stratum < 2 {
                    return Err(invalid("population must be a positive multiple of 5 and n_h at least 2"));
                }
            }
            Scenario::TwoStageCluster { clusters, min_size, first_stage, second_stage } => {
                if clusters == 0 || first_stage < 2 || second_stage == 0 || (second_stage as u64) > min_size {
                    return Err(invalid("two-stage sizes need G ≥ 1, n1 ≥ 2, 1 ≤ n2 ≤ C0"));
                }
            }
        }
        Ok(())
    }
}

/// One simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Tested slope values (regression scenarios).
    pub nulls: Vec<f64>,
    /// Cell-probability cases (independence scenario).
    pub cases: Vec<TableCase>,
    pub methods: Vec<SimMethod>,
    pub mc_reps: usize,
    pub boot_reps: usize,
    pub alpha: f64,
    pub master_seed: u64,
    /// Keep one population for all repetitions instead of regenerating it.
    pub fixed_population: bool,
}

impl ScenarioConfig {
    /// Desk-scale defaults (500 repetitions, 500 replicates).
    pub fn new(scenario: Scenario, master_seed: u64) -> Self {
        Self {
            scenario,
            nulls: scenario.default_nulls(),
            cases: if scenario.is_categorical() { TableCase::ALL.to_vec() } else { Vec::new() },
            methods: scenario.default_methods(),
            mc_reps: 500,
            boot_reps: 500,
            alpha: 0.05,
            master_seed,
            fixed_population: false,
        }
    }

    /// First configuration of each study, by name `table1`..`table4`.
    pub fn preset(name: &str, master_seed: u64) -> Option<Self> {
        let scenario = match name {
            "table1" => Scenario::SingleStagePps { population: 500, sample: 20 },
            "table2" => Scenario::StratifiedCaseControl { population: 3000, per_stratum: 10 },
            "table3" => Scenario::TwoStageCluster { clusters: 30, min_size: 30, first_stage: 5, second_stage: 5 },
            "table4" => Scenario::IndependenceTable { population: 2000, sample: 100 },
            _ => return None,
        };
        Some(Self::new(scenario, master_seed))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.mc_reps == 0 || self.boot_reps == 0 {
            return Err(invalid("repetition counts must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods selected"));
        }
        let categorical = self.scenario.is_categorical();
        for m in &self.methods {
            let ok = match m {
                SimMethod::Categorical(_) => categorical,
                SimMethod::Regression(r) => {
                    !categorical && !(r.needs_likelihood() && !self.scenario.model().is_some_and(|m| m.is_parametric()))
                }
            };
            if !ok {
                return Err(invalid(format!("method {} does not apply to this scenario", m.name())));
            }
        }
        if categorical && self.cases.is_empty() || !categorical && self.nulls.is_empty() {
            return Err(invalid("no null values or cases selected"));
        }
        Ok(())
    }

    fn settings(&self) -> usize {
        if self.scenario.is_categorical() {
            self.cases.len()
        } else {
            self.nulls.len()
        }
    }

    fn setting_label(&self, s: usize) -> String {
        if self.scenario.is_categorical() {
            self.cases[s].label().to_string()
        } else {
            format!("{}", self.nulls[s])
        }
    }
}

/// A generated population with the design that samples it.
#[derive(Debug, Clone)]
pub struct GeneratedPopulation {
    pub population: FinitePopulation,
    pub design: DesignConfig,
}

/// Draws the finite population of `scenario` (for `case` in the independence study).
pub fn gen_population(scenario: &Scenario, case: TableCase, seed: u64) -> Result<GeneratedPopulation> {
    scenario.validate()?;
    let mut r = rng::stream(seed, tag::POPULATION, 0);
    let names = vec!["x".to_string()];
    match *scenario {
        Scenario::SingleStagePps { population, sample } => {
            let mut units = Vec::with_capacity(population);
            let mut size = Vec::with_capacity(population);
            for _ in 0..population {
                let x = 5.0 * r.random::<f64>();
                let e: f64 = StandardNormal.sample(&mut r);
                let y = 1.0 + x + e;
                let eps: f64 = StandardNormal.sample(&mut r);
                size.push(1.0 + libm::fabs(y + eps) / 2.0);
                units.push(PopulationUnit { y, x: vec![x], categories: Vec::new() });
            }
            let total: f64 = size.iter().sum();
            let selection = size.into_iter().map(|s| s / total).collect();
            let population = FinitePopulation { covariate_names: names, ..FinitePopulation::new(units) };
            Ok(GeneratedPopulation { population, design: DesignConfig::Ppswr { selection, n: sample } })
        }
        Scenario::StratifiedCaseControl { population, per_stratum } => {
            let group = population / 5;
            let mut units = Vec::with_capacity(population);
            let mut strata = Vec::with_capacity(population);
            for g in 0..5 {
                let mean = -1.0 + 0.5 * (g + 1) as f64;
                for _ in 0..group {
                    let z: f64 = StandardNormal.sample(&mut r);
                    let x = mean + z;
                    let p = 1.0 / (1.0 + libm::exp(-(-1.0 + 0.5 * x)));
                    let y = if r.random::<f64>() < p { 1.0 } else { 0.0 };
                    strata.push(2 * g as u32 + if y == 1.0 { 0 } else { 1 });
                    units.push(PopulationUnit { y, x: vec![x], categories: Vec::new() });
                }
            }
            let population = FinitePopulation { covariate_names: names, ..FinitePopulation::new(units) };
            Ok(GeneratedPopulation {
                population,
                design: DesignConfig::StratifiedSrs { strata, sizes: vec![per_stratum; 10] },
            })
        }
        Scenario::TwoStageCluster { clusters, min_size, first_stage, second_stage } => {
            let x_dist = Normal::new(0.0, 2.0).map_err(|_| invalid("bad normal"))?;
            let mut units = Vec::new();
            let mut sizes = Vec::with_capacity(clusters);
            for _ in 0..clusters {
                let a: f64 = StandardNormal.sample(&mut r);
                let lambda = 25.0 * libm::fabs(a);
                let extra = if lambda > 0.0 {
                    Poisson::new(lambda).map_err(|_| invalid("bad Poisson rate"))?.sample(&mut r) as u64
                } else {
                    0
                };
                let m = (extra + min_size) as usize;
                sizes.push(m);
                for _ in 0..m {
                    let x = x_dist.sample(&mut r);
                    let e: f64 = StandardNormal.sample(&mut r);
                    units.push(PopulationUnit { y: 1.0 + x + a / 2.0 + e, x: vec![x], categories: Vec::new() });
                }
            }
            let mut population = FinitePopulation::with_clusters(units, sizes)?;
            population.covariate_names = names;
            Ok(GeneratedPopulation { population, design: DesignConfig::TwoStageCluster { first_stage, second_stage } })
        }
        Scenario::IndependenceTable { population, sample } => {
            let beta: Vec<f64> = (0..9).map(|_| 1.0 + Distribution::<f64>::sample(&Exp1, &mut r)).collect();
            let cells =
                rng::Categorical::new(&case.probabilities()).ok_or_else(|| invalid("bad cell probabilities"))?;
            let mut units = Vec::with_capacity(population);
            let mut size = Vec::with_capacity(population);
            for _ in 0..population {
                let k = cells.sample(&mut r);
                size.push(beta[k]);
                units.push(PopulationUnit { y: 0.0, x: Vec::new(), categories: vec![(k / 3) as u32, (k % 3) as u32] });
            }
            let total: f64 = size.iter().sum();
            let selection = size.into_iter().map(|s| s / total).collect();
            let levels = |name: &str| CategoricalVar {
                name: name.to_string(),
                levels: vec!["1".to_string(), "2".to_string(), "3".to_string()],
            };
            let population =
                FinitePopulation { categorical: vec![levels("row"), levels("col")], ..FinitePopulation::new(units) };
            Ok(GeneratedPopulation { population, design: DesignConfig::Ppswr { selection, n: sample } })
        }
    }
}

/// Per-repetition outcome: `p_values[setting][method]` and replicate drop rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub p_values: Vec<Vec<f64>>,
    pub drop_rates: Vec<Vec<f64>>,
}

fn regression_methods(config: &ScenarioConfig) -> Vec<Method> {
    config.methods.iter().filter_map(|m| if let SimMethod::Regression(r) = m { Some(*r) } else { None }).collect()
}

fn categorical_methods(config: &ScenarioConfig) -> Vec<CategoricalMethod> {
    config.methods.iter().filter_map(|m| if let SimMethod::Categorical(c) = m { Some(*c) } else { None }).collect()
}

/// Runs one Monte Carlo repetition.
pub fn run_rep(config: &ScenarioConfig, rep: usize) -> Result<RepOutcome> {
    let rep_seed = rng::derive_seed(config.master_seed, tag::MC_REP, rep as u64);
    let population_seed = |setting: usize| {
        if config.fixed_population {
            rng::derive_seed(config.master_seed, tag::POPULATION, setting as u64)
        } else {
            rng::derive_seed(rep_seed, tag::POPULATION, setting as u64)
        }
    };
    let needs_boot = config.methods.iter().any(|m| match m {
        SimMethod::Regression(r) => r.needs_replicates(),
        SimMethod::Categorical(c) => !matches!(c, CategoricalMethod::Np | CategoricalMethod::Nlr),
    });

    if config.scenario.is_categorical() {
        let methods = categorical_methods(config);
        let mut p_values = Vec::with_capacity(config.cases.len());
        for (s, &case) in config.cases.iter().enumerate() {
            let generated = gen_population(&config.scenario, case, population_seed(s))?;
            let sample =
                generated.design.draw(&generated.population, rng::derive_seed(rep_seed, tag::SAMPLE, s as u64))?;
            let matrix = if needs_boot {
                Some(bootstrap_weights(
                    &sample,
                    config.boot_reps,
                    rng::derive_seed(rep_seed, tag::REPLICATES, s as u64),
                    &Sequential,
                )?)
            } else {
                None
            };
            let analysis = independence_analysis(&sample, 0, 1, matrix.as_ref(), &methods, false)?;
            p_values.push(analysis.results.iter().map(|r| r.p_value).collect());
        }
        let drop_rates = vec![vec![0.0; methods.len()]; config.cases.len()];
        return Ok(RepOutcome { p_values, drop_rates });
    }

    let model = config.scenario.model().ok_or_else(|| invalid("scenario has no regression model"))?;
    let methods = regression_methods(config);
    let generated = gen_population(&config.scenario, TableCase::I, population_seed(0))?;
    let sample = generated.design.draw(&generated.population, rng::derive_seed(rep_seed, tag::SAMPLE, 0))?;
    let matrix = if needs_boot {
        Some(bootstrap_weights(&sample, config.boot_reps, rng::derive_seed(rep_seed, tag::REPLICATES, 0), &Sequential)?)
    } else {
        None
    };
    let nulls: Vec<Restriction> =
        config.nulls.iter().map(|&v| Restriction::new(vec![1], vec![v])).collect::<Result<_>>()?;
    let results =
        run_tests_for_nulls(&model, &sample, &nulls, &methods, matrix.as_ref(), TestOptions::default(), &Sequential)?;
    let p_values = results.iter().map(|row| row.iter().map(|r| r.p_value).collect()).collect();
    let drop_rates = results
        .iter()
        .map(|row| {
            row.iter()
                .map(|r| {
                    let total = r.replicates_used + r.replicates_dropped;
                    if total == 0 {
                        0.0
                    } else {
                        r.replicates_dropped as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(RepOutcome { p_values, drop_rates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub method: String,
    pub setting: String,
    pub rejections: usize,
    pub reps: usize,
    pub rate: f64,
    /// `√(r(1 − r)/reps)`.
    pub mc_se: f64,
    pub mean_drop_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub rep: usize,
    pub reason: String,
}

/// Rejection rates, method by setting, in configuration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub scenario: String,
    pub methods: Vec<String>,
    pub settings: Vec<String>,
    pub cells: Vec<PowerCell>,
    pub mc_reps: usize,
    pub completed: usize,
    pub excluded: Vec<Exclusion>,
    /// Filled in by callers that can read a clock.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

impl PowerTable {
    pub fn cell(&self, method: &str, setting: &str) -> Option<&PowerCell> {
        self.cells.iter().find(|c| c.method == method && c.setting == setting)
    }

    pub fn rate(&self, method: &str, setting: &str) -> Option<f64> {
        self.cell(method, setting).map(|c| c.rate)
    }
}

/// Runs every repetition of `config` and tabulates rejection rates.
pub fn run_scenario<E: Executor>(config: &ScenarioConfig, exec: &E) -> Result<PowerTable> {
    config.validate()?;
    let outcomes = exec.map_indexed(config.mc_reps, |rep| run_rep(config, rep));
    let settings = config.settings();
    let k = config.methods.len();
    let mut rejections = vec![vec![0usize; k]; settings];
    let mut drops = vec![vec![0.0f64; k]; settings];
    let mut excluded = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                for s in 0..settings {
                    for m in 0..k {
                        if o.p_values[s][m] <= config.alpha {
                            rejections[s][m] += 1;
                        }
                        drops[s][m] += o.drop_rates[s][m];
                    }
                }
            }
            Err(e) => excluded.push(Exclusion { rep, reason: e.to_string() }),
        }
    }
    if excluded.len() as f64 > MAX_EXCLUSION_RATE * config.mc_reps as f64 {
        return Err(Error::TooManyExclusions { excluded: excluded.len(), total: config.mc_reps });
    }
    let completed = config.mc_reps - excluded.len();
    let mut cells = Vec::with_capacity(k * settings);
    for (m, method) in config.methods.iter().enumerate() {
        for s in 0..settings {
            let rate = if completed == 0 { 0.0 } else { rejections[s][m] as f64 / completed as f64 };
            cells.push(PowerCell {
                method: method.name().to_string(),
                setting: config.setting_label(s),
                rejections: rejections[s][m],
                reps: completed,
                rate,
                mc_se: libm::sqrt(rate * (1.0 - rate) / completed.max(1) as f64),
                mean_drop_rate: drops[s][m] / completed.max(1) as f64,
            });
        }
    }
    Ok(PowerTable {
        scenario: config.scenario.label(),
        methods: config.methods.iter().map(|m| m.name().to_string()).collect(),
        settings: (0..settings).map(|s| config.setting_label(s)).collect(),
        cells,
        mc_reps: config.mc_reps,
        completed,
        excluded,
        wall_seconds: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_probabilities_sum_to_one() {
        for c in TableCase::ALL {
            assert!((c.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        let p = TableCase::I.probabilities();
        assert_eq!(p[0], 0.25);
        assert_eq!(p[4], 1.0 / 16.0);
    }

    #[test]
    fn case_noncentrality() {
        let g: Vec<f64> = TableCase::ALL.iter().map(|c| c.gamma()).collect();
        assert!(g[0].abs() < 1e-15);
        // The Case II list gives 0.0117 (often quoted as 0.017).
        assert!((g[1] - 0.011665).abs() < 1e-6, "{}", g[1]);
        assert!((g[2] - 0.125).abs() < 5e-4, "{}", g[2]);
    }

    #[test]
    fn strata_have_constant_response() {
        let s = Scenario::StratifiedCaseControl { population: 500, per_stratum: 5 };
        let g = gen_population(&s, TableCase::I, 3).unwrap();
        let DesignConfig::StratifiedSrs { strata, .. } = &g.design else { panic!() };
        for h in 0..10u32 {
            let ys: Vec<f64> =
                g.population.units.iter().zip(strata).filter(|(_, &s)| s == h).map(|(u, _)| u.y).collect();
            assert!(ys.windows(2).all(|w| w[0] == w[1]));
            assert_eq!(ys.first().copied().unwrap_or(1.0 - (h % 2) as f64), 1.0 - (h % 2) as f64);
        }
    }

    #[test]
    fn populations_match_their_configuration() {
        let g = gen_population(&Scenario::SingleStagePps { population: 300, sample: 10 }, TableCase::I, 1).unwrap();
        assert_eq!(g.population.size(), 300);
        let DesignConfig::Ppswr { selection, n } = &g.design else { panic!() };
        assert_eq!(*n, 10);
        assert!((selection.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.population.units.iter().all(|u| (0.0..5.0).contains(&u.x[0])));

        let s = Scenario::TwoStageCluster { clusters: 30, min_size: 30, first_stage: 5, second_stage: 5 };
        let g = gen_population(&s, TableCase::I, 2).unwrap();
        let sizes = g.population.cluster_sizes.as_ref().unwrap();
        assert_eq!(sizes.len(), 30);
        assert!(sizes.iter().all(|&m| m >= 30));
    }

    #[test]
    fn independence_population_is_tabulated() {
        let s = Scenario::IndependenceTable { population: 20_000, sample: 50 };
        let g = gen_population(&s, TableCase::III, 4).unwrap();
        let mut counts = [0usize; 9];
        for u in &g.population.units {
            counts[(u.categories[0] * 3 + u.categories[1]) as usize] += 1;
        }
        let p = TableCase::III.probabilities();
        for k in 0..9 {
            let f = counts[k] as f64 / 20_000.0;
            assert!((f - p[k]).abs() < 4.0 * libm::sqrt(p[k] * (1.0 - p[k]) / 20_000.0));
        }
    }

    #[test]
    fn small_scenario_is_deterministic() {
        let mut c = ScenarioConfig::preset("table1", 7).unwrap();
        c.mc_reps = 6;
        c.boot_reps = 30;
        let a = run_scenario(&c, &Sequential).unwrap();
        let b = run_scenario(&c, &Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 15);
        assert!(a.cells.iter().all(|c| (0.0..=1.0).contains(&c.rate) && c.rejections <= c.reps));
    }

    #[test]
    fn method_order_does_not_change_rates() {
        let mut c = ScenarioConfig::preset("table4", 3).unwrap();
        c.mc_reps = 4;
        c.boot_reps = 40;
        c.cases = vec![TableCase::I];
        let a = run_scenario(&c, &Sequential).unwrap();
        c.methods.reverse();
        let b = run_scenario(&c, &Sequential).unwrap();
        for cell in &a.cells {
            assert_eq!(Some(cell.rate), b.rate(&cell.method, &cell.setting));
        }
    }

    #[test]
    fn incompatible_methods_are_rejected() {
        let mut c = ScenarioConfig::preset("table3", 1).unwrap();
        c.methods.push(SimMethod::Regression(Method::Blr));
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::preset("table1", 1).unwrap();
        c.methods.push(SimMethod::Categorical(CategoricalMethod::Rs));
        assert!(c.validate().is_err());
    }
}
