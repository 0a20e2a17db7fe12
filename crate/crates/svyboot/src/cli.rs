//! The `svyboot` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use svyboot_core::bootstrap::{bootstrap_weights, BootstrapWeightMatrix};
use svyboot_core::categorical::{
    gof_analysis, independence_analysis, CategoricalAnalysis, CategoricalMethod, CategoricalResult,
};
use svyboot_core::data::{weighted_proportions, weighted_two_way_table, DesignKind, SurveyDataset};
use svyboot_core::exec::Executor;
use svyboot_core::linalg;
use svyboot_core::models::{self, Model, Restriction};
use svyboot_core::regression::{
    run_tests, sandwich_covariance, Method, Reference, TestOptions, TestResult, VarianceMethod,
};
use svyboot_core::simulation::{run_scenario, PowerTable, Scenario, ScenarioConfig, SimMethod, TableCase};

use crate::error::{AppError, AppResult};
use crate::io::{attach_weight_file, dataset_from_table, CategorySpec, CsvTable, DesignInfo, Schema};
use crate::parallel::Parallel;
use crate::report::{emit, Format, Report, Table, Value};

/// Default replicate count when weights have to be generated.
pub const DEFAULT_REPLICATES: usize = 500;

#[derive(Debug, Parser)]
#[command(name = "svyboot", version, about = "Bootstrap-calibrated hypothesis tests for complex survey data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (default: available parallelism). Never changes results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Prefix of replicate-weight columns.
    #[arg(long = "bw-prefix", global = true, default_value = "bw_")]
    pub bw_prefix: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate bootstrap replicate weights and append them to the data.
    Weights(WeightsArgs),
    /// Fit a survey-weighted model.
    Fit(FitArgs),
    /// Test H0: θ2 = θ2⁰ in a survey-weighted regression.
    Test(TestArgs),
    /// Goodness-of-fit test for one categorical variable.
    Gof(GofArgs),
    /// Test of independence in a two-way table.
    Independence(IndependenceArgs),
    /// Monte Carlo rejection-rate study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignArg {
    Poisson,
    Ppswr,
    Stratified,
    TwoStage,
}

impl From<DesignArg> for DesignKind {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Poisson => DesignKind::Poisson,
            DesignArg::Ppswr => DesignKind::Ppswr,
            DesignArg::Stratified => DesignKind::StratifiedSrs,
            DesignArg::TwoStage => DesignKind::TwoStageCluster,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Gaussian,
    Logistic,
    Poisson,
}

impl ModelArg {
    fn model(self) -> Model {
        match self {
            ModelArg::Gaussian => Model::gaussian(),
            ModelArg::Logistic => Model::logistic(),
            ModelArg::Poisson => Model::poisson(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceArg {
    Bootstrap,
    Sandwich,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Table1,
    Table2,
    Table3,
    Table4,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Unit-level CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "poisson")]
    pub design: DesignArg,
    /// Base-weight column.
    #[arg(long = "weight-col", default_value = "w")]
    pub weight_col: String,
    /// Stratum column (stratified designs).
    #[arg(long)]
    pub strata: Option<String>,
    /// Cluster-draw column (two-stage designs).
    #[arg(long)]
    pub cluster: Option<String>,
    /// Column with the population size M_i of each record's cluster.
    #[arg(long = "cluster-size")]
    pub cluster_size: Option<String>,
    /// Known population size N (default: rounded weight total).
    #[arg(long = "population-size")]
    pub population_size: Option<u64>,
    /// Number of clusters in the population (two-stage designs).
    #[arg(long = "population-clusters")]
    pub population_clusters: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// CSV holding replicate-weight columns for the rows of --input.
    #[arg(long = "weights")]
    pub weights_file: Option<PathBuf>,
    /// Replicates to generate when the data carry none.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Attach sorted bootstrap statistics to the report.
    #[arg(long = "keep-replicates")]
    pub keep_replicates: bool,
}

#[derive(Debug, Args)]
pub struct RegressionArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Response column.
    #[arg(long, default_value = "y")]
    pub y: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub reps: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub regression: RegressionArgs,
    #[command(flatten)]
    pub replicates: ReplicateArgs,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub regression: RegressionArgs,
    #[command(flatten)]
    pub replicates: ReplicateArgs,
    /// Comma-separated methods (nlr, nqs, ls, blr, bqs, wald) or "all".
    #[arg(long, default_value = "all")]
    pub method: String,
    /// Null hypothesis as "name=value,...".
    #[arg(long)]
    pub null: String,
    /// Variance estimator for Lumley–Scott and Wald.
    #[arg(long, value_enum, default_value = "bootstrap")]
    pub variance: VarianceArg,
}

#[derive(Debug, Args)]
pub struct GofArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub replicates: ReplicateArgs,
    /// Categorical column.
    #[arg(long)]
    pub var: String,
    /// Declared level order (default: first appearance).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<String>>,
    /// Hypothesized probabilities, one per level.
    #[arg(long, value_delimiter = ',', required = true)]
    pub expected: Vec<f64>,
    /// Comma-separated methods (np, nlr, rs, bp, blr) or "all".
    #[arg(long, default_value = "all")]
    pub method: String,
}

#[derive(Debug, Args)]
pub struct IndependenceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub replicates: ReplicateArgs,
    #[arg(long)]
    pub row: String,
    #[arg(long)]
    pub col: String,
    #[arg(long = "row-levels", value_delimiter = ',')]
    pub row_levels: Option<Vec<String>>,
    #[arg(long = "col-levels", value_delimiter = ',')]
    pub col_levels: Option<Vec<String>>,
    /// Comma-separated methods (np, nlr, rs, bp, blr) or "all".
    #[arg(long, default_value = "all")]
    pub method: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    /// Monte Carlo repetitions.
    #[arg(long, default_value_t = 500)]
    pub mc: usize,
    /// Bootstrap replicates per sample.
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Null values θ2⁰ (regression scenarios).
    #[arg(long, value_delimiter = ',')]
    pub nulls: Option<Vec<f64>>,
    /// Cases I, II, III (independence scenario).
    #[arg(long, value_delimiter = ',')]
    pub cases: Option<Vec<String>>,
    /// Comma-separated methods or "all".
    #[arg(long, default_value = "all")]
    pub method: String,
    /// Population size N.
    #[arg(long)]
    pub population: Option<usize>,
    /// Sample size n (single-stage and independence scenarios).
    #[arg(long)]
    pub sample: Option<usize>,
    /// Sample size per stratum n_h.
    #[arg(long = "per-stratum")]
    pub per_stratum: Option<usize>,
    /// Number of population clusters G.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Minimum cluster size C0.
    #[arg(long = "min-size")]
    pub min_size: Option<u64>,
    /// First-stage draws n1.
    #[arg(long = "first-stage")]
    pub first_stage: Option<usize>,
    /// Second-stage units per cluster n2.
    #[arg(long = "second-stage")]
    pub second_stage: Option<usize>,
    /// Keep one finite population per setting instead of regenerating it.
    #[arg(long = "fixed-population")]
    pub fixed_population: bool,
    /// Record wall-clock time (the report is then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("svyboot: error[{}] (exit {}): {}", e.kind.name(), e.exit_code(), e.message);
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> AppResult<()> {
    let threads = match cli.global.threads {
        Some(0) => return Err(AppError::usage("--threads must be at least 1")),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let exec = Parallel::new(threads).map_err(|e| AppError::usage(format!("cannot start {threads} threads: {e}")))?;
    let g = &cli.global;
    match &cli.command {
        Command::Weights(a) => weights(g, a, &exec),
        Command::Fit(a) => fit(g, a, &exec),
        Command::Test(a) => test(g, a, &exec),
        Command::Gof(a) => gof(g, a, &exec),
        Command::Independence(a) => independence(g, a, &exec),
        Command::Simulate(a) => simulate(g, a, &exec),
    }
}

fn write_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> AppResult<()>) -> AppResult<()> {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| AppError::data(format!("{}: {e}", p.display())))?;
            let mut w = std::io::BufWriter::new(file);
            f(&mut w)?;
            w.flush().map_err(|e| AppError::data(format!("{}: {e}", p.display())))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush().map_err(|e| AppError::data(e.to_string()))
        }
    }
}

/// Echo of the data-related flags after defaults are resolved.
#[derive(Debug, Clone, Serialize)]
pub struct DataConfig {
    pub input: String,
    pub design: DesignArg,
    pub weight_col: String,
    pub strata: Option<String>,
    pub cluster: Option<String>,
    pub cluster_size: Option<String>,
    pub population_size: u64,
    pub population_clusters: Option<u64>,
    pub bw_prefix: String,
    pub rows: usize,
}

fn load(g: &GlobalArgs, a: &DataArgs, mut schema: Schema) -> AppResult<(CsvTable, SurveyDataset, DataConfig)> {
    schema.weight = a.weight_col.clone();
    schema.stratum = a.strata.clone();
    schema.cluster = a.cluster.clone();
    schema.cluster_size = a.cluster_size.clone();
    schema.bw_prefix = g.bw_prefix.clone();
    let table = CsvTable::read(&a.input)?;
    let info = DesignInfo {
        design: a.design.into(),
        population_size: a.population_size,
        population_clusters: a.population_clusters,
    };
    let data = dataset_from_table(&table, &schema, info).map_err(|e| e.context(a.input.display()))?;
    let config = DataConfig {
        input: a.input.display().to_string(),
        design: a.design,
        weight_col: a.weight_col.clone(),
        strata: a.strata.clone(),
        cluster: a.cluster.clone(),
        cluster_size: a.cluster_size.clone(),
        population_size: data.population_size(),
        population_clusters: data.population_clusters(),
        bw_prefix: g.bw_prefix.clone(),
        rows: data.len(),
    };
    Ok((table, data, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplicateSource {
    File,
    Generated,
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateConfig {
    pub source: ReplicateSource,
    pub weights_file: Option<String>,
    pub replicates: usize,
}

/// Replicate weights from the data, a side file, or freshly generated.
fn replicates<E: Executor>(
    g: &GlobalArgs,
    a: &ReplicateArgs,
    data: SurveyDataset,
    needed: bool,
    exec: &E,
) -> AppResult<(SurveyDataset, Option<BootstrapWeightMatrix>, ReplicateConfig)> {
    let data = match &a.weights_file {
        Some(path) => {
            let table = CsvTable::read(path)?;
            attach_weight_file(data, &table, &g.bw_prefix).map_err(|e| e.context(path.display()))?
        }
        None => data,
    };
    let weights_file = a.weights_file.as_ref().map(|p| p.display().to_string());
    if let Some(m) = data.replicate_weights() {
        if a.reps.is_some() {
            log::warn!("--reps ignored: the data already carry {} replicate-weight columns", m.replicates());
        }
        let m = m.clone();
        let config = ReplicateConfig { source: ReplicateSource::File, weights_file, replicates: m.replicates() };
        return Ok((data, Some(m), config));
    }
    let reps = a.reps.unwrap_or(if needed { DEFAULT_REPLICATES } else { 0 });
    if reps == 0 {
        if needed {
            return Err(AppError::usage("the selected methods need replicate weights; --reps must be at least 1"));
        }
        return Ok((data, None, ReplicateConfig { source: ReplicateSource::None, weights_file, replicates: 0 }));
    }
    let m = bootstrap_weights(&data, reps, g.seed, exec)?;
    Ok((data, Some(m), ReplicateConfig { source: ReplicateSource::Generated, weights_file, replicates: reps }))
}

// ---------------------------------------------------------------- weights

#[derive(Debug, Clone, Serialize)]
pub struct WeightsConfig {
    pub data: DataConfig,
    pub replicates: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightsSummary {
    pub weight_total: f64,
    pub mean_replicate_total: f64,
    pub min_replicate_total: f64,
    pub max_replicate_total: f64,
    /// Share of zero entries in the replicate matrix.
    pub zero_share: f64,
}

fn summarize(data: &SurveyDataset, m: &BootstrapWeightMatrix) -> WeightsSummary {
    let totals: Vec<f64> = m.columns().map(|c| c.iter().sum()).collect();
    let zeros = m.columns().map(|c| c.iter().filter(|&&v| v == 0.0).count()).sum::<usize>();
    WeightsSummary {
        weight_total: data.weight_total(),
        mean_replicate_total: totals.iter().sum::<f64>() / totals.len().max(1) as f64,
        min_replicate_total: totals.iter().copied().fold(f64::INFINITY, f64::min),
        max_replicate_total: totals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        zero_share: zeros as f64 / (m.rows() * m.replicates()).max(1) as f64,
    }
}

fn weights<E: Executor>(g: &GlobalArgs, a: &WeightsArgs, exec: &E) -> AppResult<()> {
    if a.reps == 0 {
        return Err(AppError::usage("--reps must be at least 1"));
    }
    let (table, data, config) = load(g, &a.data, Schema::default())?;
    let m = bootstrap_weights(&data, a.reps, g.seed, exec)?;
    write_output(g.out.as_deref(), |w| table.write_with_weights(w, &m, &g.bw_prefix))?;
    if g.out.is_some() {
        let s = summarize(&data, &m);
        let mut t = Table::new("replicate weights", &["quantity", "value"]);
        t.push(vec!["weight_total".into(), s.weight_total.into()]);
        t.push(vec!["mean_replicate_total".into(), s.mean_replicate_total.into()]);
        t.push(vec!["min_replicate_total".into(), s.min_replicate_total.into()]);
        t.push(vec!["max_replicate_total".into(), s.max_replicate_total.into()]);
        t.push(vec!["zero_share".into(), s.zero_share.into()]);
        let report = Report::new("weights", g.seed, WeightsConfig { data: config, replicates: a.reps }, s);
        let stdout = std::io::stdout();
        emit(&report, vec![t], g.format, &mut stdout.lock())?;
    }
    Ok(())
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, Serialize)]
pub struct RegressionConfig {
    pub data: DataConfig,
    pub model: ModelArg,
    pub response: String,
    pub covariates: Vec<String>,
    pub replicates: ReplicateConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct Parameter {
    pub name: String,
    pub estimate: f64,
    pub sandwich_se: f64,
    pub bootstrap_se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    pub loglik: Option<f64>,
    pub replicates_used: usize,
    pub replicates_dropped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResults {
    pub parameters: Vec<Parameter>,
    pub diagnostics: FitDiagnostics,
}

fn regression_schema(r: &RegressionArgs) -> Schema {
    Schema { response: Some(r.y.clone()), covariates: r.x.clone(), ..Schema::default() }
}

fn fit<E: Executor>(g: &GlobalArgs, a: &FitArgs, exec: &E) -> AppResult<()> {
    let (_, data, data_config) = load(g, &a.data, regression_schema(&a.regression))?;
    let (data, matrix, rep_config) = replicates(g, &a.replicates, data, false, exec)?;
    let model = a.regression.model.model();
    let w = data.weights();
    let full = models::fit(&model, &data, &w, None)?;
    if !full.converged {
        return Err(AppError::diagnostic(format!(
            "fit did not converge after {} iterations (score norm {:e})",
            full.iterations, full.score_norm
        )));
    }
    let sandwich = sandwich_covariance(&model, &data, &full)?;
    let p = full.theta.len();
    let (boot, used, dropped) = match &matrix {
        Some(m) => {
            let fits = exec.map_indexed(m.replicates(), |b| {
                models::fit(&model, &data, m.column(b), Some(&full.theta))
                    .ok()
                    .filter(|f| f.converged)
                    .map(|f| f.theta.iter().copied().collect::<Vec<f64>>())
            });
            let ok: Vec<Vec<f64>> = fits.into_iter().flatten().collect();
            let dropped = m.replicates() - ok.len();
            if dropped as f64 > svyboot_core::regression::MAX_DROP_RATE * m.replicates() as f64 {
                return Err(svyboot_core::Error::TooManyDropped { dropped, total: m.replicates() }.into());
            }
            (Some(linalg::covariance(&ok, p)), ok.len(), dropped)
        }
        None => (None, 0, 0),
    };
    let parameters: Vec<Parameter> = data
        .parameter_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| Parameter {
            name,
            estimate: full.theta[i],
            sandwich_se: sandwich[(i, i)].sqrt(),
            bootstrap_se: boot.as_ref().map(|c| c[(i, i)].sqrt()),
        })
        .collect();
    let diagnostics = FitDiagnostics {
        converged: full.converged,
        iterations: full.iterations,
        score_norm: full.score_norm,
        loglik: full.loglik,
        replicates_used: used,
        replicates_dropped: dropped,
    };
    let mut t = Table::new("estimates", &["parameter", "estimate", "sandwich_se", "bootstrap_se"]);
    for q in &parameters {
        t.push(vec![q.name.clone().into(), q.estimate.into(), q.sandwich_se.into(), Value::opt(q.bootstrap_se)]);
    }
    let mut d = Table::new("diagnostics", &["quantity", "value"]);
    d.push(vec!["converged".into(), diagnostics.converged.into()]);
    d.push(vec!["iterations".into(), diagnostics.iterations.into()]);
    d.push(vec!["score_norm".into(), diagnostics.score_norm.into()]);
    d.push(vec!["loglik".into(), Value::opt(diagnostics.loglik)]);
    d.push(vec!["replicates_used".into(), used.into()]);
    d.push(vec!["replicates_dropped".into(), dropped.into()]);
    let config = RegressionConfig {
        data: data_config,
        model: a.regression.model,
        response: a.regression.y.clone(),
        covariates: a.regression.x.clone(),
        replicates: rep_config,
    };
    let report = Report::new("fit", g.seed, config, FitResults { parameters, diagnostics });
    write_output(g.out.as_deref(), |w| emit(&report, vec![t, d], g.format, w))
}

// ---------------------------------------------------------------- test

#[derive(Debug, Clone, Serialize)]
pub struct TestConfig {
    #[serde(flatten)]
    pub regression: RegressionConfig,
    pub methods: Vec<Method>,
    pub null: Vec<NullValue>,
    pub variance: VarianceArg,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResults {
    pub estimates: Vec<NullValue>,
    pub tests: Vec<TestResult>,
}

/// Parses `name=value,...` against the parameter names.
pub fn parse_null(spec: &str, names: &[String]) -> AppResult<(Restriction, Vec<NullValue>)> {
    let mut pairs: Vec<(usize, f64)> = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, value) =
            part.split_once('=').ok_or_else(|| AppError::usage(format!("null term '{part}' is not name=value")))?;
        let (name, value) = (name.trim(), value.trim());
        let i = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| AppError::usage(format!("unknown parameter '{name}' (parameters: {})", names.join(", "))))?;
        let v: f64 = value.parse().map_err(|_| AppError::usage(format!("null value '{value}' is not a number")))?;
        if pairs.iter().any(|&(j, _)| j == i) {
            return Err(AppError::usage(format!("parameter '{name}' restricted twice")));
        }
        pairs.push((i, v));
    }
    if pairs.is_empty() {
        return Err(AppError::usage("empty --null"));
    }
    if pairs.len() == names.len() {
        return Err(AppError::usage("--null must leave at least one parameter free"));
    }
    pairs.sort_by_key(|&(i, _)| i);
    let echo = pairs.iter().map(|&(i, v)| NullValue { name: names[i].clone(), value: v }).collect();
    let restriction = Restriction::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())?;
    Ok((restriction, echo))
}

fn parse_methods<M: Copy + PartialEq>(
    spec: &str,
    all: &[M],
    parse: impl Fn(&str) -> Option<M>,
) -> AppResult<Option<Vec<M>>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    let mut out = Vec::new();
    for s in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = parse(s).ok_or_else(|| AppError::usage(format!("unknown method '{s}'")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(AppError::usage("no methods selected"));
    }
    let _ = all;
    Ok(Some(out))
}

fn reference_cells(r: &Reference) -> [Value; 3] {
    match *r {
        Reference::ChiSq { df } => ["chisq".into(), df.into(), Value::Null],
        Reference::F { df1, df2 } => ["F".into(), df1.into(), df2.into()],
        Reference::BootstrapEmpirical { replicates } => ["bootstrap".into(), replicates.into(), Value::Null],
        Reference::Normal => ["normal".into(), Value::Null, Value::Null],
    }
}

fn test<E: Executor>(g: &GlobalArgs, a: &TestArgs, exec: &E) -> AppResult<()> {
    let (_, data, data_config) = load(g, &a.data, regression_schema(&a.regression))?;
    let model = a.regression.model.model();
    let names = data.parameter_names();
    let (null, null_echo) = parse_null(&a.null, &names)?;
    let requested = parse_methods(&a.method, &Method::ALL, Method::parse)?;
    let methods: Vec<Method> = match requested {
        Some(m) => {
            if let Some(bad) = m.iter().find(|m| m.needs_likelihood() && !model.is_parametric()) {
                return Err(AppError::usage(format!("{} needs a likelihood", bad.name())));
            }
            if null.len() > 1 && m.contains(&Method::Ls) {
                return Err(AppError::usage("LS tests a single parameter"));
            }
            m
        }
        None => Method::ALL
            .into_iter()
            .filter(|m| !(m.needs_likelihood() && !model.is_parametric()))
            .filter(|m| !(*m == Method::Ls && null.len() > 1))
            .collect(),
    };
    let variance = match a.variance {
        VarianceArg::Bootstrap => VarianceMethod::Bootstrap,
        VarianceArg::Sandwich => VarianceMethod::Sandwich,
    };
    let needed = methods.iter().any(|m| match m {
        Method::Blr | Method::Bqs => true,
        Method::Ls | Method::Wald => variance == VarianceMethod::Bootstrap,
        _ => false,
    });
    let (data, matrix, rep_config) = replicates(g, &a.replicates, data, needed, exec)?;
    let options = TestOptions { variance, keep_replicates: a.replicates.keep_replicates };
    let tests = run_tests(&model, &data, &null, &methods, matrix.as_ref(), options, exec)?;
    let full = models::fit(&model, &data, &data.weights(), None)?;
    let estimates =
        names.iter().enumerate().map(|(i, n)| NullValue { name: n.clone(), value: full.theta[i] }).collect();

    let mut t = Table::new(
        "tests",
        &[
            "method",
            "statistic",
            "reference",
            "df1",
            "df2",
            "p_value",
            "replicates_used",
            "replicates_dropped",
            "design_effect",
        ],
    );
    for r in &tests {
        let [kind, df1, df2] = reference_cells(&r.reference);
        t.push(vec![
            r.method.name().into(),
            r.statistic.into(),
            kind,
            df1,
            df2,
            r.p_value.into(),
            r.replicates_used.into(),
            r.replicates_dropped.into(),
            Value::opt(r.design_effect),
        ]);
    }
    let mut e = Table::new("estimates", &["parameter", "estimate"]);
    for (i, n) in names.iter().enumerate() {
        e.push(vec![n.clone().into(), full.theta[i].into()]);
    }
    let config = TestConfig {
        regression: RegressionConfig {
            data: data_config,
            model: a.regression.model,
            response: a.regression.y.clone(),
            covariates: a.regression.x.clone(),
            replicates: rep_config,
        },
        methods,
        null: null_echo,
        variance: a.variance,
    };
    let report = Report::new("test", g.seed, config, TestResults { estimates, tests });
    write_output(g.out.as_deref(), |w| emit(&report, vec![t, e], g.format, w))
}

// ---------------------------------------------------------------- categorical

#[derive(Debug, Clone, Serialize)]
pub struct CategoricalConfig {
    pub data: DataConfig,
    pub replicates: ReplicateConfig,
    pub methods: Vec<CategoricalMethod>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GofConfig {
    #[serde(flatten)]
    pub common: CategoricalConfig,
    pub variable: String,
    pub levels: Vec<String>,
    pub expected: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GofResults {
    pub proportions: Vec<f64>,
    #[serde(flatten)]
    pub analysis: CategoricalAnalysis,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceConfig {
    #[serde(flatten)]
    pub common: CategoricalConfig,
    pub row: String,
    pub col: String,
    pub row_levels: Vec<String>,
    pub col_levels: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceResults {
    /// Row-major estimated cell proportions.
    pub table: Vec<Vec<f64>>,
    #[serde(flatten)]
    pub analysis: CategoricalAnalysis,
}

fn categorical_methods(spec: &str) -> AppResult<Vec<CategoricalMethod>> {
    Ok(parse_methods(spec, &CategoricalMethod::ALL, CategoricalMethod::parse)?
        .unwrap_or_else(|| CategoricalMethod::ALL.to_vec()))
}

fn categorical_tables(a: &CategoricalAnalysis) -> Vec<Table> {
    let mut t = Table::new(
        "tests",
        &["method", "statistic", "reference", "df1", "df2", "p_value", "replicates_used", "design_effect"],
    );
    for r in &a.results {
        let CategoricalResult { method, statistic, reference, p_value, replicates_used, design_effect, .. } = r;
        let [kind, df1, df2] = reference_cells(reference);
        t.push(vec![
            method.name().into(),
            (*statistic).into(),
            kind,
            df1,
            df2,
            (*p_value).into(),
            (*replicates_used).into(),
            Value::opt(*design_effect),
        ]);
    }
    let mut s = Table::new("statistics", &["quantity", "value"]);
    s.push(vec!["pearson".into(), a.pearson.into()]);
    s.push(vec!["likelihood_ratio".into(), a.likelihood_ratio.into()]);
    s.push(vec!["mean_design_effect".into(), a.design_effect.into()]);
    let mut e = Table::new("design-effect eigenvalues", &["index", "eigenvalue"]);
    for (i, v) in a.eigenvalues.iter().enumerate() {
        e.push(vec![(i + 1).into(), (*v).into()]);
    }
    vec![t, s, e]
}

fn needs_categorical_replicates(methods: &[CategoricalMethod]) -> bool {
    methods.iter().any(|m| !matches!(m, CategoricalMethod::Np | CategoricalMethod::Nlr))
}

fn gof<E: Executor>(g: &GlobalArgs, a: &GofArgs, exec: &E) -> AppResult<()> {
    let methods = categorical_methods(&a.method)?;
    let schema = Schema {
        categorical: vec![CategorySpec { column: a.var.clone(), levels: a.levels.clone() }],
        ..Schema::default()
    };
    let (_, data, data_config) = load(g, &a.data, schema)?;
    let levels = data.categorical()[0].levels.clone();
    if a.expected.len() != levels.len() {
        return Err(AppError::usage(format!(
            "--expected has {} probabilities but '{}' has {} levels ({})",
            a.expected.len(),
            a.var,
            levels.len(),
            levels.join(", ")
        )));
    }
    if a.expected.iter().any(|p| !(*p > 0.0)) || (a.expected.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(AppError::usage("--expected must be positive probabilities summing to 1"));
    }
    let (data, matrix, rep_config) = replicates(g, &a.replicates, data, needs_categorical_replicates(&methods), exec)?;
    let analysis = gof_analysis(&data, 0, &a.expected, matrix.as_ref(), &methods, a.replicates.keep_replicates)?;
    let proportions = weighted_proportions(&data, 0)?;
    let mut p = Table::new("proportions", &["level", "estimated", "expected"]);
    for (k, l) in levels.iter().enumerate() {
        p.push(vec![l.clone().into(), proportions[k].into(), a.expected[k].into()]);
    }
    let mut tables = vec![p];
    tables.extend(categorical_tables(&analysis));
    let config = GofConfig {
        common: CategoricalConfig { data: data_config, replicates: rep_config, methods },
        variable: a.var.clone(),
        levels,
        expected: a.expected.clone(),
    };
    let report = Report::new("gof", g.seed, config, GofResults { proportions, analysis });
    write_output(g.out.as_deref(), |w| emit(&report, tables, g.format, w))
}

fn independence<E: Executor>(g: &GlobalArgs, a: &IndependenceArgs, exec: &E) -> AppResult<()> {
    if a.row == a.col {
        return Err(AppError::usage("--row and --col must differ"));
    }
    let methods = categorical_methods(&a.method)?;
    let schema = Schema {
        categorical: vec![
            CategorySpec { column: a.row.clone(), levels: a.row_levels.clone() },
            CategorySpec { column: a.col.clone(), levels: a.col_levels.clone() },
        ],
        ..Schema::default()
    };
    let (_, data, data_config) = load(g, &a.data, schema)?;
    let row_levels = data.categorical()[0].levels.clone();
    let col_levels = data.categorical()[1].levels.clone();
    let (data, matrix, rep_config) = replicates(g, &a.replicates, data, needs_categorical_replicates(&methods), exec)?;
    let analysis = independence_analysis(&data, 0, 1, matrix.as_ref(), &methods, a.replicates.keep_replicates)?;
    let cells = weighted_two_way_table(&data, 0, 1)?;
    let table: Vec<Vec<f64>> =
        (0..cells.rows()).map(|i| (0..cells.cols()).map(|j| cells.get(i, j)).collect()).collect();
    let mut columns = vec![a.row.as_str()];
    columns.extend(col_levels.iter().map(String::as_str));
    let mut p = Table::new("estimated cell proportions", &columns);
    for (i, l) in row_levels.iter().enumerate() {
        let mut row = vec![Value::from(l.clone())];
        row.extend(table[i].iter().map(|&v| Value::Num(v)));
        p.push(row);
    }
    let mut tables = vec![p];
    tables.extend(categorical_tables(&analysis));
    let config = IndependenceConfig {
        common: CategoricalConfig { data: data_config, replicates: rep_config, methods },
        row: a.row.clone(),
        col: a.col.clone(),
        row_levels,
        col_levels,
    };
    let report = Report::new("independence", g.seed, config, IndependenceResults { table, analysis });
    write_output(g.out.as_deref(), |w| emit(&report, tables, g.format, w))
}

// ---------------------------------------------------------------- simulate

fn scenario_config(g: &GlobalArgs, a: &SimulateArgs) -> AppResult<ScenarioConfig> {
    let name = match a.scenario {
        ScenarioArg::Table1 => "table1",
        ScenarioArg::Table2 => "table2",
        ScenarioArg::Table3 => "table3",
        ScenarioArg::Table4 => "table4",
    };
    let base =
        ScenarioConfig::preset(name, g.seed).ok_or_else(|| AppError::usage(format!("unknown scenario {name}")))?;
    let unused =
        |flag: &str, v: bool| if v { Err(AppError::usage(format!("{flag} does not apply to {name}"))) } else { Ok(()) };
    let scenario = match base.scenario {
        Scenario::SingleStagePps { population, sample } | Scenario::IndependenceTable { population, sample } => {
            unused("--per-stratum", a.per_stratum.is_some())?;
            unused(
                "--clusters/--min-size/--first-stage/--second-stage",
                a.clusters.is_some() || a.min_size.is_some() || a.first_stage.is_some() || a.second_stage.is_some(),
            )?;
            let (population, sample) = (a.population.unwrap_or(population), a.sample.unwrap_or(sample));
            if base.scenario.is_categorical() {
                Scenario::IndependenceTable { population, sample }
            } else {
                Scenario::SingleStagePps { population, sample }
            }
        }
        Scenario::StratifiedCaseControl { population, per_stratum } => {
            unused("--sample", a.sample.is_some())?;
            unused(
                "--clusters/--min-size/--first-stage/--second-stage",
                a.clusters.is_some() || a.min_size.is_some() || a.first_stage.is_some() || a.second_stage.is_some(),
            )?;
            Scenario::StratifiedCaseControl {
                population: a.population.unwrap_or(population),
                per_stratum: a.per_stratum.unwrap_or(per_stratum),
            }
        }
        Scenario::TwoStageCluster { clusters, min_size, first_stage, second_stage } => {
            unused(
                "--population/--sample/--per-stratum",
                a.population.is_some() || a.sample.is_some() || a.per_stratum.is_some(),
            )?;
            Scenario::TwoStageCluster {
                clusters: a.clusters.unwrap_or(clusters),
                min_size: a.min_size.unwrap_or(min_size),
                first_stage: a.first_stage.unwrap_or(first_stage),
                second_stage: a.second_stage.unwrap_or(second_stage),
            }
        }
    };
    let mut config = ScenarioConfig::new(scenario, g.seed);
    config.mc_reps = a.mc;
    config.boot_reps = a.reps;
    config.alpha = a.alpha;
    config.fixed_population = a.fixed_population;
    let categorical = scenario.is_categorical();
    if let Some(nulls) = &a.nulls {
        unused("--nulls", categorical)?;
        config.nulls = nulls.clone();
    }
    if let Some(cases) = &a.cases {
        unused("--cases", !categorical)?;
        config.cases = cases
            .iter()
            .map(|c| TableCase::parse(c).ok_or_else(|| AppError::usage(format!("unknown case '{c}'"))))
            .collect::<AppResult<_>>()?;
    }
    let parsed = if categorical {
        parse_methods(&a.method, &CategoricalMethod::ALL, CategoricalMethod::parse)?
            .map(|m| m.into_iter().map(SimMethod::Categorical).collect())
    } else {
        parse_methods(&a.method, &Method::ALL, Method::parse)?
            .map(|m| m.into_iter().map(SimMethod::Regression).collect())
    };
    if let Some(m) = parsed {
        config.methods = m;
    }
    config.validate().map_err(|e| AppError::usage(e.to_string()))?;
    Ok(config)
}

fn power_tables(t: &PowerTable) -> Vec<Table> {
    let mut columns = vec!["method"];
    columns.extend(t.settings.iter().map(String::as_str));
    let grid = |title: &str, f: &dyn Fn(&svyboot_core::simulation::PowerCell) -> Value| {
        let mut table = Table::new(title, &columns);
        for m in &t.methods {
            let mut row = vec![Value::from(m.as_str())];
            row.extend(t.settings.iter().map(|s| t.cell(m, s).map_or(Value::Null, f)));
            table.push(row);
        }
        table
    };
    let mut out = vec![
        grid(&format!("rejection rate {}", t.scenario), &|c| c.rate.into()),
        grid("Monte Carlo standard error", &|c| c.mc_se.into()),
        grid("mean replicate drop rate", &|c| c.mean_drop_rate.into()),
    ];
    let mut run = Table::new("run", &["quantity", "value"]);
    run.push(vec!["mc_reps".into(), t.mc_reps.into()]);
    run.push(vec!["completed".into(), t.completed.into()]);
    run.push(vec!["excluded".into(), t.excluded.len().into()]);
    if let Some(s) = t.wall_seconds {
        run.push(vec!["wall_seconds".into(), s.into()]);
    }
    out.push(run);
    if !t.excluded.is_empty() {
        let mut ex = Table::new("excluded repetitions", &["rep", "reason"]);
        for e in &t.excluded {
            ex.push(vec![e.rep.into(), e.reason.clone().into()]);
        }
        out.push(ex);
    }
    out
}

fn simulate<E: Executor>(g: &GlobalArgs, a: &SimulateArgs, exec: &E) -> AppResult<()> {
    let config = scenario_config(g, a)?;
    let start = std::time::Instant::now();
    let mut table = run_scenario(&config, exec)?;
    if a.timing {
        table.wall_seconds = Some(start.elapsed().as_secs_f64());
    }
    let tables = power_tables(&table);
    let report = Report::new("simulate", g.seed, config, table);
    write_output(g.out.as_deref(), |w| emit(&report, tables, g.format, w))
}
