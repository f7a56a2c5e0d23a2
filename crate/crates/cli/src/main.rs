use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kscore::concave::ConcaveKind;
use kscore::divergence::{DensityKind, EmptyBinRule};
use kscore::hypothesis::experiment::ExperimentConfig;
use kscore::hypothesis::{CombinedNull, TestMeasure};
use kscore::kernel::{Bandwidth, KernelConfig, KernelFamily};
use kscore::projection::ProjectionMethod;
use kscore::risk::DEFAULT_BINS;
use kscore_cli::{commands, io};

use kscore_cli::config::{
    usage, ConcaveConfig, DivergenceConfig, FeatselSetup, Inputs, ProjectionSettings, RankConfig, ReproduceConfig,
    RunConfig, TestRunConfig, UsageError, DEFAULT_SEED,
};

/// Kernel divergences, kernel two-sample tests and feature risk ranking.
#[derive(Parser)]
#[command(name = "kscore", version)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Divergences between two samples under one projection.
    Divergence(DivergenceArgs),
    /// Permutation-calibrated two-sample test.
    Test(TestArgs),
    /// Built-in experiments.
    Reproduce(ReproduceArgs),
    /// Coefficients, curve and admissibility checks of a concave function.
    Concave(ConcaveArgs),
    /// Per-feature minimal risk ranking of a labeled sample.
    RankFeatures(RankArgs),
    /// Re-run the configuration embedded in a report.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Samples of group P.
    #[arg(long, value_name = "CSV", requires = "q")]
    p: Option<PathBuf>,
    /// Samples of group Q.
    #[arg(long, value_name = "CSV", requires = "p")]
    q: Option<PathBuf>,
    /// Single file with a `group` column (P or Q).
    #[arg(long, value_name = "CSV", conflicts_with_all = ["p", "q"])]
    input: Option<PathBuf>,
    /// Input files have no header row.
    #[arg(long)]
    no_header: bool,
}

impl InputArgs {
    fn resolve(&self) -> Inputs {
        Inputs { p: self.p.clone(), q: self.q.clone(), labeled: self.input.clone(), header: !self.no_header }
    }
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value = "gaussian", value_name = "gaussian|laplace")]
    kernel: KernelFamily,
    /// `median` (pooled median distance) or a positive number.
    #[arg(long, default_value = "median")]
    bandwidth: Bandwidth,
}

impl KernelArgs {
    fn resolve(&self) -> KernelConfig {
        KernelConfig { family: self.kernel, bandwidth: self.bandwidth }
    }
}

#[derive(Args)]
struct ProjectionArgs {
    #[arg(long, default_value = "means", value_name = "means|fisher|svm")]
    projection: ProjectionMethod,
    /// Fisher regularizer (default: 1e-3 times the mean within-class scatter diagonal).
    #[arg(long)]
    lambda: Option<f64>,
    /// SVM cost.
    #[arg(long, default_value_t = 1.0)]
    cost: f64,
}

impl ProjectionArgs {
    fn resolve(&self) -> ProjectionSettings {
        ProjectionSettings { method: self.projection, lambda: self.lambda, cost: self.cost }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, default_value = "poly:4", value_name = "ls|log|exp|logcos|cosh|sec|poly:N")]
    concave: ConcaveKind,
    #[arg(long, default_value = "gaussian", value_name = "gaussian|hist:B")]
    density: DensityKind,
    /// Contribution of points whose histogram bin is empty in both groups.
    #[arg(long, value_enum, default_value_t = EmptyBin::Uninformative)]
    empty_bin: EmptyBin,
}

#[derive(Args)]
struct OutputArgs {
    /// JSON report path (stdout when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// Also write the table as CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmptyBin {
    Uninformative,
    Skip,
}

impl From<EmptyBin> for EmptyBinRule {
    fn from(e: EmptyBin) -> Self {
        match e {
            EmptyBin::Uninformative => EmptyBinRule::Uninformative,
            EmptyBin::Skip => EmptyBinRule::Skip,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Combined {
    /// One-class nearest neighbour.
    Nn,
    /// Bonferroni per-component thresholds.
    AxisBox,
}

impl From<Combined> for CombinedNull {
    fn from(c: Combined) -> Self {
        match c {
            Combined::Nn => CombinedNull::NearestNeighbor,
            Combined::AxisBox => CombinedNull::AxisBox,
        }
    }
}

#[derive(Args)]
struct DivergenceArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    projection: ProjectionArgs,
    /// Comma-separated measures.
    #[arg(long, value_delimiter = ',', default_value = "mmd,kd,bkd", value_name = "mmd|kd|bkd|mmd+kd|mmd+bkd")]
    measure: Vec<TestMeasure>,
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    projection: ProjectionArgs,
    #[arg(long, default_value = "mmd", value_name = "mmd|kd|bkd|mmd+kd|mmd+bkd")]
    measure: TestMeasure,
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap permutations.
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// Fit the direction once on the observed labels instead of per permutation.
    #[arg(long)]
    frozen: bool,
    /// Calibration of vector statistics.
    #[arg(long, value_enum, default_value_t = Combined::Nn)]
    combined: Combined,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    /// Type-II errors on two Gaussian pairs.
    GaussTable6,
    /// Feature-selection ranking of concave functions.
    Featsel,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(value_enum)]
    target: Target,
    /// JSON file with experiment settings; flags override it.
    #[arg(long, value_name = "JSON")]
    experiment: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Bootstrap permutations (gauss-table6).
    #[arg(long)]
    iterations: Option<usize>,
    /// Projections to run (gauss-table6).
    #[arg(long, value_delimiter = ',', value_name = "means|fisher|svm")]
    projection: Vec<ProjectionMethod>,
    /// Extra labeled datasets (featsel).
    #[arg(long, value_name = "CSV")]
    input: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    table: TableArgs,
}

#[derive(Args)]
struct ConcaveArgs {
    #[arg(value_name = "ls|log|exp|logcos|cosh|sec|poly:N")]
    kind: ConcaveKind,
    /// Points of the sampled curve.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(long, default_value = "poly:4", value_name = "ls|log|exp|logcos|cosh|sec|poly:N")]
    concave: ConcaveKind,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    table: TableArgs,
}

#[derive(Args)]
struct RerunArgs {
    /// A report written by any subcommand, or a bare config.
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    table: TableArgs,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn reproduce_config(a: &ReproduceArgs) -> Result<ReproduceConfig> {
    Ok(match a.target {
        Target::GaussTable6 => {
            let mut experiment = match &a.experiment {
                Some(p) => read_json::<ExperimentConfig>(p)?,
                None => ExperimentConfig::gaussian_pair(),
            };
            if let Some(r) = a.repetitions {
                experiment.repetitions = r;
            }
            if let Some(i) = a.iterations {
                experiment.iterations = i;
            }
            if !a.projection.is_empty() {
                experiment.projections = a.projection.clone();
            }
            if let Some(s) = a.seed {
                experiment.seed = s;
            }
            ReproduceConfig::GaussTable6 { experiment }
        }
        Target::Featsel => {
            let mut setup = match &a.experiment {
                Some(p) => read_json::<FeatselSetup>(p)?,
                None => FeatselSetup::default(),
            };
            if let Some(r) = a.repetitions {
                setup.selection.repetitions = r;
            }
            if let Some(s) = a.seed {
                setup.selection.seed = s;
            }
            if a.iterations.is_some() || !a.projection.is_empty() {
                return Err(usage("--iterations and --projection apply to gauss-table6 only"));
            }
            let datasets = a
                .input
                .iter()
                .map(|p| Inputs { p: None, q: None, labeled: Some(p.clone()), header: true })
                .collect();
            ReproduceConfig::Featsel { design: setup.design, selection: setup.selection, datasets }
        }
    })
}

/// Resolved config plus where to write the JSON report and the CSV table.
fn resolve(command: Command) -> Result<(RunConfig, Option<PathBuf>, Option<PathBuf>)> {
    Ok(match command {
        Command::Divergence(a) => (
            RunConfig::Divergence(DivergenceConfig {
                inputs: a.inputs.resolve(),
                kernel: a.kernel.resolve(),
                projection: a.projection.resolve(),
                measures: a.measure,
                concave: a.score.concave,
                density: a.score.density,
                empty_bin: a.score.empty_bin.into(),
                seed: a.seed,
            }),
            a.output.output,
            None,
        ),
        Command::Test(a) => (
            RunConfig::Test(TestRunConfig {
                inputs: a.inputs.resolve(),
                kernel: a.kernel.resolve(),
                projection: a.projection.resolve(),
                measure: a.measure,
                concave: a.score.concave,
                density: a.score.density,
                empty_bin: a.score.empty_bin.into(),
                alpha: a.alpha,
                iterations: a.iterations,
                refit: !a.frozen,
                combined: a.combined.into(),
                seed: a.seed,
            }),
            a.output.output,
            None,
        ),
        Command::Reproduce(a) => (RunConfig::Reproduce(reproduce_config(&a)?), a.output.output, a.table.csv),
        Command::Concave(a) => (
            RunConfig::Concave(ConcaveConfig { kind: a.kind, grid: a.grid, seed: a.seed }),
            a.output.output,
            None,
        ),
        Command::RankFeatures(a) => (
            RunConfig::RankFeatures(RankConfig {
                inputs: a.inputs.resolve(),
                concave: a.concave,
                bins: a.bins,
                seed: a.seed,
            }),
            a.output.output,
            a.table.csv,
        ),
        Command::Rerun(a) => {
            let value: serde_json::Value = read_json(&a.config)?;
            let embedded = value.get("config").cloned().unwrap_or(value);
            let config = serde_json::from_value(embedded)
                .map_err(|e| usage(format!("{}: not a kscore config: {e}", a.config.display())))?;
            (config, a.output.output, a.table.csv)
        }
    })
}

fn execute(cli: Cli) -> Result<()> {
    let (config, output, csv) = resolve(cli.command)?;
    let out = commands::run(&config)?;
    match (&csv, &out.csv) {
        (Some(path), Some(bytes)) => io::write_atomic(path, bytes).context("writing CSV table")?,
        (Some(_), None) => return Err(usage("this command produces no table; drop --csv")),
        _ => {}
    }
    io::emit(output.as_deref(), &out.json)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 1 } else { 2 })
        }
    }
}
