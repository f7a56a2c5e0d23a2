//! Resolved run configuration, embedded verbatim in every report.

use std::fmt;
use std::path::PathBuf;

use anyhow::Result;
use kscore::concave::ConcaveKind;
use kscore::divergence::{DensityKind, EmptyBinRule};
use kscore::hypothesis::experiment::ExperimentConfig;
use kscore::hypothesis::{CombinedNull, StatisticConfig, TestConfig, TestMeasure};
use kscore::kernel::{KernelConfig, SampleSet, Split};
use kscore::projection::{ProjectionConfig, ProjectionMethod, SvmOptions};
use kscore::risk::{DecoyDesign, SelectionConfig};
use serde::{Deserialize, Serialize};

use crate::io;

pub const DEFAULT_SEED: u64 = 0x5EED;

/// Bad flags or config; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Divergence(DivergenceConfig),
    Test(TestRunConfig),
    Reproduce(ReproduceConfig),
    Concave(ConcaveConfig),
    RankFeatures(RankConfig),
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        match self {
            RunConfig::Divergence(c) => c.seed,
            RunConfig::Test(c) => c.seed,
            RunConfig::Reproduce(ReproduceConfig::GaussTable6 { experiment }) => experiment.seed,
            RunConfig::Reproduce(ReproduceConfig::Featsel { selection, .. }) => selection.seed,
            RunConfig::Concave(c) => c.seed,
            RunConfig::RankFeatures(c) => c.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RunConfig::Divergence(c) => {
                c.inputs.validate()?;
                c.projection.validate()?;
                if c.measures.is_empty() {
                    return Err(usage("at least one measure is required"));
                }
                Ok(())
            }
            RunConfig::Test(c) => {
                c.inputs.validate()?;
                c.projection.validate()?;
                check_alpha(c.alpha)?;
                check_positive("iterations", c.iterations)
            }
            RunConfig::Reproduce(ReproduceConfig::GaussTable6 { experiment }) => {
                check_alpha(experiment.alpha)?;
                check_positive("iterations", experiment.iterations)?;
                check_positive("repetitions", experiment.repetitions)
            }
            RunConfig::Reproduce(ReproduceConfig::Featsel { selection, datasets, .. }) => {
                check_positive("repetitions", selection.repetitions)?;
                check_positive("bins", selection.bins)?;
                if selection.folds < 2 {
                    return Err(usage("folds must be at least 2"));
                }
                datasets.iter().try_for_each(Inputs::validate)
            }
            RunConfig::Concave(c) => {
                if c.grid < 3 {
                    return Err(usage("grid needs at least 3 points"));
                }
                Ok(())
            }
            RunConfig::RankFeatures(c) => {
                c.inputs.validate()?;
                check_positive("bins", c.bins)
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(usage(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

/// Either two sample files (P, Q) or one file with a `group` column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub p: Option<PathBuf>,
    pub q: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub header: bool,
}

/// Pooled samples with their labels.
pub struct Loaded {
    pub pooled: SampleSet,
    pub split: Split,
    pub names: Vec<String>,
}

impl Inputs {
    fn validate(&self) -> Result<()> {
        match (&self.labeled, &self.p, &self.q) {
            (Some(_), None, None) if !self.header => Err(usage("a labeled file needs a header row")),
            (Some(_), None, None) | (None, Some(_), Some(_)) => Ok(()),
            _ => Err(usage("give either --p and --q, or --input")),
        }
    }

    pub fn load(&self) -> Result<Loaded> {
        self.validate()?;
        let (pooled, names) = match (&self.labeled, &self.p, &self.q) {
            (Some(path), _, _) => {
                let t = io::read_labeled(path)?;
                (t.samples, t.names)
            }
            (_, Some(p), Some(q)) => {
                let tp = io::read_samples(p, self.header)?;
                let tq = io::read_samples(q, self.header)?;
                (SampleSet::pooled(&tp.samples, &tq.samples)?, tp.names)
            }
            _ => unreachable!("validated above"),
        };
        let groups = pooled.groups().expect("inputs are labeled").to_vec();
        Ok(Loaded { split: Split::new(groups)?, pooled, names })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSettings {
    pub method: ProjectionMethod,
    /// Fisher regularizer; `None` picks the data-scaled default.
    pub lambda: Option<f64>,
    /// SVM box constraint.
    pub cost: f64,
}

impl ProjectionSettings {
    fn validate(&self) -> Result<()> {
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            return Err(usage(format!("cost must be positive, got {}", self.cost)));
        }
        match self.lambda {
            Some(l) if !(l >= 0.0 && l.is_finite()) => Err(usage(format!("lambda must be non-negative, got {l}"))),
            _ => Ok(()),
        }
    }

    pub fn resolve(&self) -> ProjectionConfig {
        ProjectionConfig {
            method: self.method,
            fisher_lambda: self.lambda,
            svm: SvmOptions { cost: self.cost, ..SvmOptions::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceConfig {
    pub inputs: Inputs,
    pub kernel: KernelConfig,
    pub projection: ProjectionSettings,
    pub measures: Vec<TestMeasure>,
    pub concave: ConcaveKind,
    pub density: DensityKind,
    pub empty_bin: EmptyBinRule,
    pub seed: u64,
}

impl DivergenceConfig {
    pub fn statistic(&self) -> StatisticConfig {
        StatisticConfig {
            projection: self.projection.resolve(),
            concave: self.concave,
            density: self.density,
            empty_bin: self.empty_bin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRunConfig {
    pub inputs: Inputs,
    pub kernel: KernelConfig,
    pub projection: ProjectionSettings,
    pub measure: TestMeasure,
    pub concave: ConcaveKind,
    pub density: DensityKind,
    pub empty_bin: EmptyBinRule,
    pub alpha: f64,
    pub iterations: usize,
    pub refit: bool,
    pub combined: CombinedNull,
    pub seed: u64,
}

impl TestRunConfig {
    pub fn test_config(&self) -> TestConfig {
        TestConfig {
            statistic: StatisticConfig {
                projection: self.projection.resolve(),
                concave: self.concave,
                density: self.density,
                empty_bin: self.empty_bin,
            },
            measure: self.measure,
            alpha: self.alpha,
            iterations: self.iterations,
            refit: self.refit,
            combined: self.combined,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "kebab-case")]
pub enum ReproduceConfig {
    GaussTable6 {
        experiment: ExperimentConfig,
    },
    Featsel {
        /// Synthetic dataset, generated from the selection seed.
        design: DecoyDesign,
        selection: SelectionConfig,
        /// Extra labeled datasets.
        datasets: Vec<Inputs>,
    },
}

/// Optional overrides for `reproduce featsel` read from a JSON file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatselSetup {
    pub design: DecoyDesign,
    pub selection: SelectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcaveConfig {
    pub kind: ConcaveKind,
    /// Points of the sampled curve, endpoints included.
    pub grid: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    pub inputs: Inputs,
    pub concave: ConcaveKind,
    pub bins: usize,
    pub seed: u64,
}
