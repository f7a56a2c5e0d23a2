//! Repeated-draw error-rate experiments on isotropic Gaussian pairs.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decide, fit_null, null_sample, CombinedNull, Decision, Pipeline, StatisticConfig, TestMeasure};
use crate::concave::ConcaveKind;
use crate::divergence::{DensityKind, EmptyBinRule, Measure};
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, KernelConfig, SampleSet, Split};
use crate::projection::{ProjectionConfig, ProjectionMethod, SvmOptions};
use crate::rng::{derive_seed, substream, Rng};

/// `N(mean * 1, std^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: f64,
    pub std: f64,
}

impl GaussianSpec {
    pub fn sample(&self, n: usize, d: usize, rng: &mut Rng) -> Result<SampleSet> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid Gaussian {self:?}")));
        }
        let data = (0..n * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                self.mean + self.std * z
            })
            .collect();
        SampleSet::new(data, n, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub p: GaussianSpec,
    pub q: GaussianSpec,
}

impl Scenario {
    /// Both generators equal: rejections are type-I errors.
    pub fn is_null(&self) -> bool {
        self.p == self.q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub n_per_group: usize,
    pub repetitions: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub scenarios: Vec<Scenario>,
    pub measures: Vec<TestMeasure>,
    pub projections: Vec<ProjectionMethod>,
    pub kernel: KernelConfig,
    pub concave: ConcaveKind,
    pub density: DensityKind,
    pub empty_bin: EmptyBinRule,
    pub fisher_lambda: Option<f64>,
    pub svm: SvmOptions,
    pub refit: bool,
    pub combined: CombinedNull,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::gaussian_pair()
    }
}

impl ExperimentConfig {
    /// 25-D, 250 per group: equal means with covariances 1.5 I vs 1.7 I, and
    /// covariance 1.5 I with means 0 vs 0.1.
    pub fn gaussian_pair() -> Self {
        let (s15, s17) = (1.5f64.sqrt(), 1.7f64.sqrt());
        Self {
            dim: 25,
            n_per_group: 250,
            repetitions: 200,
            iterations: 100,
            alpha: 0.05,
            scenarios: vec![
                Scenario {
                    name: "variance-gap".into(),
                    p: GaussianSpec { mean: 0.0, std: s15 },
                    q: GaussianSpec { mean: 0.0, std: s17 },
                },
                Scenario {
                    name: "mean-gap".into(),
                    p: GaussianSpec { mean: 0.0, std: s15 },
                    q: GaussianSpec { mean: 0.1, std: s15 },
                },
            ],
            measures: TestMeasure::ALL.to_vec(),
            projections: vec![ProjectionMethod::Means],
            kernel: KernelConfig::default(),
            concave: ConcaveKind::Poly(4),
            density: DensityKind::Gaussian,
            empty_bin: EmptyBinRule::default(),
            fisher_lambda: None,
            svm: SvmOptions::default(),
            refit: true,
            combined: CombinedNull::default(),
            seed: 0x5EED,
        }
    }

    /// Same-distribution draws for calibration checks.
    pub fn null_calibration(dim: usize, n_per_group: usize) -> Self {
        Self {
            dim,
            n_per_group,
            scenarios: vec![Scenario {
                name: "null".into(),
                p: GaussianSpec { mean: 0.0, std: 1.0 },
                q: GaussianSpec { mean: 0.0, std: 1.0 },
            }],
            projections: ProjectionMethod::ALL.to_vec(),
            ..Self::gaussian_pair()
        }
    }

    pub fn statistic(&self, method: ProjectionMethod) -> StatisticConfig {
        StatisticConfig {
            projection: ProjectionConfig { method, fisher_lambda: self.fisher_lambda, svm: self.svm },
            concave: self.concave,
            density: self.density,
            empty_bin: self.empty_bin,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_per_group < 2 {
            return Err(Error::InvalidParameter("experiment needs dim >= 1 and at least 2 samples per group".into()));
        }
        if self.repetitions == 0 || self.iterations == 0 {
            return Err(Error::InvalidParameter("experiment needs repetitions and iterations".into()));
        }
        if self.scenarios.is_empty() || self.measures.is_empty() || self.projections.is_empty() {
            return Err(Error::InvalidParameter("experiment needs scenarios, measures and projections".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Rejections when both samples share a distribution.
    TypeI,
    /// Non-rejections when they differ.
    TypeII,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scenario: String,
    pub projection: ProjectionMethod,
    pub measure: TestMeasure,
    pub error_kind: ErrorKind,
    /// Repetitions that produced a decision.
    pub completed: usize,
    /// Repetitions where a statistic could not be computed.
    pub failures: usize,
    pub rejections: usize,
    /// Type-I or type-II error in percent of completed repetitions.
    pub error_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    pub fn row(&self, scenario: &str, projection: ProjectionMethod, measure: TestMeasure) -> Option<&ExperimentRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.projection == projection && r.measure == measure)
    }
}

/// Measures needed by `measures`, in a fixed order.
fn union(measures: &[TestMeasure]) -> Vec<Measure> {
    [Measure::Mmd, Measure::Kd, Measure::Bkd]
        .into_iter()
        .filter(|m| measures.iter().any(|t| t.components().contains(m)))
        .collect()
}

fn columns(vectors: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    vectors.iter().map(|v| idx.iter().map(|&i| v[i]).collect()).collect()
}

/// Decisions for each measure of one projection; `None` where the statistic failed.
fn decide_all(
    pipeline: &Pipeline<'_>,
    split: &Split,
    config: &ExperimentConfig,
    seed: u64,
) -> Vec<Option<Decision>> {
    let run = |measures: &[TestMeasure]| -> Result<Vec<Decision>> {
        let needed = union(measures);
        let observed = pipeline.evaluate(split, &needed)?;
        let null = null_sample(pipeline, split, &needed, config.iterations, config.refit, seed)?;
        measures
            .iter()
            .map(|t| {
                let idx: Vec<usize> =
                    t.components().iter().map(|m| needed.iter().position(|n| n == m).expect("in union")).collect();
                let model = fit_null(&columns(&null, &idx), config.alpha, config.combined)?;
                let obs: Vec<f64> = idx.iter().map(|&i| observed[i]).collect();
                decide(&model, &obs)
            })
            .collect()
    };
    match run(&config.measures) {
        Ok(d) => d.into_iter().map(Some).collect(),
        Err(e) => {
            // one failing measure should not take the others down with it
            log::debug!("joint evaluation failed ({e}); evaluating measures separately");
            config
                .measures
                .iter()
                .map(|&t| match run(&[t]) {
                    Ok(d) => Some(d[0]),
                    Err(e) => {
                        log::warn!("{t} failed: {e}");
                        None
                    }
                })
                .collect()
        }
    }
}

/// For each scenario and repetition: draw both samples, build the Gram matrix
/// once, and for every projection calibrate all measures on shared
/// permutations. Rates are reported per scenario, projection and measure.
pub fn type2_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.scenarios.len())
        .flat_map(|s| (0..config.repetitions).map(move |r| (s, r)))
        .collect();
    let decisions: Vec<Vec<Vec<Option<Decision>>>> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let scenario = &config.scenarios[s];
            let (s64, r64) = (s as u64, r as u64);
            let p = scenario.p.sample(config.n_per_group, config.dim, &mut substream(config.seed, &[s64, r64, 0]))?;
            let q = scenario.q.sample(config.n_per_group, config.dim, &mut substream(config.seed, &[s64, r64, 1]))?;
            let pooled = SampleSet::pooled(&p, &q)?;
            let gram = gram_matrix(&config.kernel.resolve(&pooled)?, &pooled)?;
            let split = Split::contiguous(config.n_per_group, config.n_per_group)?;
            config
                .projections
                .iter()
                .enumerate()
                .map(|(pi, &method)| {
                    let pipeline = Pipeline::new(&gram, &config.statistic(method))?;
                    let seed = derive_seed(config.seed, &[s64, r64, 2, pi as u64]);
                    Ok(decide_all(&pipeline, &split, config, seed))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (s, scenario) in config.scenarios.iter().enumerate() {
        let mine: Vec<&Vec<Vec<Option<Decision>>>> =
            jobs.iter().zip(&decisions).filter(|((js, _), _)| *js == s).map(|(_, d)| d).collect();
        for (pi, &projection) in config.projections.iter().enumerate() {
            for (mi, &measure) in config.measures.iter().enumerate() {
                let outcomes: Vec<Option<Decision>> = mine.iter().map(|d| d[pi][mi]).collect();
                let completed = outcomes.iter().filter(|o| o.is_some()).count();
                let rejections = outcomes.iter().filter(|o| **o == Some(Decision::RejectNull)).count();
                let error_kind = if scenario.is_null() { ErrorKind::TypeI } else { ErrorKind::TypeII };
                let errors = match error_kind {
                    ErrorKind::TypeI => rejections,
                    ErrorKind::TypeII => completed - rejections,
                };
                rows.push(ExperimentRow {
                    scenario: scenario.name.clone(),
                    projection,
                    measure,
                    error_kind,
                    completed,
                    failures: outcomes.len() - completed,
                    rejections,
                    error_percent: if completed > 0 { 100.0 * errors as f64 / completed as f64 } else { f64::NAN },
                });
            }
        }
    }
    Ok(ExperimentReport { config: config.clone(), rows })
}
