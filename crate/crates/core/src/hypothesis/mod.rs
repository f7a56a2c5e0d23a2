//! Permutation-calibrated two-sample tests.
//!
//! The null distribution of a statistic vector is sampled by permuting the
//! group labels of the pooled sample and re-running the whole pipeline,
//! projection fit included. Scalar statistics are compared against an upper
//! order statistic; vector statistics use a one-class nearest-neighbour
//! acceptance region under a standardized infinity norm.

pub mod experiment;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concave::{ConcaveFn, ConcaveKind};
use crate::divergence::{
    bhattacharyya_kd, fit_density, kernel_score_with_rule, mmd_projected, projected_moments, DensityKind,
    EmptyBinRule, Measure,
};
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, Split};
use crate::projection::{project_with_weights, ProjectedSamples, ProjectionConfig, ProjectionMethod, Projector};
use crate::rng::substream;

pub use experiment::{type2_experiment, ExperimentConfig, ExperimentReport, ExperimentRow, GaussianSpec, Scenario};

/// Attempts per bootstrap iteration before giving up.
pub const MAX_ATTEMPTS: usize = 10;
/// Smallest null sample accepted by the nearest-neighbour model.
pub const MIN_NN_POINTS: usize = 10;

/// A test statistic: one measure or a pair combined through a one-class model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestMeasure {
    Mmd,
    Kd,
    Bkd,
    MmdKd,
    MmdBkd,
}

impl TestMeasure {
    pub const ALL: [TestMeasure; 5] =
        [TestMeasure::Mmd, TestMeasure::Kd, TestMeasure::Bkd, TestMeasure::MmdKd, TestMeasure::MmdBkd];

    pub fn components(self) -> &'static [Measure] {
        match self {
            TestMeasure::Mmd => &[Measure::Mmd],
            TestMeasure::Kd => &[Measure::Kd],
            TestMeasure::Bkd => &[Measure::Bkd],
            TestMeasure::MmdKd => &[Measure::Mmd, Measure::Kd],
            TestMeasure::MmdBkd => &[Measure::Mmd, Measure::Bkd],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestMeasure::Mmd => "mmd",
            TestMeasure::Kd => "kd",
            TestMeasure::Bkd => "bkd",
            TestMeasure::MmdKd => "mmd+kd",
            TestMeasure::MmdBkd => "mmd+bkd",
        }
    }
}

impl fmt::Display for TestMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|m| m.name() == t).ok_or_else(|| {
            Error::InvalidParameter(format!("unknown measure '{s}'; expected one of mmd, kd, bkd, mmd+kd, mmd+bkd"))
        })
    }
}

impl Serialize for TestMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TestMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn measure_name(m: Measure) -> &'static str {
    match m {
        Measure::Mmd => "MMD",
        Measure::Kd => "KD",
        Measure::Bkd => "BKD",
    }
}

/// Everything that turns a labeled split of the Gram matrix into measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticConfig {
    pub projection: ProjectionConfig,
    pub concave: ConcaveKind,
    pub density: DensityKind,
    #[serde(default)]
    pub empty_bin: EmptyBinRule,
}

impl StatisticConfig {
    pub fn new(method: ProjectionMethod) -> Self {
        Self {
            projection: ProjectionConfig::new(method),
            concave: ConcaveKind::Poly(4),
            density: DensityKind::Gaussian,
            empty_bin: EmptyBinRule::default(),
        }
    }
}

/// Projection plus measures against one fixed Gram matrix.
pub struct Pipeline<'g> {
    projector: Projector<'g>,
    concave: ConcaveFn,
    density: DensityKind,
    empty_bin: EmptyBinRule,
}

impl<'g> Pipeline<'g> {
    pub fn new(gram: &'g GramMatrix, config: &StatisticConfig) -> Result<Self> {
        Ok(Self {
            projector: Projector::new(gram, config.projection),
            concave: ConcaveFn::new(config.concave)?,
            density: config.density,
            empty_bin: config.empty_bin,
        })
    }

    pub fn projector(&self) -> &Projector<'g> {
        &self.projector
    }

    pub fn project(&self, split: &Split) -> Result<ProjectedSamples> {
        self.projector.project(split)
    }

    pub fn measure(&self, xp: &ProjectedSamples, m: Measure) -> Result<f64> {
        match m {
            Measure::Mmd => mmd_projected(xp),
            Measure::Bkd => Ok(bhattacharyya_kd(&projected_moments(xp)?)?.value),
            Measure::Kd => {
                let model = fit_density(xp, self.density)?;
                Ok(kernel_score_with_rule(xp, &model, &self.concave, self.empty_bin)?.value)
            }
        }
    }

    pub fn measures(&self, xp: &ProjectedSamples, which: &[Measure]) -> Result<Vec<f64>> {
        which.iter().map(|&m| self.measure(xp, m)).collect()
    }

    /// Fits the direction on `split`, projects and evaluates `which`.
    pub fn evaluate(&self, split: &Split, which: &[Measure]) -> Result<Vec<f64>> {
        self.measures(&self.project(split)?, which)
    }

    /// Statistic whose direction is fitted once on `observed` and then reused
    /// for every relabeling.
    pub fn frozen(&self, observed: &Split) -> Result<FrozenStatistic<'_, 'g>> {
        let w = self.projector.fit(observed)?;
        let xp = project_with_weights(self.projector.gram(), &w, observed)?;
        Ok(FrozenStatistic { pipeline: self, xp })
    }
}

pub struct FrozenStatistic<'p, 'g> {
    pipeline: &'p Pipeline<'g>,
    xp: ProjectedSamples,
}

impl FrozenStatistic<'_, '_> {
    pub fn evaluate(&self, split: &Split, which: &[Measure]) -> Result<Vec<f64>> {
        self.pipeline.measures(&self.xp.relabeled(split)?, which)
    }
}

/// Draws `iterations` random relabelings of `n1 + n2` pooled samples (first
/// `n1` of each permutation in P) and evaluates `stat` on each.
///
/// An iteration whose statistic fails is retried with a fresh permutation,
/// at most [`MAX_ATTEMPTS`] times. Iteration `i`, attempt `a` always uses
/// substream `(seed, i, a)`, so results do not depend on scheduling.
pub fn bootstrap_null<F>(n1: usize, n2: usize, iterations: usize, seed: u64, stat: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&Split) -> Result<Vec<f64>> + Sync,
{
    if iterations == 0 {
        return Err(Error::InvalidParameter("bootstrap needs at least one iteration".into()));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyGroup(if n1 == 0 { "P" } else { "Q" }));
    }
    let n = n1 + n2;
    (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = substream(seed, &[i as u64, attempt as u64]);
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                match stat(&Split::from_permutation(&order, n1)?) {
                    Ok(v) => return Ok(v),
                    Err(e) => {
                        log::debug!("bootstrap iteration {i} attempt {attempt} failed: {e}");
                        last = Some(e);
                    }
                }
            }
            Err(Error::BootstrapExhausted {
                failures: MAX_ATTEMPTS,
                last: Box::new(last.expect("at least one attempt ran")),
            })
        })
        .collect()
}

/// How vector statistics are calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinedNull {
    /// One-class nearest neighbour under the standardized infinity norm.
    #[default]
    NearestNeighbor,
    /// Per-component upper thresholds at level `alpha / m`; reject if any is exceeded.
    AxisBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NullKind {
    Quantile { threshold: f64 },
    OneClassNn { points: Vec<Vec<f64>>, scale: Vec<f64>, radius: f64 },
    AxisBox { thresholds: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub kind: NullKind,
    pub alpha: f64,
    /// Size of the null sample the model was fitted on.
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl NullModel {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            NullKind::Quantile { .. } => 1,
            NullKind::OneClassNn { scale, .. } => scale.len(),
            NullKind::AxisBox { thresholds } => thresholds.len(),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

/// 1-based rank `ceil((1 - alpha) * b)`, kept in `1..=b`.
fn upper_rank(alpha: f64, b: usize) -> usize {
    (((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize).clamp(1, b)
}

fn order_statistic(values: &[f64], alpha: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted[upper_rank(alpha, sorted.len()) - 1]
}

/// Threshold at the `ceil((1 - alpha) B)`-th smallest null value.
pub fn threshold_quantile(null_stats: &[f64], alpha: f64) -> Result<NullModel> {
    check_alpha(alpha)?;
    if null_stats.is_empty() {
        return Err(Error::InvalidParameter("empty null sample".into()));
    }
    if null_stats.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("null statistics"));
    }
    Ok(NullModel {
        kind: NullKind::Quantile { threshold: order_statistic(null_stats, alpha) },
        alpha,
        iterations: null_stats.len(),
        seed: None,
    })
}

fn check_vectors(null_vectors: &[Vec<f64>]) -> Result<usize> {
    let m = null_vectors.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(Error::InvalidParameter("null vectors must have at least one component".into()));
    }
    for v in null_vectors {
        if v.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("null statistics"));
        }
    }
    Ok(m)
}

fn scaled_linf(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    a.iter().zip(b).zip(scale).map(|((x, y), s)| (x - y).abs() / s).fold(0.0, f64::max)
}

pub fn fit_oneclass_nn(null_vectors: &[Vec<f64>], alpha: f64) -> Result<NullModel> {
    check_alpha(alpha)?;
    if null_vectors.len() < MIN_NN_POINTS {
        return Err(Error::InvalidParameter(format!(
            "one-class model needs at least {MIN_NN_POINTS} null vectors, got {}",
            null_vectors.len()
        )));
    }
    let m = check_vectors(null_vectors)?;
    let b = null_vectors.len() as f64;
    let scale: Vec<f64> = (0..m)
        .map(|k| {
            let first = null_vectors[0][k];
            let mean = null_vectors.iter().map(|v| v[k]).sum::<f64>() / b;
            let sd = (null_vectors.iter().map(|v| (v[k] - mean) * (v[k] - mean)).sum::<f64>() / b).sqrt();
            if sd > 0.0 && null_vectors.iter().any(|v| v[k] != first) {
                sd
            } else {
                log::warn!("null component {k} has zero spread; using unit scale");
                1.0
            }
        })
        .collect();
    let loo: Vec<f64> = (0..null_vectors.len())
        .map(|i| {
            null_vectors
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| scaled_linf(&null_vectors[i], v, &scale))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(NullModel {
        kind: NullKind::OneClassNn { points: null_vectors.to_vec(), scale, radius: order_statistic(&loo, alpha) },
        alpha,
        iterations: null_vectors.len(),
        seed: None,
    })
}

pub fn fit_axis_box(null_vectors: &[Vec<f64>], alpha: f64) -> Result<NullModel> {
    check_alpha(alpha)?;
    if null_vectors.is_empty() {
        return Err(Error::InvalidParameter("empty null sample".into()));
    }
    let m = check_vectors(null_vectors)?;
    let level = alpha / m as f64;
    let thresholds = (0..m)
        .map(|k| order_statistic(&null_vectors.iter().map(|v| v[k]).collect::<Vec<_>>(), level))
        .collect();
    Ok(NullModel { kind: NullKind::AxisBox { thresholds }, alpha, iterations: null_vectors.len(), seed: None })
}

/// Quantile model for one component, otherwise the configured combined model.
pub fn fit_null(null_vectors: &[Vec<f64>], alpha: f64, combined: CombinedNull) -> Result<NullModel> {
    match check_vectors(null_vectors)? {
        1 => threshold_quantile(&null_vectors.iter().map(|v| v[0]).collect::<Vec<_>>(), alpha),
        _ => match combined {
            CombinedNull::NearestNeighbor => fit_oneclass_nn(null_vectors, alpha),
            CombinedNull::AxisBox => fit_axis_box(null_vectors, alpha),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RejectNull,
    FailToReject,
}

/// Distance of `observed` to the nearest stored null vector.
pub fn nn_distance(points: &[Vec<f64>], scale: &[f64], observed: &[f64]) -> f64 {
    points.iter().map(|p| scaled_linf(observed, p, scale)).fold(f64::INFINITY, f64::min)
}

pub fn decide(model: &NullModel, observed: &[f64]) -> Result<Decision> {
    if observed.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: observed.len() });
    }
    if observed.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observed statistic"));
    }
    let reject = match &model.kind {
        NullKind::Quantile { threshold } => observed[0] > *threshold,
        NullKind::OneClassNn { points, scale, radius } => nn_distance(points, scale, observed) > *radius,
        NullKind::AxisBox { thresholds } => observed.iter().zip(thresholds).any(|(o, t)| o > t),
    };
    Ok(if reject { Decision::RejectNull } else { Decision::FailToReject })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub value: f64,
}

/// Settings for one calibrated test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub statistic: StatisticConfig,
    pub measure: TestMeasure,
    pub alpha: f64,
    pub iterations: usize,
    /// Refit the projection inside every permutation; otherwise reuse the
    /// direction fitted on the observed split.
    pub refit: bool,
    pub combined: CombinedNull,
    pub seed: u64,
}

impl TestConfig {
    pub fn new(method: ProjectionMethod, measure: TestMeasure) -> Self {
        Self {
            statistic: StatisticConfig::new(method),
            measure,
            alpha: 0.05,
            iterations: 100,
            refit: true,
            combined: CombinedNull::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub measure: TestMeasure,
    pub projection: ProjectionMethod,
    pub statistic: Vec<Component>,
    pub decision: Decision,
    pub alpha: f64,
    pub null_model: NullModel,
    pub seed: u64,
}

impl TestReport {
    /// Re-derives the decision from the stored model and statistic.
    pub fn recheck(&self) -> Result<Decision> {
        let observed: Vec<f64> = self.statistic.iter().map(|c| c.value).collect();
        decide(&self.null_model, &observed)
    }
}

/// Null statistic vectors for `which` under the configured refit policy.
pub fn null_sample(
    pipeline: &Pipeline<'_>,
    observed: &Split,
    which: &[Measure],
    iterations: usize,
    refit: bool,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (n1, n2) = (observed.n_p(), observed.n_q());
    if refit {
        bootstrap_null(n1, n2, iterations, seed, |s| pipeline.evaluate(s, which))
    } else {
        let frozen = pipeline.frozen(observed)?;
        bootstrap_null(n1, n2, iterations, seed, |s| frozen.evaluate(s, which))
    }
}

/// Evaluates the observed statistic, calibrates it by permutation and decides.
pub fn run_test(gram: &GramMatrix, observed: &Split, config: &TestConfig) -> Result<TestReport> {
    check_alpha(config.alpha)?;
    let pipeline = Pipeline::new(gram, &config.statistic)?;
    let which = config.measure.components();
    let values = pipeline.evaluate(observed, which)?;
    let null = null_sample(&pipeline, observed, which, config.iterations, config.refit, config.seed)?;
    let model = fit_null(&null, config.alpha, config.combined)?.with_seed(config.seed);
    let decision = decide(&model, &values)?;
    Ok(TestReport {
        measure: config.measure,
        projection: config.statistic.projection.method,
        statistic: which
            .iter()
            .zip(&values)
            .map(|(&m, &value)| Component { name: measure_name(m).to_string(), value })
            .collect(),
        decision,
        alpha: config.alpha,
        null_model: model,
        seed: config.seed,
    })
}
