//! Minimum-risk feature scoring and the noise-augmented selection harness.
//!
//! Each feature is scored by the minimum conditional risk of its two
//! class-conditional histograms under equal priors,
//! `R = sum_b (p_b + q_b) / 2 * C(p_b / (p_b + q_b))`, and features are ranked
//! by ascending risk.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concave::{ConcaveFn, ConcaveKind};
use crate::divergence::Bins;
use crate::error::{Error, Result};
use crate::kernel::{Group, SampleSet};
use crate::projection::svm::{solve_dual, SvmOptions};
use crate::rng::{derive_seed, substream};

pub const DEFAULT_BINS: usize = 10;

/// Risk of one feature. `degenerate` marks a constant feature, which gets the
/// uninformative risk of 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRisk {
    pub risk: f64,
    pub degenerate: bool,
}

/// `sum_b (p_b + q_b) / 2 * C(p_b / (p_b + q_b))` over bins where either
/// histogram has mass. Each histogram is normalized over its own class.
pub fn min_risk_from_histograms(p: &[f64], q: &[f64], c: &ConcaveFn) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: q.len() });
    }
    let mut risk = 0.0;
    for (&pb, &qb) in p.iter().zip(q) {
        let total = pb + qb;
        if total > 0.0 {
            risk += 0.5 * total * c.eval_unchecked(pb / total);
        }
    }
    if risk.is_nan() {
        return Err(Error::NonFinite("histogram"));
    }
    Ok(risk)
}

pub fn feature_min_risk(values_p: &[f64], values_q: &[f64], bins: usize, c: &ConcaveFn) -> Result<FeatureRisk> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    if values_p.is_empty() {
        return Err(Error::EmptyGroup("P"));
    }
    if values_q.is_empty() {
        return Err(Error::EmptyGroup("Q"));
    }
    let edges = Bins::spanning(values_p.iter().chain(values_q).copied(), bins);
    if !(edges.width > 0.0) {
        log::warn!("constant feature; assigning risk 1/2");
        return Ok(FeatureRisk { risk: 0.5, degenerate: true });
    }
    let p = edges.probabilities(values_p.iter().copied());
    let q = edges.probabilities(values_q.iter().copied());
    Ok(FeatureRisk { risk: min_risk_from_histograms(&p, &q, c)?, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: usize,
    pub risk: f64,
    /// 1 is the lowest risk.
    pub rank: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRiskReport {
    pub concave: ConcaveKind,
    pub bins: usize,
    /// In column order.
    pub features: Vec<RankedFeature>,
}

impl FeatureRiskReport {
    /// Column indices from best to worst.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.features.len()).collect();
        idx.sort_by_key(|&i| self.features[i].rank);
        idx
    }

    pub fn top(&self, k: usize) -> Vec<usize> {
        let mut idx = self.order();
        idx.truncate(k);
        idx
    }
}

fn labels(data: &SampleSet) -> Result<&[Group]> {
    data.groups()
        .ok_or_else(|| Error::InvalidParameter("feature ranking needs labeled samples".into()))
}

pub fn rank_features(data: &SampleSet, bins: usize, c: &ConcaveFn) -> Result<FeatureRiskReport> {
    let groups = labels(data)?;
    let risks = (0..data.d())
        .map(|j| {
            let (mut p, mut q) = (Vec::new(), Vec::new());
            for (i, g) in groups.iter().enumerate() {
                match g {
                    Group::P => p.push(data.get(i, j)),
                    Group::Q => q.push(data.get(i, j)),
                }
            }
            feature_min_risk(&p, &q, bins, c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..risks.len()).collect();
    // stable sort keeps column order among ties
    order.sort_by(|&a, &b| risks[a].risk.total_cmp(&risks[b].risk));
    let mut features: Vec<RankedFeature> = risks
        .iter()
        .enumerate()
        .map(|(feature, r)| RankedFeature { feature, risk: r.risk, rank: 0, degenerate: r.degenerate })
        .collect();
    for (pos, &j) in order.iter().enumerate() {
        features[j].rank = pos + 1;
    }
    Ok(FeatureRiskReport { concave: c.kind(), bins, features })
}

/// For each feature independently, `round(fraction * n)` uniformly chosen rows
/// get `x <- x + x * y * scale` with `y ~ N(0, 1)`.
pub fn add_noise(data: &SampleSet, scale: f64, fraction: f64, seed: u64) -> Result<SampleSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!("noise fraction must be in [0, 1], got {fraction}")));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise scale must be >= 0, got {scale}")));
    }
    let (n, d) = (data.n(), data.d());
    let mut out = data.data().to_vec();
    let hits = (fraction * n as f64).round() as usize;
    if scale > 0.0 && hits > 0 {
        for j in 0..d {
            let mut rng = substream(seed, &[j as u64]);
            for i in rand::seq::index::sample(&mut rng, n, hits) {
                let y: f64 = StandardNormal.sample(&mut rng);
                out[i * d + j] += out[i * d + j] * y * scale;
            }
        }
    }
    let noisy = SampleSet::new(out, n, d)?;
    match data.groups() {
        Some(g) => noisy.with_groups(g.to_vec()),
        None => Ok(noisy),
    }
}

/// Columns of `a` followed by columns of `b`.
pub fn hstack(a: &SampleSet, b: &SampleSet) -> Result<SampleSet> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch { expected: a.n(), got: b.n() });
    }
    let mut data = Vec::with_capacity(a.n() * (a.d() + b.d()));
    for i in 0..a.n() {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    let out = SampleSet::new(data, a.n(), a.d() + b.d())?;
    match a.groups() {
        Some(g) => out.with_groups(g.to_vec()),
        None => Ok(out),
    }
}

/// Linear soft-margin SVM on standardized features, solved with the same
/// dual solver as the kernel projections.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    rho: f64,
}

impl LinearClassifier {
    pub fn fit(train: &SampleSet, opts: &SvmOptions) -> Result<Self> {
        let groups = labels(train)?;
        let (n, d) = (train.n(), train.d());
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for j in 0..d {
            let col = train.column(j);
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            mean[j] = m;
            scale[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        let z = DMatrix::from_fn(n, d, |i, j| (train.get(i, j) - mean[j]) / scale[j]);
        let gram = &z * z.transpose();
        let y: Vec<f64> = groups.iter().map(|g| if *g == Group::P { 1.0 } else { -1.0 }).collect();
        let sol = solve_dual(&gram, &y, opts)?;
        let coef = sol.signed(&y);
        let w = (0..d).map(|j| (0..n).map(|i| coef[i] * z[(i, j)]).sum()).collect();
        Ok(Self { mean, scale, w, rho: sol.rho })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.w)
            .enumerate()
            .map(|(j, (v, w))| w * (v - self.mean[j]) / self.scale[j])
            .sum::<f64>()
            - self.rho
    }

    pub fn predict(&self, x: &[f64]) -> Group {
        if self.decision(x) > 0.0 {
            Group::P
        } else {
            Group::Q
        }
    }

    /// Fraction of misclassified rows.
    pub fn error(&self, test: &SampleSet) -> Result<f64> {
        let groups = labels(test)?;
        let wrong = (0..test.n()).filter(|&i| self.predict(test.row(i)) != groups[i]).count();
        Ok(wrong as f64 / test.n() as f64)
    }
}

/// Ranks with ties sharing the mean of the positions they span (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub folds: usize,
    /// Evaluate only the first `fold_limit` folds (smoke runs).
    pub fold_limit: Option<usize>,
    pub repetitions: usize,
    pub scales: Vec<f64>,
    pub fractions: Vec<f64>,
    pub percents: Vec<f64>,
    pub concave: Vec<ConcaveKind>,
    pub bins: usize,
    /// Append a noisy copy of every feature; otherwise replace the features.
    pub augment: bool,
    pub svm: SvmOptions,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            fold_limit: None,
            repetitions: 25,
            scales: vec![0.1, 0.3],
            fractions: vec![0.25, 0.5, 0.75],
            percents: vec![0.05, 0.10],
            concave: vec![
                ConcaveKind::Poly(4),
                ConcaveKind::Poly(2),
                ConcaveKind::Ls,
                ConcaveKind::Log,
                ConcaveKind::Exp,
            ],
            bins: DEFAULT_BINS,
            augment: true,
            svm: SvmOptions::default(),
            seed: 0x5EED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCell {
    pub repetition: usize,
    pub scale: f64,
    pub fraction: f64,
    pub percent: f64,
    pub selected: usize,
    pub concave: ConcaveKind,
    /// Test error averaged over folds.
    pub error: f64,
    /// Rank among the concave functions in this cell; 1 is the smallest error.
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub concave: ConcaveKind,
    pub average_rank: f64,
    pub average_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub config: SelectionConfig,
    pub methods: Vec<MethodRank>,
    pub cells: Vec<SelectionCell>,
}

impl SelectionReport {
    pub fn average_rank(&self, kind: ConcaveKind) -> Option<f64> {
        self.methods.iter().find(|m| m.concave == kind).map(|m| m.average_rank)
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
fn assign_folds(groups: &[Group], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, &[]);
    let mut fold = vec![0; groups.len()];
    for g in [Group::P, Group::Q] {
        let mut idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % folds;
        }
    }
    fold
}

fn check_selection(data: &SampleSet, config: &SelectionConfig) -> Result<()> {
    let groups = labels(data)?;
    if config.folds < 2 {
        return Err(Error::FoldTooSmall(format!("need at least 2 folds, got {}", config.folds)));
    }
    for g in [Group::P, Group::Q] {
        let count = groups.iter().filter(|&&x| x == g).count();
        if count < config.folds {
            return Err(Error::FoldTooSmall(format!(
                "group {} has {count} samples for {} folds",
                g.name(),
                config.folds
            )));
        }
    }
    if config.concave.is_empty() || config.percents.is_empty() || config.repetitions == 0 {
        return Err(Error::InvalidParameter("selection needs concave functions, percents and repetitions".into()));
    }
    if let Some(p) = config.percents.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidParameter(format!("selection percent must be in (0, 1], got {p}")));
    }
    if config.bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {}", config.bins)));
    }
    Ok(())
}

/// Number of features kept for a percentage of `d`.
pub fn selected_count(percent: f64, d: usize) -> usize {
    ((percent * d as f64 - 1e-9).ceil() as usize).clamp(1, d)
}

/// Test errors averaged over folds, indexed `[percent][concave]`.
fn fold_errors(
    data: &SampleSet,
    fold: &[usize],
    concave: &[ConcaveFn],
    config: &SelectionConfig,
) -> Result<Vec<Vec<f64>>> {
    let n_folds = config.fold_limit.unwrap_or(config.folds).clamp(1, config.folds);
    let mut sums = vec![vec![0.0; concave.len()]; config.percents.len()];
    for f in 0..n_folds {
        let train_idx: Vec<usize> = (0..data.n()).filter(|&i| fold[i] != f).collect();
        let test_idx: Vec<usize> = (0..data.n()).filter(|&i| fold[i] == f).collect();
        let train = data.select_rows(&train_idx)?;
        let test = data.select_rows(&test_idx)?;
        let reports = concave
            .iter()
            .map(|c| rank_features(&train, config.bins, c))
            .collect::<Result<Vec<_>>>()?;
        for (pi, &pct) in config.percents.iter().enumerate() {
            let k = selected_count(pct, data.d());
            let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
            for (ci, report) in reports.iter().enumerate() {
                let mut cols = report.top(k);
                cols.sort_unstable();
                let err = match cache.get(&cols) {
                    Some(&e) => e,
                    None => {
                        let clf = LinearClassifier::fit(&train.select_columns(&cols)?, &config.svm)?;
                        let e = clf.error(&test.select_columns(&cols)?)?;
                        cache.insert(cols, e);
                        e
                    }
                };
                sums[pi][ci] += err;
            }
        }
    }
    for row in &mut sums {
        row.iter_mut().for_each(|e| *e /= n_folds as f64);
    }
    Ok(sums)
}

/// Noise-augmented feature selection comparison of concave functions.
///
/// For every repetition and noise setting the data is noise-augmented, split
/// into stratified folds, features are ranked on each training fold and the
/// top percentages train a linear SVM. Fold-averaged test errors are ranked
/// across the concave functions (ties share the average rank) and the ranks
/// are averaged over percents, noise settings and repetitions.
pub fn selection_experiment(data: &SampleSet, config: &SelectionConfig) -> Result<SelectionReport> {
    check_selection(data, config)?;
    let concave = config
        .concave
        .iter()
        .map(|&k| ConcaveFn::new(k))
        .collect::<Result<Vec<_>>>()?;
    let settings: Vec<(f64, f64)> = if config.scales.is_empty() || config.fractions.is_empty() {
        vec![(0.0, 0.0)]
    } else {
        config
            .scales
            .iter()
            .flat_map(|&s| config.fractions.iter().map(move |&f| (s, f)))
            .collect()
    };
    let jobs: Vec<(usize, usize)> = (0..config.repetitions)
        .flat_map(|r| (0..settings.len()).map(move |s| (r, s)))
        .collect();
    let groups = labels(data)?;

    let results = jobs
        .par_iter()
        .map(|&(rep, si)| {
            let (scale, fraction) = settings[si];
            let fold = assign_folds(groups, config.folds, derive_seed(config.seed, &[rep as u64, 0]));
            let noisy = add_noise(data, scale, fraction, derive_seed(config.seed, &[rep as u64, 1, si as u64]))?;
            let work = if config.augment { hstack(data, &noisy)? } else { noisy };
            let errors = fold_errors(&work, &fold, &concave, config)?;
            let mut cells = Vec::new();
            for (pi, &percent) in config.percents.iter().enumerate() {
                let ranks = average_ranks(&errors[pi]);
                for (ci, c) in concave.iter().enumerate() {
                    cells.push(SelectionCell {
                        repetition: rep,
                        scale,
                        fraction,
                        percent,
                        selected: selected_count(percent, work.d()),
                        concave: c.kind(),
                        error: errors[pi][ci],
                        rank: ranks[ci],
                    });
                }
            }
            Ok(cells)
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<SelectionCell> = results.into_iter().flatten().collect();

    let methods = config
        .concave
        .iter()
        .map(|&kind| {
            let mine: Vec<&SelectionCell> = cells.iter().filter(|c| c.concave == kind).collect();
            let m = mine.len() as f64;
            MethodRank {
                concave: kind,
                average_rank: mine.iter().map(|c| c.rank).sum::<f64>() / m,
                average_error: mine.iter().map(|c| c.error).sum::<f64>() / m,
            }
        })
        .collect();
    Ok(SelectionReport { config: config.clone(), methods, cells })
}

/// Method x dataset summary of several selection runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub datasets: Vec<String>,
    pub methods: Vec<ConcaveKind>,
    /// `average_rank[dataset][method]`.
    pub average_rank: Vec<Vec<f64>>,
    /// Datasets on which the method has the best average rank (ties all count).
    pub wins: Vec<usize>,
    /// Rank of each method's average rank within a dataset, averaged over datasets.
    pub rank: Vec<f64>,
}

pub fn rank_table(runs: &[(String, SelectionReport)]) -> Result<RankTable> {
    let first = runs.first().ok_or_else(|| Error::InvalidParameter("no selection runs".into()))?;
    let methods: Vec<ConcaveKind> = first.1.methods.iter().map(|m| m.concave).collect();
    let mut average_rank = Vec::new();
    let mut wins = vec![0; methods.len()];
    let mut rank = vec![0.0; methods.len()];
    for (_, report) in runs {
        let row = methods
            .iter()
            .map(|&k| {
                report
                    .average_rank(k)
                    .ok_or_else(|| Error::InvalidParameter(format!("run is missing method {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let best = row.iter().copied().fold(f64::INFINITY, f64::min);
        for (i, r) in average_ranks(&row).into_iter().enumerate() {
            rank[i] += r / runs.len() as f64;
            if row[i] == best {
                wins[i] += 1;
            }
        }
        average_rank.push(row);
    }
    Ok(RankTable { datasets: runs.iter().map(|(n, _)| n.clone()).collect(), methods, average_rank, wins, rank })
}

/// Synthetic two-class data for the selection harness.
///
/// * `shift` features: P ~ N(shift, 1), Q ~ N(0, 1).
/// * `decoy` features: a fixed random subset of P rows (shared by all decoy
///   columns) sits at N(decoy_center, decoy_spread^2); all other entries are
///   N(0, 1). They carry pure bins but little usable signal.
/// * `noise` features: N(0, 1) for both classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoyDesign {
    pub n_per_class: usize,
    pub shift_features: usize,
    pub shift: f64,
    pub decoy_features: usize,
    pub decoy_fraction: f64,
    pub decoy_center: f64,
    pub decoy_spread: f64,
    pub noise_features: usize,
}

impl Default for DecoyDesign {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            shift_features: 5,
            shift: 1.0,
            decoy_features: 5,
            decoy_fraction: 0.3,
            decoy_center: 6.0,
            decoy_spread: 0.3,
            noise_features: 90,
        }
    }
}

impl DecoyDesign {
    pub fn d(&self) -> usize {
        self.shift_features + self.decoy_features + self.noise_features
    }

    /// Rows `0..n_per_class` are P, the rest Q.
    pub fn generate(&self, seed: u64) -> Result<SampleSet> {
        let (n, d) = (self.n_per_class, self.d());
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter("decoy design needs samples and features".into()));
        }
        let decoy = Normal::new(self.decoy_center, self.decoy_spread)
            .map_err(|e| Error::InvalidParameter(format!("decoy spread: {e}")))?;
        let mut rng = substream(seed, &[0]);
        let tail_rows = (self.decoy_fraction * n as f64).round() as usize;
        let tail: Vec<usize> = rand::seq::index::sample(&mut rng, n, tail_rows.min(n)).into_vec();
        let mut in_tail = vec![false; n];
        tail.iter().for_each(|&i| in_tail[i] = true);

        let mut data = vec![0.0; 2 * n * d];
        for j in 0..d {
            let mut rng = substream(seed, &[1, j as u64]);
            for i in 0..2 * n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let is_p = i < n;
                data[i * d + j] = if j < self.shift_features {
                    z + if is_p { self.shift } else { 0.0 }
                } else if j < self.shift_features + self.decoy_features && is_p && in_tail[i] {
                    decoy.sample(&mut rng)
                } else {
                    z
                };
            }
        }
        let mut groups = vec![Group::P; n];
        groups.extend(std::iter::repeat_n(Group::Q, n));
        SampleSet::new(data, 2 * n, d)?.with_groups(groups)
    }
}
