//! Two-sample measures on the Gram matrix and on projected samples.
//!
//! * MMD, both from the three double sums and as the squared gap between
//!   projected group means.
//! * Bhattacharyya kernel score `S = exp(-B) / 2` and divergence `1/2 - S`,
//!   from Gaussian fits to the projected groups.
//! * The general empirical kernel score `S = (1/n) sum_i C(p(x_i) / (p(x_i) + q(x_i)))`
//!   under a fitted one-dimensional density model, and `KD = 1/2 - S`.
//!
//! The Bhattacharyya score uses `exp(-B)`. With `B >= 0` this keeps `S` in
//! `(0, 1/2]` and the divergence non-negative.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::concave::ConcaveFn;
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, Group, Split};
use crate::projection::ProjectedSamples;

/// Negative MMD estimates down to `-MMD_CLAMP` are rounding noise and clamp to 0.
pub const MMD_CLAMP: f64 = 1e-12;
/// Slack allowed when clamping divergences into `[0, 1/2]`.
pub const KD_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Measure {
    Mmd,
    Kd,
    Bkd,
}

/// Mean and population variance of each projected group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedStats {
    pub mu_p: f64,
    pub mu_q: f64,
    pub var_p: f64,
    pub var_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DivergenceDetails {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<ProjectedStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceResult {
    pub measure: Measure,
    pub value: f64,
    pub details: DivergenceDetails,
}

fn group_sums(gram: &GramMatrix, split: &Split) -> (f64, f64, f64) {
    let (mut pp, mut pq, mut qq) = (0.0, 0.0, 0.0);
    let g = split.groups();
    for i in 0..gram.n() {
        for j in 0..gram.n() {
            let k = gram.get(i, j);
            match (g[i], g[j]) {
                (Group::P, Group::P) => pp += k,
                (Group::Q, Group::Q) => qq += k,
                (Group::P, Group::Q) => pq += k,
                (Group::Q, Group::P) => {}
            }
        }
    }
    (pp, pq, qq)
}

/// Biased MMD estimate for the first `n1` rows in P and the next `n2` in Q.
pub fn mmd_standard(gram: &GramMatrix, n1: usize, n2: usize) -> Result<f64> {
    mmd_standard_split(gram, &Split::contiguous(n1, n2)?)
}

pub fn mmd_standard_split(gram: &GramMatrix, split: &Split) -> Result<f64> {
    if split.len() != gram.n() {
        return Err(Error::DimensionMismatch { expected: gram.n(), got: split.len() });
    }
    let (pp, pq, qq) = group_sums(gram, split);
    let (n1, n2) = (split.n_p() as f64, split.n_q() as f64);
    let mmd = pp / (n1 * n1) - 2.0 * pq / (n1 * n2) + qq / (n2 * n2);
    Ok(if (-MMD_CLAMP..0.0).contains(&mmd) { 0.0 } else { mmd })
}

/// `(mu^p_P - mu^p_Q)^2`. Equals the MMD when `xp` uses the canonical
/// direction; for other directions it is the squared projected mean gap.
pub fn mmd_projected(xp: &ProjectedSamples) -> Result<f64> {
    let mp = xp.mean(Group::P).ok_or(Error::EmptyGroup("P"))?;
    let mq = xp.mean(Group::Q).ok_or(Error::EmptyGroup("Q"))?;
    Ok((mp - mq) * (mp - mq))
}

fn mean_var(values: impl Iterator<Item = f64>, name: &'static str) -> Result<(f64, f64)> {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        return Err(Error::EmptyGroup(name));
    }
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    Ok((mean, var))
}

/// Per-group mean and population (`1/n`) variance.
pub fn projected_moments(xp: &ProjectedSamples) -> Result<ProjectedStats> {
    let (mu_p, var_p) = mean_var(xp.values(Group::P), "P")?;
    let (mu_q, var_q) = mean_var(xp.values(Group::Q), "Q")?;
    Ok(ProjectedStats { mu_p, mu_q, var_p, var_q })
}

/// Bhattacharyya distance between `N(mu_p, var_p)` and `N(mu_q, var_q)`.
pub fn bhattacharyya_distance(stats: &ProjectedStats) -> Result<f64> {
    let ProjectedStats { mu_p, mu_q, var_p, var_q } = *stats;
    if !(var_p > 0.0) {
        log::warn!("zero projected variance in group P");
        return Err(Error::DegenerateDistribution("P"));
    }
    if !(var_q > 0.0) {
        log::warn!("zero projected variance in group Q");
        return Err(Error::DegenerateDistribution("Q"));
    }
    let ratio = 0.25 * (var_p / var_q + var_q / var_p + 2.0);
    let gap = mu_p - mu_q;
    let b = 0.25 * ratio.ln() + 0.25 * gap * gap / (var_p + var_q);
    if b.is_nan() {
        return Err(Error::NonFinite("Bhattacharyya distance"));
    }
    Ok(b.max(0.0))
}

pub fn bhattacharyya_kd(stats: &ProjectedStats) -> Result<DivergenceResult> {
    let b = bhattacharyya_distance(stats)?;
    let s = 0.5 * (-b).exp();
    Ok(DivergenceResult {
        measure: Measure::Bkd,
        value: 0.5 - s,
        details: DivergenceDetails { b: Some(b), s: Some(s), stats: Some(*stats) },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DensityKind {
    Gaussian,
    Histogram(usize),
}

impl fmt::Display for DensityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityKind::Gaussian => f.write_str("gaussian"),
            DensityKind::Histogram(b) => write!(f, "hist:{b}"),
        }
    }
}

impl FromStr for DensityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "gaussian" {
            return Ok(DensityKind::Gaussian);
        }
        match lower.strip_prefix("hist:").map(str::parse::<usize>) {
            Some(Ok(b)) if b >= 1 => Ok(DensityKind::Histogram(b)),
            _ => Err(Error::InvalidParameter(format!(
                "unknown density '{s}'; expected gaussian or hist:B with B >= 1"
            ))),
        }
    }
}

impl Serialize for DensityKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DensityKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Equal-width bins over `[lo, lo + width * count]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub lo: f64,
    pub width: f64,
    pub count: usize,
}

impl Bins {
    /// Spans the range of `values`; a constant sample gets one zero-width bin
    /// that everything falls into.
    pub fn spanning(values: impl Iterator<Item = f64>, count: usize) -> Self {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let width = if hi > lo { (hi - lo) / count as f64 } else { 0.0 };
        Self { lo, width, count }
    }

    pub fn index(&self, x: f64) -> usize {
        if !(self.width > 0.0) {
            return 0;
        }
        let b = ((x - self.lo) / self.width).floor();
        if b < 0.0 {
            0
        } else {
            (b as usize).min(self.count - 1)
        }
    }

    /// Normalized counts of `values`.
    pub fn probabilities(&self, values: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut counts = vec![0.0; self.count];
        let mut total = 0.0;
        for v in values {
            counts[self.index(v)] += 1.0;
            total += 1.0;
        }
        if total > 0.0 {
            counts.iter_mut().for_each(|c| *c /= total);
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian1D {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = x - self.mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.var).ln() - z * z / (2.0 * self.var)
    }
}

/// Per-group one-dimensional density models of the projected samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DensityModel {
    Gaussian { p: Gaussian1D, q: Gaussian1D },
    Histogram { bins: Bins, p: Vec<f64>, q: Vec<f64> },
}

pub fn fit_density(xp: &ProjectedSamples, kind: DensityKind) -> Result<DensityModel> {
    match kind {
        DensityKind::Gaussian => {
            let s = projected_moments(xp)?;
            if !(s.var_p > 0.0) {
                return Err(Error::DegenerateDistribution("P"));
            }
            if !(s.var_q > 0.0) {
                return Err(Error::DegenerateDistribution("Q"));
            }
            Ok(DensityModel::Gaussian {
                p: Gaussian1D { mean: s.mu_p, var: s.var_p },
                q: Gaussian1D { mean: s.mu_q, var: s.var_q },
            })
        }
        DensityKind::Histogram(count) => {
            if count == 0 {
                return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
            }
            if xp.mean(Group::P).is_none() {
                return Err(Error::EmptyGroup("P"));
            }
            if xp.mean(Group::Q).is_none() {
                return Err(Error::EmptyGroup("Q"));
            }
            let bins = Bins::spanning(xp.xp.iter().copied(), count);
            Ok(DensityModel::Histogram {
                bins,
                p: bins.probabilities(xp.values(Group::P)),
                q: bins.probabilities(xp.values(Group::Q)),
            })
        }
    }
}

/// What a point contributes when neither histogram has mass in its bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyBinRule {
    /// `C(1/2)`: no evidence either way.
    #[default]
    Uninformative,
    /// Drop the point from the average.
    Skip,
}

impl DensityModel {
    /// `p(x) / (p(x) + q(x))`, or `None` when both densities vanish.
    pub fn posterior(&self, x: f64) -> Option<f64> {
        match self {
            DensityModel::Gaussian { p, q } => {
                // logistic of the log-density ratio; exact even when both tails underflow
                let d = q.ln_pdf(x) - p.ln_pdf(x);
                Some(1.0 / (1.0 + d.exp()))
            }
            DensityModel::Histogram { bins, p, q } => {
                let b = bins.index(x);
                let total = p[b] + q[b];
                (total > 0.0).then(|| p[b] / total)
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        let ok = match self {
            DensityModel::Gaussian { p, q } => [p.mean, p.var, q.mean, q.var].iter().all(|v| v.is_finite()),
            DensityModel::Histogram { bins, p, q } => {
                bins.lo.is_finite() && bins.width.is_finite() && p.iter().chain(q).all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("density model"))
        }
    }
}

/// Empirical kernel score over the pooled projected points and the
/// corresponding divergence `KD = 1/2 - S`, clamped into `[0, 1/2]`.
pub fn kernel_score_empirical(
    xp: &ProjectedSamples,
    model: &DensityModel,
    c: &ConcaveFn,
) -> Result<DivergenceResult> {
    kernel_score_with_rule(xp, model, c, EmptyBinRule::default())
}

pub fn kernel_score_with_rule(
    xp: &ProjectedSamples,
    model: &DensityModel,
    c: &ConcaveFn,
    rule: EmptyBinRule,
) -> Result<DivergenceResult> {
    model.check_finite()?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for &x in &xp.xp {
        let eta = match (model.posterior(x), rule) {
            (Some(eta), _) => eta,
            (None, EmptyBinRule::Uninformative) => 0.5,
            (None, EmptyBinRule::Skip) => continue,
        };
        if eta.is_nan() {
            return Err(Error::NonFinite("density ratio"));
        }
        sum += c.eval_unchecked(eta.clamp(0.0, 1.0));
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidParameter("no projected point has density mass".into()));
    }
    let s = sum / count as f64;
    let kd = (0.5 - s).clamp(0.0, 0.5);
    Ok(DivergenceResult {
        measure: Measure::Kd,
        value: kd,
        details: DivergenceDetails { b: None, s: Some(s), stats: None },
    })
}
