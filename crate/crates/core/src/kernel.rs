//! Kernels, sample sets and Gram matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(-|x-y|_2^2 / (2 sigma^2))`
    Gaussian,
    /// `exp(-|x-y|_1 / sigma)`
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    pub fn laplace(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplace, bandwidth)
    }

    // No validation: callers have already checked dimensions and finiteness.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
            KernelFamily::Laplace => {
                let d1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-d1 / self.bandwidth).exp()
            }
        }
    }
}

/// Sample membership: drawn from P or from Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    P,
    Q,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::P => "P",
            Group::Q => "Q",
        }
    }
}

/// An `n x d` matrix of observations stored row-major, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Vec<f64>,
    n: usize,
    d: usize,
    groups: Option<Vec<Group>>,
}

impl SampleSet {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "sample set must have n >= 1 and d >= 1 (got {n} x {d})"
            )));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample set"));
        }
        Ok(Self { data, n, d, groups: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, rows.len(), d)
    }

    pub fn with_groups(mut self, groups: Vec<Group>) -> Result<Self> {
        if groups.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: groups.len() });
        }
        self.groups = Some(groups);
        Ok(self)
    }

    /// Stacks `p` on top of `q` and labels the rows accordingly.
    pub fn pooled(p: &SampleSet, q: &SampleSet) -> Result<Self> {
        if p.d != q.d {
            return Err(Error::DimensionMismatch { expected: p.d, got: q.d });
        }
        let mut data = Vec::with_capacity(p.data.len() + q.data.len());
        data.extend_from_slice(&p.data);
        data.extend_from_slice(&q.data);
        let mut groups = vec![Group::P; p.n];
        groups.extend(std::iter::repeat_n(Group::Q, q.n));
        Self::new(data, p.n + q.n, p.d)?.with_groups(groups)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn groups(&self) -> Option<&[Group]> {
        self.groups.as_deref()
    }

    /// New sample set holding the given rows (labels carried along).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            if i >= self.n {
                return Err(Error::IndexOutOfRange { index: i, len: self.n });
            }
            data.extend_from_slice(self.row(i));
        }
        let out = Self::new(data, idx.len(), self.d)?;
        match &self.groups {
            Some(g) => out.with_groups(idx.iter().map(|&i| g[i]).collect()),
            None => Ok(out),
        }
    }

    /// New sample set holding the given columns (labels carried along).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.d) {
            return Err(Error::IndexOutOfRange { index: bad, len: self.d });
        }
        let mut data = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            data.extend(cols.iter().map(|&c| self.get(i, c)));
        }
        let out = Self::new(data, self.n, cols.len())?;
        match &self.groups {
            Some(g) => out.with_groups(g.clone()),
            None => Ok(out),
        }
    }
}

/// Assignment of each pooled sample to P or Q.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    groups: Vec<Group>,
    n_p: usize,
    n_q: usize,
}

impl Split {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        let n_p = groups.iter().filter(|&&g| g == Group::P).count();
        let n_q = groups.len() - n_p;
        if n_p == 0 {
            return Err(Error::EmptyGroup("P"));
        }
        if n_q == 0 {
            return Err(Error::EmptyGroup("Q"));
        }
        Ok(Self { groups, n_p, n_q })
    }

    /// First `n1` samples in P, the remaining `n2` in Q.
    pub fn contiguous(n1: usize, n2: usize) -> Result<Self> {
        let mut groups = vec![Group::P; n1];
        groups.extend(std::iter::repeat_n(Group::Q, n2));
        Self::new(groups)
    }

    /// Labels from a permutation: `order[..n1]` go to P, the rest to Q.
    pub fn from_permutation(order: &[usize], n1: usize) -> Result<Self> {
        let mut groups = vec![Group::Q; order.len()];
        for &i in &order[..n1.min(order.len())] {
            groups[i] = Group::P;
        }
        Self::new(groups)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn count(&self, g: Group) -> usize {
        match g {
            Group::P => self.n_p,
            Group::Q => self.n_q,
        }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, i: usize) -> Group {
        self.groups[i]
    }

    pub fn indices(&self, g: Group) -> Vec<usize> {
        (0..self.groups.len()).filter(|&i| self.groups[i] == g).collect()
    }
}

/// Dense symmetric matrix of kernel evaluations over a pooled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    spec: KernelSpec,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }
}

fn check_vector(x: &[f64], what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Evaluates `k(x, y)`.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if !(spec.bandwidth.is_finite() && spec.bandwidth > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth {}", spec.bandwidth)));
    }
    check_vector(x, "kernel argument x")?;
    check_vector(y, "kernel argument y")?;
    Ok(spec.eval_unchecked(x, y))
}

/// Gram matrix over all rows of `s`. The upper triangle is computed and
/// mirrored, so the result is exactly symmetric.
pub fn gram_matrix(spec: &KernelSpec, s: &SampleSet) -> Result<GramMatrix> {
    if !(spec.bandwidth.is_finite() && spec.bandwidth > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth {}", spec.bandwidth)));
    }
    let n = s.n();
    let mut values = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let xi = s.row(i);
        values[(i, i)] = spec.eval_unchecked(xi, xi);
        for j in (i + 1)..n {
            let k = spec.eval_unchecked(xi, s.row(j));
            values[(i, j)] = k;
            values[(j, i)] = k;
        }
    }
    Ok(GramMatrix { values, spec: *spec })
}

/// Median of the pairwise Euclidean distances of the pooled sample.
pub fn median_heuristic(pooled: &SampleSet) -> Result<f64> {
    let n = pooled.n();
    if n < 2 {
        return Err(Error::InvalidParameter("median heuristic needs at least 2 rows".into()));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = pooled.row(i);
        for j in (i + 1)..n {
            let d2: f64 = xi.iter().zip(pooled.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateSample);
    }
    dists.sort_unstable_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if med > 0.0 {
        Ok(med)
    } else {
        // More than half the pairs coincide; the median would be a zero bandwidth.
        Err(Error::DegenerateSample)
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "laplace" => Ok(KernelFamily::Laplace),
            _ => Err(Error::InvalidParameter(format!("unknown kernel '{s}'; expected gaussian or laplace"))),
        }
    }
}

/// Kernel bandwidth: fixed, or the median pairwise distance of the pooled sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(self, pooled: &SampleSet) -> Result<f64> {
        match self {
            Bandwidth::Median => median_heuristic(pooled),
            Bandwidth::Fixed(b) => Ok(b),
        }
    }
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Median => f.write_str("median"),
            Bandwidth::Fixed(b) => write!(f, "{b}"),
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("median") {
            return Ok(Bandwidth::Median);
        }
        match t.parse::<f64>() {
            Ok(b) if b.is_finite() && b > 0.0 => Ok(Bandwidth::Fixed(b)),
            _ => Err(Error::InvalidParameter(format!(
                "bandwidth must be 'median' or a positive number, got '{s}'"
            ))),
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Median => s.serialize_str("median"),
            Bandwidth::Fixed(b) => s.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => b.to_string().parse(),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Kernel family plus a bandwidth rule, resolved against a pooled sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { family: KernelFamily::Gaussian, bandwidth: Bandwidth::Median }
    }
}

impl KernelConfig {
    pub fn resolve(&self, pooled: &SampleSet) -> Result<KernelSpec> {
        KernelSpec::new(self.family, self.bandwidth.resolve(pooled)?)
    }
}
