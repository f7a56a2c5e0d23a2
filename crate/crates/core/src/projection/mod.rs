//! Projection directions in the RKHS and the projected coordinates
//! `x^p_i = <Phi(w), Phi(x_i)> / |Phi(w)|`.
//!
//! Three directions are supported:
//!
//! * `Means`: the normalized difference of the empirical mean embeddings,
//!   `(mu_P - mu_Q) / |mu_P - mu_Q|`. Its norm `T` is the square root of the
//!   biased MMD estimate.
//! * `Fisher`: the regularized kernel Fisher discriminant.
//! * `Svm`: the weight vector of a soft-margin kernel SVM.
//!
//! Every direction is expressed as `Phi(w) = sum_j alpha_j Phi(x_j)` over a
//! subset of the pooled sample, and is oriented so that the projected P mean
//! is not below the projected Q mean.

pub mod fisher;
pub mod svm;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, Group, Split};

pub use fisher::{fit_fisher, fit_fisher_split, FisherBasis};
pub use svm::{SvmOptions, SvmSolution};

/// `T^2` at or below this is treated as identical mean embeddings.
pub const MEANS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Means,
    Fisher,
    Svm,
}

impl ProjectionMethod {
    pub const ALL: [ProjectionMethod; 3] =
        [ProjectionMethod::Means, ProjectionMethod::Fisher, ProjectionMethod::Svm];

    pub fn name(self) -> &'static str {
        match self {
            ProjectionMethod::Means => "means",
            ProjectionMethod::Fisher => "fisher",
            ProjectionMethod::Svm => "svm",
        }
    }
}

impl fmt::Display for ProjectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "means" => Ok(ProjectionMethod::Means),
            "fisher" => Ok(ProjectionMethod::Fisher),
            "svm" => Ok(ProjectionMethod::Svm),
            _ => Err(Error::InvalidParameter(format!(
                "unknown projection '{s}'; expected one of means, fisher, svm"
            ))),
        }
    }
}

/// `Phi(w) = sum_j alphas[j] Phi(x_{reference_indices[j]})` and its RKHS norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionWeights {
    pub method: ProjectionMethod,
    pub alphas: Vec<f64>,
    pub reference_indices: Vec<usize>,
    pub norm: f64,
}

impl ProjectionWeights {
    /// Builds weights and computes `norm = sqrt(sum_ij a_i a_j K(x_i, x_j))`.
    pub fn new(
        method: ProjectionMethod,
        alphas: Vec<f64>,
        reference_indices: Vec<usize>,
        gram: &GramMatrix,
    ) -> Result<Self> {
        if alphas.len() != reference_indices.len() {
            return Err(Error::DimensionMismatch {
                expected: reference_indices.len(),
                got: alphas.len(),
            });
        }
        let n = gram.n();
        if let Some(&bad) = reference_indices.iter().find(|&&r| r >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        if alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("projection coefficients"));
        }
        let norm2 = quadratic_form(gram, &alphas, &reference_indices);
        let scale: f64 = alphas.iter().map(|a| a.abs()).sum();
        if !(norm2 > MEANS_TOL * scale * scale) || scale == 0.0 {
            return Err(Error::DegenerateDirection(method.name()));
        }
        Ok(Self { method, alphas, reference_indices, norm: norm2.sqrt() })
    }

    /// Flips the direction.
    pub fn negated(mut self) -> Self {
        self.alphas.iter_mut().for_each(|a| *a = -*a);
        self
    }
}

fn quadratic_form(gram: &GramMatrix, alphas: &[f64], idx: &[usize]) -> f64 {
    let mut total = 0.0;
    for (a, &i) in alphas.iter().zip(idx) {
        let row: f64 = alphas.iter().zip(idx).map(|(b, &j)| b * gram.get(i, j)).sum();
        total += a * row;
    }
    total
}

/// Projected coordinates of every pooled sample, with group labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSamples {
    pub xp: Vec<f64>,
    pub groups: Vec<Group>,
}

impl ProjectedSamples {
    pub fn new(xp: Vec<f64>, groups: Vec<Group>) -> Result<Self> {
        if xp.len() != groups.len() {
            return Err(Error::DimensionMismatch { expected: groups.len(), got: xp.len() });
        }
        if xp.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projected samples"));
        }
        Ok(Self { xp, groups })
    }

    pub fn len(&self) -> usize {
        self.xp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xp.is_empty()
    }

    pub fn values(&self, g: Group) -> impl Iterator<Item = f64> + '_ {
        self.xp.iter().zip(&self.groups).filter(move |(_, &h)| h == g).map(|(&v, _)| v)
    }

    pub fn mean(&self, g: Group) -> Option<f64> {
        let (s, c) = self.values(g).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        (c > 0).then(|| s / c as f64)
    }

    /// Same values under a different labeling.
    pub fn relabeled(&self, split: &Split) -> Result<Self> {
        if split.len() != self.xp.len() {
            return Err(Error::DimensionMismatch { expected: self.xp.len(), got: split.len() });
        }
        Ok(Self { xp: self.xp.clone(), groups: split.groups().to_vec() })
    }
}

fn check_split(gram: &GramMatrix, split: &Split) -> Result<()> {
    if split.len() != gram.n() {
        return Err(Error::DimensionMismatch { expected: gram.n(), got: split.len() });
    }
    Ok(())
}

fn mean_difference_vector(split: &Split) -> DVector<f64> {
    let (wp, wq) = (1.0 / split.n_p() as f64, -1.0 / split.n_q() as f64);
    DVector::from_iterator(
        split.len(),
        split.groups().iter().map(|&g| if g == Group::P { wp } else { wq }),
    )
}

/// Canonical direction for the first `n1` rows in P and the next `n2` in Q.
pub fn project_means(gram: &GramMatrix, n1: usize, n2: usize) -> Result<ProjectedSamples> {
    project_means_split(gram, &Split::contiguous(n1, n2)?)
}

pub fn project_means_split(gram: &GramMatrix, split: &Split) -> Result<ProjectedSamples> {
    check_split(gram, split)?;
    let w = mean_difference_vector(split);
    let kw = gram.values() * &w;
    let t2 = w.dot(&kw);
    if !(t2 > MEANS_TOL) {
        return Err(Error::IndistinguishableMeans(t2));
    }
    let t = t2.sqrt();
    ProjectedSamples::new(kw.iter().map(|v| v / t).collect(), split.groups().to_vec())
}

/// Weights `1/n_P` on P and `-1/n_Q` on Q; the norm is `T`.
pub fn means_weights(gram: &GramMatrix, split: &Split) -> Result<ProjectionWeights> {
    check_split(gram, split)?;
    let w = mean_difference_vector(split);
    ProjectionWeights::new(ProjectionMethod::Means, w.iter().copied().collect(), (0..split.len()).collect(), gram)
        .map_err(|e| match e {
            Error::DegenerateDirection(_) => {
                Error::IndistinguishableMeans(w.dot(&(gram.values() * &w)))
            }
            other => other,
        })
}

/// `x^p_i = sum_j alpha_j K(x_i, x_j) / norm` over the reference points.
pub fn project_with_weights(
    gram: &GramMatrix,
    w: &ProjectionWeights,
    split: &Split,
) -> Result<ProjectedSamples> {
    check_split(gram, split)?;
    if !(w.norm > 0.0) {
        return Err(Error::DegenerateDirection(w.method.name()));
    }
    let n = gram.n();
    if let Some(&bad) = w.reference_indices.iter().find(|&&r| r >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let xp = (0..n)
        .map(|i| {
            w.alphas
                .iter()
                .zip(&w.reference_indices)
                .map(|(a, &j)| a * gram.get(i, j))
                .sum::<f64>()
                / w.norm
        })
        .collect();
    ProjectedSamples::new(xp, split.groups().to_vec())
}

/// Soft-margin SVM direction with P labeled `+1` and Q `-1`.
pub fn fit_svm(gram: &GramMatrix, n1: usize, n2: usize, cost: f64) -> Result<ProjectionWeights> {
    let opts = SvmOptions { cost, ..SvmOptions::default() };
    fit_svm_split(gram, &Split::contiguous(n1, n2)?, &opts)
}

pub fn fit_svm_split(gram: &GramMatrix, split: &Split, opts: &SvmOptions) -> Result<ProjectionWeights> {
    fit_svm_with_solution(gram, split, opts).map(|(w, _)| w)
}

pub(crate) fn fit_svm_with_solution(
    gram: &GramMatrix,
    split: &Split,
    opts: &SvmOptions,
) -> Result<(ProjectionWeights, SvmSolution)> {
    check_split(gram, split)?;
    let y: Vec<f64> =
        split.groups().iter().map(|&g| if g == Group::P { 1.0 } else { -1.0 }).collect();
    let sol = svm::solve_dual(gram.values(), &y, opts)?;
    let (idx, alphas): (Vec<usize>, Vec<f64>) = sol
        .alpha
        .iter()
        .zip(&y)
        .enumerate()
        .filter(|(_, (&a, _))| a > 0.0)
        .map(|(i, (a, y))| (i, a * y))
        .unzip();
    let w = ProjectionWeights::new(ProjectionMethod::Svm, alphas, idx, gram)?;
    let w = orient(gram, w, split)?;
    Ok((w, sol))
}

/// Flips `w` if it puts the projected P mean below the projected Q mean.
fn orient(gram: &GramMatrix, w: ProjectionWeights, split: &Split) -> Result<ProjectionWeights> {
    let xp = project_with_weights(gram, &w, split)?;
    let gap = xp.mean(Group::P).unwrap_or(0.0) - xp.mean(Group::Q).unwrap_or(0.0);
    Ok(if gap < 0.0 { w.negated() } else { w })
}

/// Projection settings shared by every fit in a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub method: ProjectionMethod,
    /// `None` selects `1e-3 * mean(diag N)`.
    pub fisher_lambda: Option<f64>,
    pub svm: SvmOptions,
}

impl ProjectionConfig {
    pub fn new(method: ProjectionMethod) -> Self {
        Self { method, fisher_lambda: None, svm: SvmOptions::default() }
    }
}

/// Fits directions and projects repeatedly against one Gram matrix, caching
/// whatever factorization the method can reuse across splits.
pub struct Projector<'g> {
    gram: &'g GramMatrix,
    config: ProjectionConfig,
    fisher: Option<FisherBasis>,
}

impl<'g> Projector<'g> {
    pub fn new(gram: &'g GramMatrix, config: ProjectionConfig) -> Self {
        let fisher = (config.method == ProjectionMethod::Fisher).then(|| FisherBasis::new(gram));
        Self { gram, config, fisher }
    }

    pub fn gram(&self) -> &GramMatrix {
        self.gram
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.config
    }

    pub fn fit(&self, split: &Split) -> Result<ProjectionWeights> {
        match self.config.method {
            ProjectionMethod::Means => means_weights(self.gram, split),
            ProjectionMethod::Fisher => self.fisher_basis().fit(split, self.config.fisher_lambda).map(|(w, _)| w),
            ProjectionMethod::Svm => fit_svm_split(self.gram, split, &self.config.svm),
        }
    }

    /// Fits the direction for `split` and projects every sample onto it.
    pub fn project(&self, split: &Split) -> Result<ProjectedSamples> {
        match self.config.method {
            ProjectionMethod::Means => project_means_split(self.gram, split),
            ProjectionMethod::Fisher => {
                let (_, xp) = self.fisher_basis().fit(split, self.config.fisher_lambda)?;
                ProjectedSamples::new(xp, split.groups().to_vec())
            }
            ProjectionMethod::Svm => {
                let w = fit_svm_split(self.gram, split, &self.config.svm)?;
                project_with_weights(self.gram, &w, split)
            }
        }
    }

    fn fisher_basis(&self) -> &FisherBasis {
        self.fisher.as_ref().expect("Fisher basis exists for the Fisher method")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram_matrix, KernelSpec, SampleSet};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_sample(rng: &mut impl Rng, n: usize, d: usize, shift: f64, sd: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| { let z: f64 = StandardNormal.sample(rng); shift + sd * z }).collect::<Vec<f64>>())
            .collect()
    }

    fn two_sample_gram(seed: u64, n1: usize, n2: usize, d: usize, shift: f64) -> GramMatrix {
        let mut rng = crate::rng::substream(seed, &[]);
        let mut rows = gaussian_sample(&mut rng, n1, d, 0.0, 1.0);
        rows.extend(gaussian_sample(&mut rng, n2, d, shift, 1.0));
        let s = SampleSet::from_rows(&rows).unwrap();
        gram_matrix(&KernelSpec::gaussian(1.5).unwrap(), &s).unwrap()
    }

    #[test]
    fn two_point_means_projection() {
        // cross-kernel value c = 0.5: |x - y|^2 = 2 ln 2 for sigma = 1
        let s = SampleSet::from_rows(&[vec![0.0], vec![(2.0 * 2f64.ln()).sqrt()]]).unwrap();
        let g = gram_matrix(&KernelSpec::gaussian(1.0).unwrap(), &s).unwrap();
        assert!((g.get(0, 1) - 0.5).abs() < 1e-15);
        let xp = project_means(&g, 1, 1).unwrap();
        assert!((xp.xp[0] - 0.5).abs() < 1e-12);
        assert!((xp.xp[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_have_no_canonical_direction() {
        let s = SampleSet::from_rows(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0]]).unwrap();
        let g = gram_matrix(&KernelSpec::gaussian(1.0).unwrap(), &s).unwrap();
        assert!(matches!(project_means(&g, 2, 2), Err(Error::IndistinguishableMeans(_))));
        assert!(matches!(means_weights(&g, &Split::contiguous(2, 2).unwrap()), Err(Error::IndistinguishableMeans(_))));
    }

    #[test]
    fn projected_mean_gap_equals_t() {
        for seed in 0..10 {
            let g = two_sample_gram(seed, 12, 9, 3, 0.4);
            let split = Split::contiguous(12, 9).unwrap();
            let xp = project_means_split(&g, &split).unwrap();
            let w = means_weights(&g, &split).unwrap();
            let gap = xp.mean(Group::P).unwrap() - xp.mean(Group::Q).unwrap();
            assert!((gap - w.norm).abs() < 1e-12);
        }
    }

    #[test]
    fn means_weights_reproduce_project_means() {
        for seed in 0..10 {
            let g = two_sample_gram(seed, 10, 14, 2, 0.3);
            let split = Split::contiguous(10, 14).unwrap();
            let direct = project_means_split(&g, &split).unwrap();
            let w = means_weights(&g, &split).unwrap();
            let via = project_with_weights(&g, &w, &split).unwrap();
            for (a, b) in direct.xp.iter().zip(&via.xp) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_atom_direction() {
        let g = two_sample_gram(3, 4, 4, 2, 1.0);
        let split = Split::contiguous(4, 4).unwrap();
        let w = ProjectionWeights::new(ProjectionMethod::Means, vec![1.0], vec![5], &g).unwrap();
        assert!((w.norm - 1.0).abs() < 1e-15);
        let xp = project_with_weights(&g, &w, &split).unwrap();
        for i in 0..8 {
            assert!((xp.xp[i] - g.get(i, 5)).abs() < 1e-15);
        }
    }

    #[test]
    fn scaling_alphas_leaves_projection_unchanged() {
        let g = two_sample_gram(5, 6, 6, 2, 0.8);
        let split = Split::contiguous(6, 6).unwrap();
        let w = fit_svm(&g, 6, 6, 1.0).unwrap();
        let scaled = ProjectionWeights::new(
            w.method,
            w.alphas.iter().map(|a| a * 10.0).collect(),
            w.reference_indices.clone(),
            &g,
        )
        .unwrap();
        let a = project_with_weights(&g, &w, &split).unwrap();
        let b = project_with_weights(&g, &scaled, &split).unwrap();
        for (x, y) in a.xp.iter().zip(&b.xp) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn out_of_range_reference_index() {
        let g = two_sample_gram(1, 3, 3, 1, 1.0);
        let w = ProjectionWeights {
            method: ProjectionMethod::Svm,
            alphas: vec![1.0],
            reference_indices: vec![17],
            norm: 1.0,
        };
        let split = Split::contiguous(3, 3).unwrap();
        assert!(matches!(project_with_weights(&g, &w, &split), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn two_point_svm_has_equal_alphas() {
        let s = SampleSet::from_rows(&[vec![-0.5], vec![0.5]]).unwrap();
        let g = gram_matrix(&KernelSpec::gaussian(50.0).unwrap(), &s).unwrap();
        let w = fit_svm(&g, 1, 1, 1e6).unwrap();
        assert_eq!(w.reference_indices, vec![0, 1]);
        assert!((w.alphas[0] + w.alphas[1]).abs() < 1e-9 * w.alphas[0].abs());
        assert!(w.alphas[0] > 0.0);
    }

    #[test]
    fn svm_kkt_and_non_orthogonality() {
        for seed in 0..5 {
            let g = two_sample_gram(seed, 15, 15, 2, 1.5);
            let split = Split::contiguous(15, 15).unwrap();
            let opts = SvmOptions::default();
            let (w, sol) = fit_svm_with_solution(&g, &split, &opts).unwrap();
            let y: Vec<f64> = (0..30).map(|i| if i < 15 { 1.0 } else { -1.0 }).collect();
            let balance: f64 = sol.signed(&y).iter().sum();
            assert!(balance.abs() < 1e-6);
            assert!(sol.alpha.iter().all(|&a| (0.0..=opts.cost).contains(&a)));
            let xp = project_with_weights(&g, &w, &split).unwrap();
            assert!(xp.mean(Group::P).unwrap() - xp.mean(Group::Q).unwrap() > 1e-3);
        }
    }

    #[test]
    fn projector_matches_free_functions() {
        let g = two_sample_gram(9, 10, 12, 3, 0.7);
        let split = Split::contiguous(10, 12).unwrap();
        let means = Projector::new(&g, ProjectionConfig::new(ProjectionMethod::Means));
        assert_eq!(means.project(&split).unwrap(), project_means_split(&g, &split).unwrap());
        let svm = Projector::new(&g, ProjectionConfig::new(ProjectionMethod::Svm));
        let w = fit_svm_split(&g, &split, &SvmOptions::default()).unwrap();
        assert_eq!(svm.project(&split).unwrap(), project_with_weights(&g, &w, &split).unwrap());
    }

    #[test]
    fn weights_roundtrip_json() {
        let g = two_sample_gram(2, 5, 5, 2, 1.0);
        let w = means_weights(&g, &Split::contiguous(5, 5).unwrap()).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.contains("\"method\":\"means\""));
        let back: ProjectionWeights = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }
}
