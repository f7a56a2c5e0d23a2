//! Regularized kernel Fisher discriminant in dual form.
//!
//! With `M_c = K 1_c / n_c` and the within-class scatter
//! `N = sum_c K_c (I - 1/n_c) K_c' = K^2 - sum_c n_c M_c M_c'`, the
//! coefficients solve `(N + lambda I) alpha = M_P - M_Q`.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};

use super::{orient, ProjectionMethod, ProjectionWeights};
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, Group, Split};

/// Default regularizer as a fraction of the mean diagonal of `N`.
pub const DEFAULT_LAMBDA_FRACTION: f64 = 1e-3;

/// Cholesky pivots whose squared ratio to the largest falls below this are
/// treated as a singular system.
const PIVOT_RATIO: f64 = 1e-14;

fn resolve_lambda(lambda: Option<f64>, trace_n: f64, n: usize) -> Result<f64> {
    let lambda = lambda.unwrap_or(DEFAULT_LAMBDA_FRACTION * trace_n / n as f64);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("Fisher lambda must be >= 0, got {lambda}")));
    }
    Ok(lambda)
}

fn check_sizes(split: &Split) -> Result<()> {
    if split.n_p() < 2 || split.n_q() < 2 {
        return Err(Error::InvalidParameter(
            "Fisher discriminant needs at least 2 samples per group".into(),
        ));
    }
    Ok(())
}

/// Fisher direction for the first `n1` rows in P and the next `n2` in Q.
/// `lambda = None` selects `1e-3 * mean(diag N)`.
pub fn fit_fisher(gram: &GramMatrix, n1: usize, n2: usize, lambda: Option<f64>) -> Result<ProjectionWeights> {
    fit_fisher_split(gram, &Split::contiguous(n1, n2)?, lambda)
}

/// Direct route: forms `N` and solves by Cholesky.
pub fn fit_fisher_split(gram: &GramMatrix, split: &Split, lambda: Option<f64>) -> Result<ProjectionWeights> {
    let n = gram.n();
    if split.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: split.len() });
    }
    check_sizes(split)?;
    let k = gram.values();
    let indicator = |g: Group| {
        DVector::from_iterator(n, split.groups().iter().map(|&h| if h == g { 1.0 } else { 0.0 }))
    };
    let (np, nq) = (split.n_p() as f64, split.n_q() as f64);
    let mp = (k * indicator(Group::P)) / np;
    let mq = (k * indicator(Group::Q)) / nq;

    let mut scatter = k * k;
    scatter -= (&mp * mp.transpose()) * np;
    scatter -= (&mq * mq.transpose()) * nq;
    let lambda = resolve_lambda(lambda, scatter.trace(), n)?;
    for i in 0..n {
        scatter[(i, i)] += lambda;
    }

    let chol = scatter.cholesky().ok_or(Error::SingularSystem)?;
    let l = chol.l_dirty();
    let (lo, hi) = (0..n).map(|i| l[(i, i)]).fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo * lo > PIVOT_RATIO * hi * hi) {
        return Err(Error::SingularSystem);
    }
    let alpha = chol.solve(&(mp - mq));
    let w = ProjectionWeights::new(ProjectionMethod::Fisher, alpha.iter().copied().collect(), (0..n).collect(), gram)?;
    orient(gram, w, split)
}

/// Eigenbasis of the Gram matrix, reused to fit the Fisher direction for
/// many splits of the same pooled sample.
///
/// With `K = V diag(l) V'` and `u_c = V' 1_c`, the system becomes
/// `(diag(l^2) + lambda - W W') beta = diag(l) (u_P/n_P - u_Q/n_Q)` with
/// `W = [diag(l) u_P / sqrt(n_P), diag(l) u_Q / sqrt(n_Q)]`, which the
/// Woodbury identity solves in `O(n^2)` per split.
pub struct FisherBasis {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    /// `V' 1`
    total: DVector<f64>,
}

impl FisherBasis {
    pub fn new(gram: &GramMatrix) -> Self {
        let SymmetricEigen { eigenvectors, eigenvalues } = gram.values().clone().symmetric_eigen();
        let total = eigenvectors.row_sum().transpose();
        Self { vectors: eigenvectors, values: eigenvalues, total }
    }

    /// Returns the oriented weights and the projected coordinates.
    pub fn fit(&self, split: &Split, lambda: Option<f64>) -> Result<(ProjectionWeights, Vec<f64>)> {
        let n = self.values.len();
        if split.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: split.len() });
        }
        check_sizes(split)?;
        let (np, nq) = (split.n_p() as f64, split.n_q() as f64);

        let mut u_p = DVector::<f64>::zeros(n);
        for i in split.indices(Group::P) {
            u_p += self.vectors.row(i).transpose();
        }
        let u_q = &self.total - &u_p;

        let l = &self.values;
        let w_p = l.component_mul(&u_p) / np.sqrt();
        let w_q = l.component_mul(&u_q) / nq.sqrt();
        let b = l.component_mul(&(&u_p / np - &u_q / nq));

        let trace_n = l.dot(l) - w_p.dot(&w_p) - w_q.dot(&w_q);
        let lambda = resolve_lambda(lambda, trace_n, n)?;
        if lambda == 0.0 {
            return Err(Error::SingularSystem);
        }
        let g = l.map(|v| v * v + lambda);

        let y = b.component_div(&g);
        let z_p = w_p.component_div(&g);
        let z_q = w_q.component_div(&g);
        let s = Matrix2::new(
            1.0 - w_p.dot(&z_p),
            -w_p.dot(&z_q),
            -w_q.dot(&z_p),
            1.0 - w_q.dot(&z_q),
        );
        let r = Vector2::new(w_p.dot(&y), w_q.dot(&y));
        let c = s.lu().solve(&r).ok_or(Error::SingularSystem)?;
        let beta = y + z_p * c[0] + z_q * c[1];

        let norm2 = l.dot(&beta.component_mul(&beta));
        let scale: f64 = beta.iter().map(|v| v.abs()).sum();
        if !(norm2 > super::MEANS_TOL * scale * scale) || scale == 0.0 {
            return Err(Error::DegenerateDirection(ProjectionMethod::Fisher.name()));
        }
        let norm = norm2.sqrt();
        let mut alpha = &self.vectors * &beta;
        let mut xp: Vec<f64> = (&self.vectors * l.component_mul(&beta)).iter().map(|v| v / norm).collect();

        let (mut sp, mut sq) = (0.0, 0.0);
        for (&v, &g) in xp.iter().zip(split.groups()) {
            match g {
                Group::P => sp += v,
                Group::Q => sq += v,
            }
        }
        if sp / np < sq / nq {
            alpha.neg_mut();
            xp.iter_mut().for_each(|v| *v = -*v);
        }
        let weights = ProjectionWeights {
            method: ProjectionMethod::Fisher,
            alphas: alpha.iter().copied().collect(),
            reference_indices: (0..n).collect(),
            norm,
        };
        Ok((weights, xp))
    }
}
