//! Conditioning matrices for the resampled update.
//!
//! Batch Hessians are made symmetric positive definite by eigenvalue clipping.
//! The quasi-Newton route fits a symmetric matrix to recent (step, gradient
//! change) observations by ridge-regularised least squares and repairs the
//! result the same way.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative eigenvalue floor.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-8;
/// Default relative ridge for the quasi-Newton fit.
pub const DEFAULT_QN_RIDGE: f64 = 1e-6;

/// Symmetric positive-definite matrix together with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    values: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    /// Wraps a matrix that is already symmetric positive definite.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let factor = Cholesky::new(values.clone())
            .ok_or_else(|| Error::Conditioning("matrix is not positive definite".into()))?;
        Ok(SpdMatrix { values, factor })
    }

    pub fn identity(d: usize) -> Self {
        Self::scaled_identity(d, 1.0)
    }

    pub fn scaled_identity(d: usize, scale: f64) -> Self {
        Self::new(DMatrix::identity(d, d) * scale).expect("positive multiple of identity")
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.values.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

/// Floor applied to eigenvalues: `eps * max(1, trace / d)`.
pub fn eigen_floor(h: &DMatrix<f64>, eps: f64) -> f64 {
    let d = h.nrows().max(1) as f64;
    eps * (h.trace() / d).max(1.0)
}

/// Symmetrizes `h` and lifts every eigenvalue below the floor up to it.
///
/// Matrices that already clear the floor come back as `(h + h') / 2` without
/// passing through the eigendecomposition.
pub fn spd_repair(h: &DMatrix<f64>, eps: f64) -> Result<SpdMatrix> {
    if !h.is_square() {
        return Err(Error::dimension("spd_repair", h.nrows(), h.ncols()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("matrix has non-finite entries".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain(format!(
            "eigenvalue floor must be positive, got {eps}"
        )));
    }
    let sym = symmetrize(h);
    let floor = eigen_floor(&sym, eps);
    let d = sym.nrows();

    let shifted = &sym - DMatrix::identity(d, d) * floor;
    if Cholesky::new(shifted).is_some() {
        return SpdMatrix::new(sym);
    }

    let eig = sym
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| {
            Error::Conditioning("symmetric eigendecomposition failed to converge".into())
        })?;
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    SpdMatrix::new(symmetrize(&rebuilt))
}

/// Solves `h x = g` with the stored Cholesky factor.
pub fn solve_direction(h: &SpdMatrix, g: &DVector<f64>) -> Result<DVector<f64>> {
    if g.len() != h.dim() {
        return Err(Error::dimension("solve_direction", h.dim(), g.len()));
    }
    Ok(h.factor.solve(g))
}

/// Position of `(r, c)` in the packed upper triangle of a `d x d` symmetric matrix.
fn packed_index(d: usize, r: usize, c: usize) -> usize {
    let (i, j) = if r <= c { (r, c) } else { (c, r) };
    i * d - i * (i + 1) / 2 + j
}

/// Result of a least-squares Hessian fit.
#[derive(Clone, Debug)]
pub struct QnEstimate {
    pub matrix: SpdMatrix,
    /// True when the observations carried no curvature information and a
    /// scaled identity was returned instead of a fit.
    pub fallback: bool,
}

/// Fits a symmetric `A` minimising
/// `sum_j |dg_j - A ds_j|^2 + lambda * |A - tau I|_F^2`
/// with `tau = sum dg'ds / sum ds'ds` and `lambda = ridge * mean |ds|^2`,
/// then repairs the fit to be positive definite.
///
/// Returns `None` when every step is zero.
fn fit_symmetric(
    steps: &[DVector<f64>],
    changes: &[DVector<f64>],
    ridge: f64,
    eps: f64,
) -> Result<Option<SpdMatrix>> {
    let Some(first) = steps.first() else {
        return Ok(None);
    };
    let d = first.len();
    let p = d * (d + 1) / 2;
    let step_sq: f64 = steps.iter().map(|s| s.norm_squared()).sum();
    if !(step_sq > 0.0) || !step_sq.is_finite() {
        return Ok(None);
    }
    let cross: f64 = steps.iter().zip(changes).map(|(s, y)| s.dot(y)).sum();
    let tau = if cross > 0.0 { cross / step_sq } else { 1.0 };
    let lambda = ridge * step_sq / steps.len() as f64;

    // Normal equations of the packed least-squares problem: row r of pair j
    // reads y_jr = sum_c A_rc s_jc.
    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = Vec::with_capacity(d);
    for (s, y) in steps.iter().zip(changes) {
        for r in 0..d {
            row.clear();
            row.extend((0..d).map(|c| (packed_index(d, r, c), s[c])));
            for &(a, va) in &row {
                rhs[a] += va * y[r];
                for &(b, vb) in &row {
                    normal[(a, b)] += va * vb;
                }
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let k = packed_index(d, i, j);
            // off-diagonal entries count twice in the Frobenius norm
            let w = if i == j { 1.0 } else { 2.0 };
            normal[(k, k)] += lambda * w;
            if i == j {
                rhs[k] += lambda * tau;
            }
        }
    }

    let packed = match Cholesky::new(normal.clone()) {
        Some(chol) => chol.solve(&rhs),
        None => normal
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Conditioning(e.to_string()))?,
    };
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = packed[packed_index(d, i, j)];
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    spd_repair(&a, eps).map(Some)
}

pub fn default_window(d: usize) -> usize {
    (d + 1).max(10)
}

/// Window of recent `(theta, gradient)` observations.
#[derive(Clone, Debug)]
pub struct QnWindow {
    capacity: usize,
    pairs: VecDeque<(DVector<f64>, DVector<f64>)>,
    /// Scale of the identity returned for a degenerate window.
    pub fallback_scale: f64,
}

impl QnWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(2);
        QnWindow {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
            fallback_scale: 1.0,
        }
    }

    /// Window sized `max(d + 1, 10)`.
    pub fn for_dim(d: usize) -> Self {
        Self::new(default_window(d))
    }

    pub fn push(&mut self, theta: DVector<f64>, gradient: DVector<f64>) {
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((theta, gradient));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(DVector<f64>, DVector<f64>)> {
        self.pairs.iter()
    }
}

/// Least-squares Hessian from a window of `(theta, gradient)` pairs, centred
/// at their window means. Exact for gradients of a quadratic once the window
/// holds `d + 1` affinely independent points.
pub fn qn_estimate(window: &QnWindow, eps: f64, ridge: f64) -> Result<QnEstimate> {
    if window.len() < 2 {
        return Err(Error::Conditioning(format!(
            "quasi-Newton fit needs at least 2 pairs, window has {}",
            window.len()
        )));
    }
    let k = window.len() as f64;
    let d = window.pairs[0].0.len();
    let theta_bar = window.pairs().fold(DVector::zeros(d), |acc, (t, _)| acc + t) / k;
    let grad_bar = window.pairs().fold(DVector::zeros(d), |acc, (_, g)| acc + g) / k;
    let steps: Vec<_> = window.pairs().map(|(t, _)| t - &theta_bar).collect();
    let changes: Vec<_> = window.pairs().map(|(_, g)| g - &grad_bar).collect();
    Ok(match fit_symmetric(&steps, &changes, ridge, eps)? {
        Some(matrix) => QnEstimate {
            matrix,
            fallback: false,
        },
        None => QnEstimate {
            matrix: SpdMatrix::scaled_identity(d, window.fallback_scale),
            fallback: true,
        },
    })
}

/// Window of secant observations `(s, y)` with `y ~ H s`.
///
/// Both gradients behind a pair come from the same batch, so each pair carries
/// curvature without batch-to-batch sampling noise.
#[derive(Clone, Debug)]
pub struct SecantWindow {
    capacity: usize,
    steps: VecDeque<DVector<f64>>,
    changes: VecDeque<DVector<f64>>,
}

impl SecantWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        SecantWindow {
            capacity,
            steps: VecDeque::with_capacity(capacity),
            changes: VecDeque::with_capacity(capacity),
        }
    }

    pub fn for_dim(d: usize) -> Self {
        Self::new(default_window(d))
    }

    pub fn push(&mut self, step: DVector<f64>, change: DVector<f64>) {
        if self.steps.len() == self.capacity {
            self.steps.pop_front();
            self.changes.pop_front();
        }
        self.steps.push_back(step);
        self.changes.push_back(change);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Fitted SPD approximation, or `None` if the window holds no usable step.
    pub fn estimate(&self, eps: f64, ridge: f64) -> Result<Option<SpdMatrix>> {
        let steps: Vec<_> = self.steps.iter().cloned().collect();
        let changes: Vec<_> = self.changes.iter().cloned().collect();
        fit_symmetric(&steps, &changes, ridge, eps)
    }
}
