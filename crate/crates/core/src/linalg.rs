//! Small dense linear-algebra helpers built on the faer SVD.
//!
//! faer is used for the factorisation because the nalgebra SVD can lose accuracy
//! (reconstruction errors around 1e-8) on small well-conditioned matrices with
//! clustered singular values.
//!
//! All rank decisions use the same relative threshold: a singular value is
//! treated as zero when it falls below `RANK_TOL` times the largest one.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for rank, null space and pseudo-inverse.
pub const RANK_TOL: f64 = 1e-10;

/// Full SVD factors with every left and right singular vector available.
pub(crate) struct FullSvd {
    /// Left singular vectors as columns (m of them).
    pub u: DMatrix<f64>,
    /// `n` values in decreasing order; positions past `min(m, n)` are zero.
    pub singular: DVector<f64>,
    /// Rows are right singular vectors (n of them).
    pub v_t: DMatrix<f64>,
}

impl FullSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        // a matrix with non-finite entries has no SVD; NaN factors let callers see that
        // through their usual finiteness checks
        let Ok(svd) = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]).svd() else {
            return FullSvd {
                u: DMatrix::from_element(m, m, f64::NAN),
                singular: DVector::from_element(n, f64::NAN),
                v_t: DMatrix::from_element(n, n, f64::NAN),
            };
        };
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
        FullSvd {
            u: DMatrix::from_fn(m, m, |i, j| u[(i, j)]),
            singular: DVector::from_fn(n, |i, _| if i < m.min(n) { s[i] } else { 0.0 }),
            v_t: DMatrix::from_fn(n, n, |i, j| v[(j, i)]),
        }
    }

    pub fn cutoff(&self) -> f64 {
        let smax = self.singular.iter().cloned().fold(0.0_f64, f64::max);
        RANK_TOL * smax
    }

    pub fn rank(&self) -> usize {
        let cut = self.cutoff();
        self.singular.iter().filter(|&&s| s > cut).count()
    }
}

pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    FullSvd::new(a).rank()
}

/// Orthonormal basis (as columns) of `{x : a x = 0}`.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = FullSvd::new(a);
    let cut = svd.cutoff();
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| svd.singular[i] <= cut)
        .map(|i| svd.v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return DVector::zeros(n);
    }
    let m = a.nrows();
    let svd = FullSvd::new(a);
    if svd.singular.iter().any(|s| !s.is_finite()) {
        return DVector::from_element(n, f64::NAN);
    }
    let cut = svd.cutoff();
    let mut x = DVector::zeros(n);
    for i in 0..m.min(n) {
        let s = svd.singular[i];
        if s > cut {
            let coef = svd.u.column(i).dot(b) / s;
            x += svd.v_t.row(i).transpose() * coef;
        }
    }
    x
}

/// Orthogonal projector onto the column space of `a`.
pub fn column_projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    if a.ncols() == 0 {
        return DMatrix::zeros(m, m);
    }
    // Column space of a = row space of a^T; build it from left singular vectors.
    let at = a.transpose();
    let svd = FullSvd::new(&at);
    let cut = svd.cutoff();
    let mut p = DMatrix::zeros(m, m);
    for i in 0..svd.singular.len() {
        if svd.singular[i] > cut {
            let v = svd.v_t.row(i).transpose();
            p += &v * v.transpose();
        }
    }
    p
}
