//! Dense real-matrix kernels shared by the rest of the crate.
//!
//! Everything here works on [`Matrix`] (a dynamically sized `f64` matrix).
//! Numerical rank decisions go through singular values with a cutoff relative
//! to the largest singular value, see [`Tolerance::rank_tol`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical tolerances used for rank, residual and semidefiniteness checks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Tolerance {
    /// Singular values below `rank_tol * sigma_max` count as zero.
    pub rank_tol: f64,
    pub residual_tol: f64,
    /// Eigenvalue slack admitted when checking `M ⪰ 0`.
    pub psd_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rank_tol: 1e-9,
            residual_tol: 1e-8,
            psd_tol: 1e-8,
        }
    }
}

impl Tolerance {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.rank_tol, self.residual_tol, self.psd_tol]
            .iter()
            .all(|t| t.is_finite() && *t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "tolerances must be strictly positive, got {self:?}"
            )))
        }
    }
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Full singular value decomposition `m = U diag(s) Vᵀ` with square `U` and
/// `Vᵀ` and `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v_t: Matrix,
}

/// [`Svd`] via LAPACK `dgesvd`.
pub fn svd(m: &Matrix) -> Svd {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Svd {
            u: Matrix::identity(r, r),
            s: Vec::new(),
            v_t: Matrix::identity(c, c),
        };
    }
    let (ri, ci) = (r as i32, c as i32);
    let mut a: Vec<f64> = m.as_slice().to_vec();
    let mut s = vec![0.0; r.min(c)];
    let mut u = vec![0.0; r * r];
    let mut vt = vec![0.0; c * c];
    let mut info = 0;
    let mut query = [0.0];
    // SAFETY: column-major buffers sized per the dgesvd contract; the first call is a workspace query
    unsafe {
        lapack::dgesvd(
            b'A', b'A', ri, ci, &mut a, ri, &mut s, &mut u, ri, &mut vt, ci, &mut query, -1,
            &mut info,
        );
    }
    let mut work = vec![0.0; (query[0] as usize).max(1)];
    let lwork = work.len() as i32;
    unsafe {
        lapack::dgesvd(
            b'A', b'A', ri, ci, &mut a, ri, &mut s, &mut u, ri, &mut vt, ci, &mut work, lwork,
            &mut info,
        );
    }
    assert!(info == 0, "dgesvd failed to converge (info {info})");
    Svd {
        u: Matrix::from_vec(r, r, u),
        s,
        v_t: Matrix::from_vec(c, c, vt),
    }
}

fn singular_cutoff(sv: &[f64], tol: &Tolerance) -> f64 {
    tol.rank_tol * sv.first().copied().unwrap_or(0.0)
}

/// Orthonormal basis of `ker(m)`; an `n x 0` matrix when `m` has full column rank.
pub fn kernel_basis(m: &Matrix, tol: &Tolerance) -> Matrix {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Matrix::zeros(0, 0);
    }
    if rows == 0 || m.iter().all(|v| *v == 0.0) {
        return Matrix::identity(cols, cols);
    }
    let d = svd(m);
    let r =
        d.s.iter()
            .filter(|&&v| v > singular_cutoff(&d.s, tol))
            .count();
    d.v_t.rows(r, cols - r).transpose()
}

/// Orthonormal basis of the column space of `m`.
pub fn image_basis(m: &Matrix, tol: &Tolerance) -> Matrix {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.iter().all(|v| *v == 0.0) {
        return Matrix::zeros(rows, 0);
    }
    let d = svd(m);
    let r =
        d.s.iter()
            .filter(|&&v| v > singular_cutoff(&d.s, tol))
            .count();
    d.u.columns(0, r).into_owned()
}

pub fn rank(m: &Matrix, tol: &Tolerance) -> usize {
    let s = singular_values(m);
    if s.first().is_none_or(|&v| v == 0.0) {
        return 0;
    }
    s.iter().filter(|&&v| v > singular_cutoff(&s, tol)).count()
}

/// Singular values, descending.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    svd(m).s
}

/// Reduced row echelon form by Gauss-Jordan elimination with partial pivoting.
///
/// Rows that vanish (pivot below `rank_tol` times the largest entry) are
/// dropped, so the returned matrix has full row rank. Returns the reduced
/// matrix together with the pivot column indices.
pub fn rre(m: &Matrix, tol: &Tolerance) -> (Matrix, Vec<usize>) {
    let (rows, cols) = m.shape();
    let mut r = m.clone();
    let scale = r.amax();
    if scale == 0.0 {
        return (Matrix::zeros(0, cols), Vec::new());
    }
    let thresh = tol.rank_tol * scale;
    let mut pivots = Vec::new();
    let mut lead = 0;
    for c in 0..cols {
        if lead == rows {
            break;
        }
        let (mut p, mut best) = (lead, 0.0);
        for i in lead..rows {
            if r[(i, c)].abs() > best {
                best = r[(i, c)].abs();
                p = i;
            }
        }
        if best <= thresh {
            for i in lead..rows {
                r[(i, c)] = 0.0;
            }
            continue;
        }
        r.swap_rows(lead, p);
        let piv = r[(lead, c)];
        for j in 0..cols {
            r[(lead, j)] /= piv;
        }
        r[(lead, c)] = 1.0;
        for i in 0..rows {
            if i != lead {
                let f = r[(i, c)];
                if f != 0.0 {
                    for j in 0..cols {
                        r[(i, j)] -= f * r[(lead, j)];
                    }
                    r[(i, c)] = 0.0;
                }
            }
        }
        pivots.push(c);
        lead += 1;
    }
    (r.rows(0, lead).into_owned(), pivots)
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc))
                    .copy_from(&(b * aij));
            }
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Matrix {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    Matrix::from_column_slice(rows, cols, v)
}

/// Solves `acl^T W + W acl = -q` through the Kronecker linearization.
pub fn lyapunov_solve(acl: &Matrix, q: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    let n = acl.nrows();
    if acl.ncols() != n || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov_solve: acl {:?}, q {:?}",
            acl.shape(),
            q.shape()
        )));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let eye = Matrix::identity(n, n);
    let at = acl.transpose();
    let op = kron(&eye, &at) + kron(&at, &eye);
    let lu = op.lu();
    let u = lu.u();
    let diag_max = u.diagonal().amax();
    let diag_min = u
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if diag_max == 0.0 || diag_min <= tol.rank_tol * diag_max {
        return Err(Error::SingularLyapunov);
    }
    let rhs = -vec(q);
    let sol = lu.solve(&rhs).ok_or(Error::SingularLyapunov)?;
    let w = unvec(sol.as_slice(), n, n);
    Ok(symmetrize(&w))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn expm(m: &Matrix) -> Matrix {
    assert!(m.is_square(), "expm requires a square matrix");
    if m.nrows() == 0 {
        return m.clone();
    }
    m.clone().exp()
}

/// Largest real part among the eigenvalues of `m`.
pub fn spectral_abscissa(m: &Matrix) -> f64 {
    assert!(m.is_square(), "spectral_abscissa requires a square matrix");
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    if !all_finite(m) {
        return f64::INFINITY;
    }
    // an unconverged QR iteration is reported as unstable
    eigenvalues(m).map_or(f64::INFINITY, |ev| {
        ev.iter().map(|z| z.0).fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Eigenvalues of a general square matrix as `(re, im)` pairs, via LAPACK
/// `dgeev`; `None` if the QR iteration does not converge.
pub fn eigenvalues(m: &Matrix) -> Option<Vec<(f64, f64)>> {
    assert!(m.is_square(), "eigenvalues requires a square matrix");
    let n = m.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    let ni = n as i32;
    let mut a: Vec<f64> = m.as_slice().to_vec();
    let (mut wr, mut wi) = (vec![0.0; n], vec![0.0; n]);
    let (mut vl, mut vr) = ([0.0], [0.0]);
    let mut work = vec![0.0; 8 * n];
    let lwork = work.len() as i32;
    let mut info = 0;
    // SAFETY: buffers are sized per the dgeev contract and no eigenvectors are requested
    unsafe {
        lapack::dgeev(
            b'N', b'N', ni, &mut a, ni, &mut wr, &mut wi, &mut vl, 1, &mut vr, 1, &mut work, lwork,
            &mut info,
        );
    }
    (info == 0).then(|| wr.into_iter().zip(wi).collect())
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn min_eig(m: &Matrix) -> f64 {
    sym_eigenvalues(m).first().cloned().unwrap_or(0.0)
}

pub fn max_eig(m: &Matrix) -> f64 {
    sym_eigenvalues(m).last().cloned().unwrap_or(0.0)
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Condition number in the spectral norm; infinite for singular input.
pub fn cond(m: &Matrix) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &Matrix, b: &Matrix, tol: &Tolerance) -> Matrix {
    if a.ncols() == 0 {
        return Matrix::zeros(0, b.ncols());
    }
    if a.nrows() == 0 {
        return Matrix::zeros(a.ncols(), b.ncols());
    }
    let d = svd(a);
    let cutoff = (tol.rank_tol * d.s[0]).max(f64::MIN_POSITIVE);
    let r = d.s.iter().filter(|&&v| v > cutoff).count();
    let mut ub = d.u.columns(0, r).transpose() * b;
    for (i, mut row) in ub.row_iter_mut().enumerate() {
        row /= d.s[i];
    }
    d.v_t.rows(0, r).transpose() * ub
}

/// Stacks matrices side by side; all must share a row count.
pub fn hstack(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&Matrix]) -> Matrix {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Canonical basis vector `e_i` (zero-based) of `R^n` as a column.
pub fn unit(n: usize, i: usize) -> Matrix {
    let mut e = Matrix::zeros(n, 1);
    e[(i, 0)] = 1.0;
    e
}
