//! Controlled-invariant subspaces and the affine set of DD controllers.
//!
//! A gain `F` decouples the disturbance through `V` when some `X` solves
//! `V X - B F V = A V` and `im E ⊆ im V ⊆ ker H`.

use crate::error::{Error, Result};
use crate::linalg::{
    hstack, image_basis, kernel_basis, kron, lstsq, norm2, rank, rre, unvec, vec, vstack, Matrix,
    Tolerance, Vector,
};
use crate::model::LtiSystem;

/// Subspace of `R^n` carried by an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    /// Orthonormalizes the column span of `m`.
    pub fn span(m: &Matrix, tol: &Tolerance) -> Self {
        Self {
            basis: image_basis(m, tol),
        }
    }

    /// Accepts a basis that is already orthonormal.
    pub fn from_orthonormal(basis: Matrix, tol: &Tolerance) -> Result<Self> {
        let k = basis.ncols();
        let gram = basis.transpose() * &basis;
        if (gram - Matrix::identity(k, k)).amax() > tol.residual_tol {
            return Err(Error::InvalidInput(
                "basis columns are not orthonormal".into(),
            ));
        }
        Ok(Self { basis })
    }

    pub fn whole(n: usize) -> Self {
        Self {
            basis: Matrix::identity(n, n),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            basis: Matrix::zeros(n, 0),
        }
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    /// Largest distance of a column of `m` from the subspace.
    pub fn distance(&self, m: &Matrix) -> f64 {
        let r = m - self.projector() * m;
        (0..r.ncols())
            .map(|j| r.column(j).norm())
            .fold(0.0, f64::max)
    }
}

/// Largest `W ⊆ ker H` with `A W ⊆ W + im B`.
pub fn largest_ci_subspace(sys: &LtiSystem, tol: &Tolerance) -> Subspace {
    largest_ci_subspace_trace(sys, tol).0
}

/// As [`largest_ci_subspace`], also returning the dimension of every iterate.
pub fn largest_ci_subspace_trace(sys: &LtiSystem, tol: &Tolerance) -> (Subspace, Vec<usize>) {
    let n = sys.n();
    let mut w = kernel_basis(sys.h(), tol);
    let mut dims = vec![w.ncols()];
    for _ in 0..n {
        if w.ncols() == 0 {
            break;
        }
        // W_{j+1} = ker H ∩ A⁻¹(W_j + im B) = ker [H; (I - P_S) A]
        let s = image_basis(&hstack(&[&w, sys.b()]), tol);
        let proj = Matrix::identity(n, n) - &s * s.transpose();
        let next = kernel_basis(&vstack(&[sys.h(), &(proj * sys.a())]), tol);
        let done = next.ncols() == w.ncols();
        w = next;
        dims.push(w.ncols());
        if done {
            break;
        }
    }
    (Subspace { basis: w }, dims)
}

fn scaled(tol: f64, m: &Matrix) -> f64 {
    tol * norm2(m).max(1.0)
}

/// Checks `im E ⊆ im V ⊆ ker H`.
pub fn dd_feasible(sys: &LtiSystem, v: &Subspace, tol: &Tolerance) -> bool {
    if v.ambient_dim() != sys.n() {
        return false;
    }
    let e_in_v = v.distance(sys.e()) <= scaled(tol.residual_tol, sys.e());
    let v_in_ker_h =
        v.dim() == 0 || (sys.h() * v.basis()).amax() <= scaled(tol.residual_tol, sys.h());
    e_in_v && v_in_ker_h
}

/// A point `(F, X)` of the DD equation.
#[derive(Debug, Clone, PartialEq)]
pub struct DdSolution {
    pub f: Matrix,
    pub x: Matrix,
    /// `‖V X - B F V - A V‖_F`.
    pub residual: f64,
}

/// Frobenius residual of `V X - B F V - A V`.
pub fn dd_equation_residual(sys: &LtiSystem, v: &Subspace, x: &Matrix, f: &Matrix) -> f64 {
    let vb = v.basis();
    (vb * x - sys.b() * f * vb - sys.a() * vb).norm()
}

/// Row-reduced form of `[I_k ⊗ V, Vᵀ ⊗ (-B)] (vec X; vec F) = vec(A V)` with
/// its minimum-norm solution and homogeneous directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DdParameterization {
    pub particular: Vector,
    pub nullspace: Matrix,
    pub constraint_matrix: Matrix,
    pub rhs: Vector,
    k: usize,
    m: usize,
    n: usize,
}

impl DdParameterization {
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }

    /// Length of the stacked vector `(vec X; vec F)`.
    pub fn num_vars(&self) -> usize {
        self.k * self.k + self.m * self.n
    }

    /// Number of free directions.
    pub fn dof(&self) -> usize {
        self.nullspace.ncols()
    }

    /// Splits a stacked vector into `(X, F)`.
    pub fn split(&self, y: &Vector) -> (Matrix, Matrix) {
        let kk = self.k * self.k;
        let x = unvec(&y.as_slice()[..kk], self.k, self.k);
        let f = unvec(&y.as_slice()[kk..], self.m, self.n);
        (x, f)
    }

    pub fn stack(&self, x: &Matrix, f: &Matrix) -> Vector {
        let mut y = Vector::zeros(self.num_vars());
        let kk = self.k * self.k;
        y.rows_mut(0, kk).copy_from(&vec(x));
        y.rows_mut(kk, self.m * self.n).copy_from(&vec(f));
        y
    }

    /// `particular + nullspace · θ`.
    pub fn point(&self, theta: &[f64]) -> Vector {
        assert_eq!(theta.len(), self.dof(), "θ has wrong length");
        let th = Vector::from_column_slice(theta);
        &self.particular + &self.nullspace * th
    }

    pub fn solution(&self, sys: &LtiSystem, v: &Subspace, theta: &[f64]) -> DdSolution {
        let (x, f) = self.split(&self.point(theta));
        let residual = dd_equation_residual(sys, v, &x, &f);
        DdSolution { f, x, residual }
    }

    /// Coordinates `θ` of the point of the affine set closest to `y`.
    pub fn coordinates(&self, y: &Vector) -> Vec<f64> {
        // nullspace has orthonormal columns
        let th = self.nullspace.transpose() * (y - &self.particular);
        th.iter().cloned().collect()
    }

    /// Euclidean projection of `(X, F)` onto the affine solution set.
    pub fn project(&self, x: &Matrix, f: &Matrix) -> (Matrix, Matrix) {
        let y = self.stack(x, f);
        let th = self.coordinates(&y);
        self.split(&self.point(&th))
    }

    /// Largest equation violation `|C y - b|_∞` of a stacked vector.
    pub fn violation(&self, y: &Vector) -> f64 {
        (&self.constraint_matrix * y - &self.rhs).amax()
    }
}

/// Builds and row-reduces the DD equation for `V`.
///
/// Fails with [`Error::Infeasible`] when no gain renders `V` invariant.
pub fn assemble_dd_system(
    sys: &LtiSystem,
    v: &Subspace,
    tol: &Tolerance,
) -> Result<DdParameterization> {
    let (n, m, k) = (sys.n(), sys.m(), v.dim());
    if v.ambient_dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "subspace lives in R^{}, system in R^{n}",
            v.ambient_dim()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("DD subspace has dimension zero".into()));
    }
    let vb = v.basis();
    let c = hstack(&[
        &kron(&Matrix::identity(k, k), vb),
        &kron(&vb.transpose(), &(-sys.b())),
    ]);
    let b = Matrix::from_column_slice(n * k, 1, vec(&(sys.a() * vb)).as_slice());
    let (reduced, pivots) = rre(&hstack(&[&c, &b]), tol);
    let nv = c.ncols();
    if pivots.contains(&nv) {
        return Err(Error::Infeasible(format!(
            "no gain makes the {k}-dimensional subspace invariant"
        )));
    }
    let constraint_matrix = reduced.columns(0, nv).into_owned();
    let rhs: Vector = reduced.column(nv).into_owned();
    let particular = lstsq(
        &constraint_matrix,
        &Matrix::from_column_slice(rhs.len(), 1, rhs.as_slice()),
        tol,
    );
    let nullspace = kernel_basis(&constraint_matrix, tol);
    Ok(DdParameterization {
        particular: particular.column(0).into_owned(),
        nullspace,
        constraint_matrix,
        rhs,
        k,
        m,
        n,
    })
}

/// `min_X ‖V X - (A + B F) V‖_2`; zero for the trivial subspace.
pub fn dd_residual(sys: &LtiSystem, v: &Subspace, f: &Matrix) -> f64 {
    if v.dim() == 0 {
        return 0.0;
    }
    let vb = v.basis();
    let av = (sys.a() + sys.b() * f) * vb;
    // orthonormal V: the minimizer is X = Vᵀ A_F V
    norm2(&(&av - vb * (vb.transpose() * &av)))
}

/// Minimizing `X` for [`dd_residual`].
pub fn dd_best_x(sys: &LtiSystem, v: &Subspace, f: &Matrix) -> Matrix {
    let vb = v.basis();
    vb.transpose() * (sys.a() + sys.b() * f) * vb
}

/// Constraint-qualification preflight for the DD-constrained program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RcqReport {
    pub full_column_rank: bool,
    pub spans_state_space: bool,
    pub use_rre_fallback: bool,
}

pub fn check_rcq(sys: &LtiSystem, v: &Subspace, tol: &Tolerance) -> RcqReport {
    let full_column_rank = rank(v.basis(), tol) == v.dim();
    let spans_state_space = rank(&hstack(&[v.basis(), sys.b()]), tol) == sys.n();
    RcqReport {
        full_column_rank,
        spans_state_space,
        use_rre_fallback: !spans_state_space,
    }
}
