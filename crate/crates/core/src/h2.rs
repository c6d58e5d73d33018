//! H2 analysis of the disturbance channel and SDP-based H2 state feedback.

use serde::{Deserialize, Serialize};

use crate::conic::{
    solve_conic, AffineMatrix, BackendConfig, ConicProgram, ConicSolution, ConicStatus, MatVar,
};
use crate::error::{Error, Result};
use crate::linalg::{
    cond, expm, hstack, lyapunov_solve, norm2, spectral_abscissa, svd, symmetrize, Matrix,
    Tolerance,
};
use crate::model::LtiSystem;

/// Closed loops with spectral abscissa below this are treated as Hurwitz.
pub const HURWITZ_MARGIN: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct H2Report {
    /// `Tr(Eᵀ W_o E)` when Hurwitz, otherwise the truncated integral.
    pub h2_sq: f64,
    /// Observability Gramian; zero when the loop is not Hurwitz.
    pub gramian: Matrix,
    pub hurwitz: bool,
}

/// Horizon and step of the time-domain quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegralOptions {
    pub horizon: f64,
    pub dt: f64,
}

impl Default for IntegralOptions {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            dt: 1e-3,
        }
    }
}

pub fn h2_norm_sq(sys: &LtiSystem, f: &Matrix, tol: &Tolerance) -> Result<H2Report> {
    h2_norm_sq_with(sys, f, tol, &IntegralOptions::default())
}

pub fn h2_norm_sq_with(
    sys: &LtiSystem,
    f: &Matrix,
    tol: &Tolerance,
    opts: &IntegralOptions,
) -> Result<H2Report> {
    let acl = sys.closed_loop_matrix(f)?;
    let n = sys.n();
    if spectral_abscissa(&acl) < HURWITZ_MARGIN {
        let q = sys.h().transpose() * sys.h();
        if let Ok(w) = lyapunov_solve(&acl, &q, tol) {
            let h2_sq = (sys.e().transpose() * &w * sys.e()).trace();
            return Ok(H2Report {
                h2_sq,
                gramian: w,
                hurwitz: true,
            });
        }
    }
    let h2_sq = truncated_h2_integral(sys, f, opts)?;
    Ok(H2Report {
        h2_sq,
        gramian: Matrix::zeros(n, n),
        hurwitz: false,
    })
}

/// Relative threshold below which Krylov directions count as absent when
/// reducing a realization. It sits above `√ε` so that a kept direction,
/// once normalized, carries roundoff well below the threshold itself.
const REDUCTION_TOL: f64 = 1e-6;

/// Orthonormal basis of the columns of `m` with singular value above `thr`.
fn columns_above(m: &Matrix, thr: f64) -> Matrix {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Matrix::zeros(m.nrows(), 0);
    }
    let d = svd(m);
    let r = d.s.iter().filter(|&&v| v > thr).count();
    d.u.columns(0, r).into_owned()
}

/// Orthonormal basis of `span{S, AS, A²S, …}`; `start_thr` screens `S` and
/// `REDUCTION_TOL·‖A‖₂` screens each new block.
fn krylov_basis(a: &Matrix, s: &Matrix, start_thr: f64) -> Matrix {
    let thr = REDUCTION_TOL * norm2(a);
    let mut k = columns_above(s, start_thr);
    let mut fresh = k.clone();
    while fresh.ncols() > 0 && k.ncols() < a.nrows() {
        let w = a * &fresh;
        let r = &w - &k * (k.transpose() * &w);
        fresh = columns_above(&r, thr);
        // one more pass keeps the enlarged basis orthonormal to working precision
        fresh = columns_above(&(&fresh - &k * (k.transpose() * &fresh)), 0.5);
        k = hstack(&[&k, &fresh]);
    }
    k
}

/// Realization `(A, E, H)` of `g(t) = H e^{A_F t} E` restricted to the
/// controllable and observable modes. Discarded modes do not enter `g` in
/// exact arithmetic; keeping them lets roundoff grow along unstable ones.
pub fn minimal_realization(sys: &LtiSystem, f: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let acl = sys.closed_loop_matrix(f)?;
    let (e, h) = (sys.e(), sys.h());
    let q = krylov_basis(&acl, e, REDUCTION_TOL * norm2(e));
    let (ac, ec, hc) = (q.transpose() * &acl * &q, q.transpose() * e, h * &q);
    // screened against ‖H‖ rather than ‖H Q‖ so an output that vanishes on
    // the controllable modes is recognized
    let r = krylov_basis(&ac.transpose(), &hc.transpose(), REDUCTION_TOL * norm2(h));
    Ok((r.transpose() * &ac * &r, r.transpose() * ec, hc * &r))
}

/// `∫₀^T ‖H e^{A_F t} E‖_F² dt` by the trapezoid rule on the
/// [`minimal_realization`].
pub fn truncated_h2_integral(sys: &LtiSystem, f: &Matrix, opts: &IntegralOptions) -> Result<f64> {
    if !(opts.horizon > 0.0 && opts.dt > 0.0 && opts.dt <= opts.horizon) {
        return Err(Error::InvalidInput(format!(
            "bad quadrature options {opts:?}"
        )));
    }
    let (a, e, h) = minimal_realization(sys, f)?;
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let steps = (opts.horizon / opts.dt).round().max(1.0) as usize;
    let dt = opts.horizon / steps as f64;
    let phi = expm(&(&a * dt));
    let mut y = e;
    let mut prev = (&h * &y).norm_squared();
    let mut acc = 0.0;
    for _ in 0..steps {
        y = &phi * y;
        let cur = (&h * &y).norm_squared();
        acc += 0.5 * dt * (prev + cur);
        prev = cur;
    }
    Ok(acc)
}

/// `g(t) = H e^{A_F t} E` on a nondecreasing grid of nonnegative times.
pub fn impulse_response(sys: &LtiSystem, f: &Matrix, tgrid: &[f64]) -> Result<Vec<Matrix>> {
    let acl = sys.closed_loop_matrix(f)?;
    if tgrid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || tgrid.windows(2).any(|w| w[1] < w[0])
    {
        return Err(Error::InvalidInput(
            "time grid must be nonnegative and nondecreasing".into(),
        ));
    }
    Ok(tgrid
        .iter()
        .map(|&t| sys.h() * expm(&(&acl * t)) * sys.e())
        .collect())
}

/// Parameters of the H2 semidefinite program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct H2SdpConfig {
    /// Weight of the `P` block: the corner of the first LMI is `ε⁻¹ I`.
    pub eps: f64,
    /// Strictness margin `P ⪰ δ I`.
    pub delta: f64,
}

impl Default for H2SdpConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            delta: 1e-6,
        }
    }
}

impl H2SdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite() && self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "eps and delta must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Program over slices `G`, `N`, `P`, `W`:
///
/// ```text
/// min Tr(W)
/// s.t. G = -(BN + AP)ᵀ - (BN + AP)
///      [G, PHᵀ, P; HP, I, 0; P, 0, ε⁻¹I] ⪰ 0
///      [W, Eᵀ; E, P] ⪰ 0,  P ⪰ δI
/// ```
pub fn build_h2_sdp(sys: &LtiSystem, cfg: &H2SdpConfig) -> Result<ConicProgram> {
    cfg.validate()?;
    let (n, m, p, l) = (sys.n(), sys.m(), sys.p(), sys.l());
    let mut prog = ConicProgram::new();
    let g = prog.add_symmetric("G", n);
    let nv = prog.add_dense("N", m, n);
    let pv = prog.add_symmetric("P", n);
    let w = prog.add_symmetric("W", l);

    let bn_ap =
        AffineMatrix::lmul(sys.b(), &nv.expr()).plus(&AffineMatrix::lmul(sys.a(), &pv.expr()));
    prog.add_matrix_equality(&g.expr().plus(&bn_ap.sym_part2()), true);

    let ph = pv.expr().rmul(&sys.h().transpose());
    let hp = ph.transpose();
    let ip = AffineMatrix::identity(p);
    let corner = AffineMatrix::identity(n).scaled(1.0 / cfg.eps);
    let (ge, pe) = (g.expr(), pv.expr());
    prog.add_psd(AffineMatrix::blocks(
        &[
            vec![Some(&ge), Some(&ph), Some(&pe)],
            vec![Some(&hp), Some(&ip), None],
            vec![Some(&pe), None, Some(&corner)],
        ],
        &[n, p, n],
        &[n, p, n],
    ));

    let e = AffineMatrix::constant(sys.e());
    let et = AffineMatrix::constant(&sys.e().transpose());
    prog.add_psd(AffineMatrix::blocks(
        &[vec![Some(&w.expr()), Some(&et)], vec![Some(&e), Some(&pe)]],
        &[l, n],
        &[l, n],
    ));
    prog.add_psd(pe.minus(&AffineMatrix::identity(n).scaled(cfg.delta)));
    prog.add_objective(&w.expr().trace());
    Ok(prog)
}

/// Controllers whose certificate has a condition number above this are flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct H2Controller {
    pub f: Matrix,
    pub p: Matrix,
    pub n: Matrix,
    pub objective: f64,
    pub cond_p: f64,
    pub ill_conditioned: bool,
}

fn slice<'a>(prog: &'a ConicProgram, name: &str) -> Result<&'a MatVar> {
    prog.var(name)
        .ok_or_else(|| Error::InvalidInput(format!("program has no slice {name}")))
}

/// `F = N P⁻¹` from an optimal solution of [`build_h2_sdp`].
pub fn extract_h2_controller(prog: &ConicProgram, sol: &ConicSolution) -> Result<H2Controller> {
    match sol.status {
        ConicStatus::Optimal => {}
        ConicStatus::Infeasible => {
            return Err(Error::Infeasible(format!("H2 program: {}", sol.message)))
        }
        ConicStatus::NumericalFailure => {
            return Err(Error::NumericalFailure(format!(
                "H2 program: {}",
                sol.message
            )))
        }
    }
    let p = symmetrize(&sol.value(slice(prog, "P")?));
    let n = sol.value(slice(prog, "N")?);
    let ft = p
        .clone()
        .lu()
        .solve(&n.transpose())
        .ok_or_else(|| Error::NumericalFailure("P is singular".into()))?;
    let cond_p = cond(&p);
    let ill_conditioned = cond_p > ILL_CONDITIONED;
    if ill_conditioned {
        log::warn!("H2 certificate P is ill-conditioned (cond {cond_p:e})");
    }
    Ok(H2Controller {
        f: ft.transpose(),
        p,
        n,
        objective: sol.objective,
        cond_p,
        ill_conditioned,
    })
}

/// Builds, solves and extracts in one call.
pub fn synthesize_h2(
    sys: &LtiSystem,
    cfg: &H2SdpConfig,
    backend: &BackendConfig,
    tol: &Tolerance,
) -> Result<H2Controller> {
    let prog = build_h2_sdp(sys, cfg)?;
    let sol = solve_conic(&prog, backend, tol)?;
    extract_h2_controller(&prog, &sol)
}
