//! DD-constrained synthesis with a Lyapunov certificate, solved by successive
//! convex inner approximation of the bilinear constraint.

mod init;
mod solve;
mod subproblem;

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conic::{BackendConfig, ConicProgram, LinExpr, MatVar};
use crate::error::{Error, Result};
use crate::geometry::{dd_residual, DdParameterization, Subspace};
use crate::h2::h2_norm_sq;
use crate::linalg::{max_eig, norm2, spectral_abscissa, Matrix, Tolerance};
use crate::model::{ControllerFile, LtiSystem};

pub use crate::model::MetricsRow;
pub use init::{initialize_ddpf, InitConfig};
pub use solve::{dd_only, dd_setup, solve_ddpf, synthesize};
pub use subproblem::{linearized_subproblem, Subproblem, SubproblemVars};

/// Right-hand term `Π` of `A_Fᵀ P + P A_F + Π ⪯ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PiVariant {
    /// `Π = HᵀH + εI`: internal stability with an H2 bound.
    Stability { eps: f64 },
    /// `Π = 2αP`: decay rate at least `α`.
    Convergence,
    /// No Lyapunov constraint.
    NoStability,
}

impl PiVariant {
    pub fn validate(&self) -> Result<()> {
        match self {
            PiVariant::Stability { eps } if !(*eps > 0.0 && eps.is_finite()) => Err(
                Error::InvalidInput(format!("stability eps must be positive, got {eps}")),
            ),
            _ => Ok(()),
        }
    }

    /// The constant part of `Π` (everything except `2αP`).
    pub(crate) fn constant(&self, sys: &LtiSystem) -> Matrix {
        let n = sys.n();
        match self {
            PiVariant::Stability { eps } => {
                sys.h().transpose() * sys.h() + Matrix::identity(n, n) * *eps
            }
            _ => Matrix::zeros(n, n),
        }
    }
}

/// User-supplied convex objective.
pub trait CustomObjective: Send + Sync + fmt::Debug {
    /// Returns the objective as an expression over the subproblem variables;
    /// auxiliary variables and constraints may be added to `prog`.
    fn build(&self, prog: &mut ConicProgram, vars: &SubproblemVars) -> LinExpr;
    fn value(&self, it: &Iterate) -> f64;
}

#[derive(Debug, Clone)]
pub enum Objective {
    /// `Tr(Eᵀ P E)`, an upper bound on the squared H2 norm under [`PiVariant::Stability`].
    H2Trace,
    /// `-α`.
    NegAlpha,
    /// `‖F‖_2`.
    GainNorm,
    Custom(Arc<dyn CustomObjective>),
}

impl Objective {
    pub fn value(&self, sys: &LtiSystem, it: &Iterate) -> f64 {
        match self {
            Objective::H2Trace => (sys.e().transpose() * &it.p * sys.e()).trace(),
            Objective::NegAlpha => -it.alpha,
            Objective::GainNorm => norm2(&it.f),
            Objective::Custom(c) => c.value(it),
        }
    }
}

/// Solver settings of the successive-linearization loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    /// Proximal weight γ.
    pub gamma: f64,
    /// Stop once `Σ ‖M^{k+1} - M^k‖_F²` over `α, P, F` falls to this.
    pub stop_eps: f64,
    pub max_iters: usize,
    /// `P ⪰ δ I`.
    pub delta: f64,
    /// Upper bound on `α`.
    pub alpha_max: f64,
    /// Slack `μ` in `A_Fᵀ P + P A_F + Π ⪯ -μ I` inside each subproblem.
    pub lmi_margin: f64,
    /// Subproblem retries (γ × 10 each) before giving up.
    pub max_retries: usize,
    pub init: InitConfig,
    pub backend: BackendConfig,
    pub tol: Tolerance,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            stop_eps: 1e-10,
            max_iters: 200,
            delta: 1e-6,
            alpha_max: 1.25,
            lmi_margin: 1e-7,
            max_retries: 3,
            init: InitConfig::default(),
            backend: BackendConfig::default()
                .with_option("tol_gap_abs", 1e-11)
                .with_option("tol_gap_rel", 1e-11)
                .with_option("tol_feas", 1e-10),
            tol: Tolerance::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.gamma, self.stop_eps, self.delta, self.alpha_max];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.max_iters == 0 {
            return Err(Error::InvalidInput(
                "gamma, stop_eps, delta, alpha_max and max_iters must be positive".into(),
            ));
        }
        if !(self.lmi_margin >= 0.0 && self.lmi_margin.is_finite()) {
            return Err(Error::InvalidInput("lmi_margin must be nonnegative".into()));
        }
        self.init.validate()?;
        self.tol.validate()
    }
}

/// One point `(α, P, F, X)` of the loop with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub alpha: f64,
    pub f: Matrix,
    pub p: Matrix,
    pub x: Matrix,
    pub objective_value: f64,
    pub dd_residual: f64,
    /// `λ_max(A_Fᵀ P + P A_F + Π)`; NaN without a Lyapunov constraint.
    pub lyap_margin: f64,
}

impl Iterate {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sys: &LtiSystem,
        v: &Subspace,
        obj: &Objective,
        pi: &PiVariant,
        alpha: f64,
        f: Matrix,
        p: Matrix,
        x: Matrix,
    ) -> Self {
        let mut it = Self {
            alpha,
            dd_residual: dd_residual(sys, v, &f),
            lyap_margin: lyap_margin(sys, pi, alpha, &f, &p),
            f,
            p,
            x,
            objective_value: 0.0,
        };
        it.objective_value = obj.value(sys, &it);
        it
    }

    /// Checks the invariants every accepted iterate must satisfy.
    pub fn check(&self, delta: f64, tol: &Tolerance) -> std::result::Result<(), String> {
        if !(self.dd_residual <= 1e-7) {
            return Err(format!("dd residual {:e}", self.dd_residual));
        }
        let lmin = crate::linalg::min_eig(&self.p);
        if !(lmin >= 0.5 * delta) {
            return Err(format!("min eig(P) {lmin:e}"));
        }
        if self.lyap_margin > tol.psd_tol {
            return Err(format!("Lyapunov margin {:e}", self.lyap_margin));
        }
        Ok(())
    }
}

pub fn lyap_margin(sys: &LtiSystem, pi: &PiVariant, alpha: f64, f: &Matrix, p: &Matrix) -> f64 {
    let af = sys.a() + sys.b() * f;
    let base = af.transpose() * p + p * &af;
    match pi {
        PiVariant::Stability { .. } => max_eig(&(base + pi.constant(sys))),
        PiVariant::Convergence => max_eig(&(base + p * (2.0 * alpha))),
        PiVariant::NoStability => f64::NAN,
    }
}

/// `G₁(Z,Y) - L₂(Z,Y)`: the bilinear-constraint majorant used by the
/// subproblem, where `G₁ = (Z+Y)ᵀ(Z+Y)` and `L₂` linearizes `G₂ = ZᵀZ + YᵀY`
/// at `(Z_k, Y_k)`. It dominates `ZᵀY + YᵀZ` and matches it at the anchor.
pub fn inner_approximant(z: &Matrix, y: &Matrix, zk: &Matrix, yk: &Matrix) -> Matrix {
    let s = z + y;
    let lin2 = z.transpose() * zk + zk.transpose() * z - zk.transpose() * zk
        + y.transpose() * yk
        + yk.transpose() * y
        - yk.transpose() * yk;
    s.transpose() * s - lin2
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub iterate: Iterate,
    /// `(γ/2) Σ ‖M^{k} - M^{k-1}‖_F²`.
    pub penalty: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub f: Matrix,
    pub x: Option<Matrix>,
    pub p: Option<Matrix>,
    pub alpha: Option<f64>,
    pub metrics: MetricsRow,
    pub iterations: usize,
    pub converged: bool,
    pub warning: Option<String>,
    /// KKT residual of the last subproblem at its optimum.
    pub kkt_residual: Option<f64>,
}

impl SynthesisResult {
    pub fn to_file(&self, mode: &str) -> ControllerFile {
        let mut cf = ControllerFile::from_gain(&self.f);
        cf.x = self.x.as_ref().map(crate::model::to_rows);
        cf.p = self.p.as_ref().map(crate::model::to_rows);
        cf.alpha = self.alpha;
        cf.mode = Some(mode.to_string());
        cf.metrics = Some(self.metrics);
        cf.iterations = Some(self.iterations);
        cf.converged = Some(self.converged);
        cf.warning = self.warning.clone();
        cf
    }
}

/// The four comparison metrics; certificates are recomputed from `F` alone.
pub fn evaluate_controller(
    sys: &LtiSystem,
    v: &Subspace,
    f: &Matrix,
    tol: &Tolerance,
) -> Result<MetricsRow> {
    let acl = sys.closed_loop_matrix(f)?;
    let h2 = h2_norm_sq(sys, f, tol)?;
    Ok(MetricsRow {
        f_alpha: -spectral_abscissa(&acl),
        f_gain: norm2(f),
        f_h2: h2.h2_sq,
        f_dd: dd_residual(sys, v, f),
        hurwitz: h2.hurwitz,
    })
}

/// Writes `iter,objective,penalty,dd_residual,lyap_margin,alpha`.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iter",
        "objective",
        "penalty",
        "dd_residual",
        "lyap_margin",
        "alpha",
    ])?;
    for t in trace {
        let it = &t.iterate;
        w.write_record(&[
            t.iter.to_string(),
            format!("{:e}", it.objective_value),
            format!("{:e}", t.penalty),
            format!("{:e}", it.dd_residual),
            format!("{:e}", it.lyap_margin),
            format!("{:e}", it.alpha),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The DD parameterization as equality rows over the `X` and `F` slices.
pub(crate) fn dd_equalities(param: &DdParameterization, x: &MatVar, f: &MatVar) -> Vec<LinExpr> {
    let kk = param.k() * param.k();
    let c = &param.constraint_matrix;
    (0..c.nrows())
        .map(|r| {
            let mut e = LinExpr::constant(-param.rhs[r]);
            for col in 0..c.ncols() {
                let idx = if col < kk {
                    x.offset + col
                } else {
                    f.offset + col - kk
                };
                e.add_term(idx, c[(r, col)]);
            }
            e
        })
        .collect()
}

#[cfg(test)]
mod tests;
