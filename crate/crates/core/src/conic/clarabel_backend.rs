use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{BackendConfig, ConicBackend, ConicProgram, ConicSolution, ConicStatus, LinExpr};
use crate::linalg::Matrix;

/// Interior-point backend built on the Clarabel solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    // row: sign · e(x) ⇒ A = -sign·coef, b = sign·constant so that s = b - A x = sign·e(x)
    fn push(&mut self, e: &LinExpr, sign: f64) {
        let r = self.b.len();
        for &(idx, c) in &e.terms {
            self.i.push(r);
            self.j.push(idx);
            self.v.push(-sign * c);
        }
        self.b.push(sign * e.constant);
    }
}

fn settings(cfg: &BackendConfig) -> DefaultSettings<f64> {
    let mut s = DefaultSettings::<f64> {
        verbose: false,
        ..Default::default()
    };
    if let Some(v) = cfg.option("max_iter") {
        s.max_iter = v as u32;
    }
    if let Some(v) = cfg.option("time_limit") {
        s.time_limit = v;
    }
    if let Some(v) = cfg.option("tol_feas") {
        s.tol_feas = v;
    }
    if let Some(v) = cfg.option("tol_gap_abs") {
        s.tol_gap_abs = v;
    }
    if let Some(v) = cfg.option("tol_gap_rel") {
        s.tol_gap_rel = v;
    }
    if let Some(v) = cfg.option("equilibrate") {
        s.equilibrate_enable = v != 0.0;
    }
    if let Some(v) = cfg.option("max_threads") {
        s.max_threads = v as u32;
    }
    // decomposed cones come back with completed duals that need not satisfy
    // stationarity against the original blocks
    s.chordal_decomposition_enable = cfg.option("chordal").is_some_and(|v| v != 0.0);
    s
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, prog: &ConicProgram, cfg: &BackendConfig) -> ConicSolution {
        let n = prog.num_vars();
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut rows = Rows {
            i: Vec::new(),
            j: Vec::new(),
            v: Vec::new(),
            b: Vec::new(),
        };
        let mut cones = Vec::new();

        for e in prog.equalities() {
            rows.push(e, 1.0);
        }
        if !prog.equalities().is_empty() {
            cones.push(SupportedConeT::ZeroConeT(prog.equalities().len()));
        }
        for e in prog.nonnegatives() {
            rows.push(e, 1.0);
        }
        if !prog.nonnegatives().is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(prog.nonnegatives().len()));
        }
        for blk in prog.psd_blocks() {
            for j in 0..blk.ncols() {
                for i in 0..=j {
                    let w = if i == j { 1.0 } else { sqrt2 };
                    rows.push(blk.get(i, j), w);
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(blk.nrows()));
        }

        let m = rows.b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
        let quad = prog.quadratic_diag();
        let p = CscMatrix::new_from_triplets(
            n,
            n,
            quad.iter().map(|q| q.0).collect(),
            quad.iter().map(|q| q.0).collect(),
            quad.iter().map(|q| q.1).collect(),
        );
        let mut q = vec![0.0; n];
        for &(i, c) in &prog.linear_objective().terms {
            q[i] += c;
        }

        let mut solver = match DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings(cfg)) {
            Ok(s) => s,
            Err(e) => {
                return ConicSolution::failed(
                    ConicStatus::NumericalFailure,
                    format!("setup failed: {e}"),
                )
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => ConicStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                ConicStatus::Infeasible
            }
            _ => ConicStatus::NumericalFailure,
        };

        let ne = prog.equalities().len();
        let nn = prog.nonnegatives().len();
        let z = &sol.z;
        let mut off = ne + nn;
        let mut psd_duals = Vec::new();
        for blk in prog.psd_blocks() {
            let k = blk.nrows();
            let mut zm = Matrix::zeros(k, k);
            for j in 0..k {
                for i in 0..=j {
                    let v = if i == j { z[off] } else { z[off] / sqrt2 };
                    zm[(i, j)] = v;
                    zm[(j, i)] = v;
                    off += 1;
                }
            }
            psd_duals.push(zm);
        }
        ConicSolution {
            status,
            x: sol.x.clone(),
            objective: prog.objective_value(&sol.x),
            equality_residual: f64::NAN,
            cone_violation: f64::NAN,
            eq_duals: z[..ne].to_vec(),
            nonneg_duals: z[ne..ne + nn].to_vec(),
            psd_duals,
            iterations: sol.iterations,
            message: format!("{:?}", sol.status),
        }
    }
}
