//! Small conic modeling layer: affine matrix expressions over a flat decision
//! vector, equality/nonnegativity/PSD constraints and a convex quadratic
//! objective with diagonal Hessian. Solving goes through a [`ConicBackend`].

mod clarabel_backend;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eig, symmetrize, Matrix, Tolerance};

pub use clarabel_backend::ClarabelBackend;

/// Affine scalar `constant + Σ coef · x[idx]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(idx: usize) -> Self {
        Self {
            terms: vec![(idx, 1.0)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((idx, coef));
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        if s == 0.0 {
            return;
        }
        self.terms
            .extend(other.terms.iter().map(|&(i, c)| (i, c * s)));
        self.constant += other.constant * s;
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = LinExpr::default();
        out.add_scaled(self, s);
        out
    }

    pub fn plus(&self, other: &LinExpr) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        out
    }

    pub fn minus(&self, other: &LinExpr) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    /// Merges repeated indices and drops zero coefficients.
    pub fn compact(&self) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, c) in &self.terms {
            *acc.entry(i).or_insert(0.0) += c;
        }
        Self {
            terms: acc.into_iter().filter(|(_, c)| *c != 0.0).collect(),
            constant: self.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

/// Matrix whose entries are [`LinExpr`]s, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<LinExpr>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![LinExpr::default(); rows * cols],
        }
    }

    pub fn constant(m: &Matrix) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                out.entries[i + j * m.nrows()].constant = m[(i, j)];
            }
        }
        out
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(&Matrix::identity(n, n))
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &LinExpr {
        &self.entries[i + j * self.rows]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut LinExpr {
        &mut self.entries[i + j * self.rows]
    }

    fn check_same(&self, other: &Self) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "affine matrix shapes differ"
        );
    }

    pub fn plus(&self, other: &Self) -> Self {
        self.check_same(other);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.plus(b))
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    pub fn plus_const(&self, m: &Matrix) -> Self {
        self.plus(&Self::constant(m))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.scaled(s)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                *out.get_mut(j, i) = self.get(i, j).clone();
            }
        }
        out
    }

    /// `m · self`.
    pub fn lmul(m: &Matrix, s: &Self) -> Self {
        assert_eq!(m.ncols(), s.rows, "lmul shape mismatch");
        let mut out = Self::zeros(m.nrows(), s.cols);
        for j in 0..s.cols {
            for k in 0..s.rows {
                let e = s.get(k, j);
                for i in 0..m.nrows() {
                    out.get_mut(i, j).add_scaled(e, m[(i, k)]);
                }
            }
        }
        out.compacted()
    }

    /// `self · m`.
    pub fn rmul(&self, m: &Matrix) -> Self {
        Self::lmul(&m.transpose(), &self.transpose()).transpose()
    }

    /// `self + selfᵀ`.
    pub fn sym_part2(&self) -> Self {
        self.plus(&self.transpose())
    }

    pub fn compacted(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(LinExpr::compact).collect(),
        }
    }

    /// Assembles a block matrix; `None` blocks are zero.
    pub fn blocks(
        grid: &[Vec<Option<&AffineMatrix>>],
        row_sizes: &[usize],
        col_sizes: &[usize],
    ) -> Self {
        let rows = row_sizes.iter().sum();
        let cols = col_sizes.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (bj, blk) in row.iter().enumerate() {
                if let Some(b) = blk {
                    assert_eq!(
                        (b.rows, b.cols),
                        (row_sizes[bi], col_sizes[bj]),
                        "block ({bi},{bj}) shape"
                    );
                    for j in 0..b.cols {
                        for i in 0..b.rows {
                            *out.get_mut(r0 + i, c0 + j) = b.get(i, j).clone();
                        }
                    }
                }
                c0 += col_sizes[bj];
            }
            r0 += row_sizes[bi];
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> LinExpr {
        let mut out = LinExpr::default();
        for i in 0..self.rows.min(self.cols) {
            out.add_scaled(self.get(i, i), 1.0);
        }
        out.compact()
    }
}

/// A named block of the decision vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatVar {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    pub offset: usize,
}

impl MatVar {
    /// Number of scalar unknowns in the slice.
    pub fn len(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of entry `(i, j)`; symmetric slices store the upper triangle.
    pub fn index(&self, i: usize, j: usize) -> usize {
        if self.symmetric {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            self.offset + j * (j + 1) / 2 + i
        } else {
            self.offset + i + j * self.rows
        }
    }

    pub fn expr(&self) -> AffineMatrix {
        let mut out = AffineMatrix::zeros(self.rows, self.cols);
        for j in 0..self.cols {
            for i in 0..self.rows {
                *out.get_mut(i, j) = LinExpr::var(self.index(i, j));
            }
        }
        out
    }

    /// The single entry of a 1×1 slice.
    pub fn scalar(&self) -> LinExpr {
        assert_eq!((self.rows, self.cols), (1, 1), "not a scalar slice");
        LinExpr::var(self.offset)
    }

    pub fn value(&self, x: &[f64]) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| x[self.index(i, j)])
    }

    /// Packs a matrix into this slice's layout.
    pub fn write(&self, m: &Matrix, x: &mut [f64]) {
        for j in 0..self.cols {
            for i in 0..self.rows {
                if !self.symmetric || i <= j {
                    x[self.index(i, j)] = m[(i, j)];
                }
            }
        }
    }
}

/// `min ½ Σ w_i x_i² + c(x)` subject to equalities, nonnegativities and PSD blocks.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    vars: Vec<MatVar>,
    num_vars: usize,
    objective: LinExpr,
    quad: BTreeMap<usize, f64>,
    equalities: Vec<LinExpr>,
    nonneg: Vec<LinExpr>,
    psd: Vec<AffineMatrix>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_var(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> MatVar {
        assert!(self.var(name).is_none(), "slice {name} declared twice");
        let v = MatVar {
            name: name.to_string(),
            rows,
            cols,
            symmetric,
            offset: self.num_vars,
        };
        self.num_vars += v.len();
        self.vars.push(v.clone());
        v
    }

    pub fn add_scalar(&mut self, name: &str) -> MatVar {
        self.add_var(name, 1, 1, false)
    }

    pub fn add_dense(&mut self, name: &str, rows: usize, cols: usize) -> MatVar {
        self.add_var(name, rows, cols, false)
    }

    pub fn add_symmetric(&mut self, name: &str, n: usize) -> MatVar {
        self.add_var(name, n, n, true)
    }

    pub fn var(&self, name: &str) -> Option<&MatVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn vars(&self) -> &[MatVar] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn equalities(&self) -> &[LinExpr] {
        &self.equalities
    }

    pub fn nonnegatives(&self) -> &[LinExpr] {
        &self.nonneg
    }

    pub fn psd_blocks(&self) -> &[AffineMatrix] {
        &self.psd
    }

    pub fn linear_objective(&self) -> &LinExpr {
        &self.objective
    }

    /// Diagonal Hessian entries `(index, w)` of the quadratic part `½ Σ w x²`.
    pub fn quadratic_diag(&self) -> Vec<(usize, f64)> {
        self.quad.iter().map(|(&i, &w)| (i, w)).collect()
    }

    fn check_expr(&self, e: &LinExpr) {
        if let Some(i) = e.max_index() {
            assert!(
                i < self.num_vars,
                "expression references undeclared variable {i}"
            );
        }
    }

    pub fn add_objective(&mut self, e: &LinExpr) {
        self.check_expr(e);
        self.objective.add_scaled(e, 1.0);
        self.objective = self.objective.compact();
    }

    /// Adds `(w/2) ‖M - center‖_F²`, counting both off-diagonal copies of a symmetric slice.
    pub fn add_proximal(&mut self, var: &MatVar, center: &Matrix, w: f64) {
        assert!(w >= 0.0, "proximal weight must be nonnegative");
        assert_eq!(
            center.shape(),
            (var.rows, var.cols),
            "proximal center shape"
        );
        for j in 0..var.cols {
            for i in 0..var.rows {
                if var.symmetric && i > j {
                    continue;
                }
                let mult = if var.symmetric && i != j { 2.0 } else { 1.0 };
                let (idx, c, ww) = (var.index(i, j), center[(i, j)], w * mult);
                *self.quad.entry(idx).or_insert(0.0) += ww;
                self.objective.add_term(idx, -ww * c);
                self.objective.constant += 0.5 * ww * c * c;
            }
        }
        self.objective = self.objective.compact();
    }

    /// `e = 0`.
    pub fn add_equality(&mut self, e: LinExpr) {
        self.check_expr(&e);
        self.equalities.push(e.compact());
    }

    /// Entrywise `m = 0`; symmetric inputs contribute only their upper triangle.
    pub fn add_matrix_equality(&mut self, m: &AffineMatrix, symmetric: bool) {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !symmetric || i <= j {
                    self.add_equality(m.get(i, j).clone());
                }
            }
        }
    }

    /// `e ≥ 0`.
    pub fn add_nonneg(&mut self, e: LinExpr) {
        self.check_expr(&e);
        self.nonneg.push(e.compact());
    }

    /// `m ⪰ 0`. Only the upper triangle of `m` is read.
    pub fn add_psd(&mut self, m: AffineMatrix) {
        assert_eq!(m.nrows(), m.ncols(), "PSD block must be square");
        for e in &m.entries {
            self.check_expr(e);
        }
        if m.nrows() > 0 {
            self.psd.push(m.compacted());
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
            + self
                .quad
                .iter()
                .map(|(&i, &w)| 0.5 * w * x[i] * x[i])
                .sum::<f64>()
    }

    pub fn psd_value(&self, k: usize, x: &[f64]) -> Matrix {
        let m = self.psd[k].eval(x);
        // upper triangle is authoritative
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            if i <= j {
                m[(i, j)]
            } else {
                m[(j, i)]
            }
        })
    }

    /// Largest equality residual.
    pub fn equality_residual(&self, x: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|e| e.eval(x).abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of the nonnegativity and PSD constraints.
    pub fn cone_violation(&self, x: &[f64]) -> f64 {
        let lin = self
            .nonneg
            .iter()
            .map(|e| (-e.eval(x)).max(0.0))
            .fold(0.0, f64::max);
        let psd = (0..self.psd.len())
            .map(|k| (-min_eig(&self.psd_value(k, x))).max(0.0))
            .fold(0.0, f64::max);
        lin.max(psd)
    }

    /// Stationarity and complementarity residual of a primal-dual pair.
    pub fn kkt_residual(&self, sol: &ConicSolution) -> f64 {
        let x = &sol.x;
        let mut grad = vec![0.0; self.num_vars];
        for &(i, c) in &self.objective.terms {
            grad[i] += c;
        }
        for (&i, &w) in &self.quad {
            grad[i] += w * x[i];
        }
        for (e, y) in self.equalities.iter().zip(&sol.eq_duals) {
            for &(i, c) in &e.terms {
                grad[i] -= c * y;
            }
        }
        for (e, y) in self.nonneg.iter().zip(&sol.nonneg_duals) {
            for &(i, c) in &e.terms {
                grad[i] -= c * y;
            }
        }
        let mut comp: f64 = 0.0;
        for (k, (blk, z)) in self.psd.iter().zip(&sol.psd_duals).enumerate() {
            for j in 0..blk.ncols() {
                for i in 0..=j {
                    let w = if i == j { z[(i, j)] } else { 2.0 * z[(i, j)] };
                    for &(idx, c) in &blk.get(i, j).terms {
                        grad[idx] -= w * c;
                    }
                }
            }
            comp = comp.max((self.psd_value(k, x).component_mul(z)).sum().abs());
        }
        for (e, y) in self.nonneg.iter().zip(&sol.nonneg_duals) {
            comp = comp.max((e.eval(x) * y).abs());
        }
        grad.iter().fold(0.0_f64, |a, g| a.max(g.abs())).max(comp)
    }

    /// Plain-text dump: dimensions, then sparse triplets per constraint block.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "conic_program v1");
        let _ = writeln!(
            s,
            "vars {} equalities {} nonneg {} psd_blocks {}",
            self.num_vars,
            self.equalities.len(),
            self.nonneg.len(),
            self.psd.len()
        );
        for v in &self.vars {
            let kind = if v.symmetric { "sym" } else { "dense" };
            let _ = writeln!(
                s,
                "slice {} {} {}x{} offset {}",
                v.name, kind, v.rows, v.cols, v.offset
            );
        }
        let _ = writeln!(s, "objective constant {:e}", self.objective.constant);
        for &(i, c) in &self.objective.terms {
            let _ = writeln!(s, "c {i} {c:e}");
        }
        for (&i, &w) in &self.quad {
            let _ = writeln!(s, "q {i} {w:e}");
        }
        for (r, e) in self.equalities.iter().enumerate() {
            let _ = writeln!(s, "eq {r} constant {:e}", e.constant);
            for &(i, c) in &e.terms {
                let _ = writeln!(s, "  {i} {c:e}");
            }
        }
        for (r, e) in self.nonneg.iter().enumerate() {
            let _ = writeln!(s, "ge {r} constant {:e}", e.constant);
            for &(i, c) in &e.terms {
                let _ = writeln!(s, "  {i} {c:e}");
            }
        }
        for (k, blk) in self.psd.iter().enumerate() {
            let _ = writeln!(s, "psd {k} size {}", blk.nrows());
            for j in 0..blk.ncols() {
                for i in 0..=j {
                    let e = blk.get(i, j);
                    if e.constant != 0.0 {
                        let _ = writeln!(s, "  {i} {j} const {:e}", e.constant);
                    }
                    for &(v, c) in &e.terms {
                        let _ = writeln!(s, "  {i} {j} x{v} {c:e}");
                    }
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub equality_residual: f64,
    pub cone_violation: f64,
    pub eq_duals: Vec<f64>,
    pub nonneg_duals: Vec<f64>,
    pub psd_duals: Vec<Matrix>,
    pub iterations: u32,
    pub message: String,
}

impl ConicSolution {
    pub fn failed(status: ConicStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            x: Vec::new(),
            objective: f64::NAN,
            equality_residual: f64::NAN,
            cone_violation: f64::NAN,
            eq_duals: Vec::new(),
            nonneg_duals: Vec::new(),
            psd_duals: Vec::new(),
            iterations: 0,
            message: message.into(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == ConicStatus::Optimal
    }

    pub fn value(&self, var: &MatVar) -> Matrix {
        let m = var.value(&self.x);
        if var.symmetric {
            symmetrize(&m)
        } else {
            m
        }
    }

    pub fn scalar(&self, var: &MatVar) -> f64 {
        self.x[var.offset]
    }
}

/// Solver id plus numeric options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub solver: String,
    pub options: BTreeMap<String, f64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let mut options = BTreeMap::new();
        options.insert("max_iter".to_string(), 500.0);
        options.insert("tol_feas".to_string(), 1e-9);
        Self {
            solver: "clarabel".to_string(),
            options,
        }
    }
}

impl BackendConfig {
    pub fn option(&self, key: &str) -> Option<f64> {
        self.options.get(key).copied()
    }

    pub fn with_option(mut self, key: &str, value: f64) -> Self {
        self.options.insert(key.to_string(), value);
        self
    }
}

/// Synchronous, stateless conic solver.
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, prog: &ConicProgram, cfg: &BackendConfig) -> ConicSolution;
}

pub fn backend(name: &str) -> Result<Box<dyn ConicBackend>> {
    match name {
        "clarabel" => Ok(Box::new(ClarabelBackend)),
        other => Err(Error::UnknownBackend(other.to_string())),
    }
}

/// Solves `prog` and checks the result against `tol`: a solution reported
/// optimal whose residuals exceed the (data-scaled) tolerances is downgraded
/// to [`ConicStatus::NumericalFailure`].
pub fn solve_conic(
    prog: &ConicProgram,
    cfg: &BackendConfig,
    tol: &Tolerance,
) -> Result<ConicSolution> {
    let be = backend(&cfg.solver)?;
    let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| be.solve(prog, cfg)));
    let mut sol = match run {
        Ok(s) => s,
        Err(_) => {
            return Ok(ConicSolution::failed(
                ConicStatus::NumericalFailure,
                "backend panicked",
            ))
        }
    };
    if sol.x.len() == prog.num_vars() && sol.x.iter().all(|v| v.is_finite()) {
        sol.equality_residual = prog.equality_residual(&sol.x);
        sol.cone_violation = prog.cone_violation(&sol.x);
        sol.objective = prog.objective_value(&sol.x);
        if sol.status == ConicStatus::Optimal {
            let scale = 1.0 + sol.x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if sol.equality_residual > tol.residual_tol * scale
                || sol.cone_violation > tol.psd_tol * scale
            {
                sol.message = format!(
                    "residuals too large: equality {:e}, cone {:e}",
                    sol.equality_residual, sol.cone_violation
                );
                sol.status = ConicStatus::NumericalFailure;
            }
        }
    } else if sol.status == ConicStatus::Optimal {
        sol.status = ConicStatus::NumericalFailure;
        sol.message = "non-finite primal solution".into();
    }
    log::debug!(
        "conic solve: {:?} ({}) after {} iterations, objective {:e}",
        sol.status,
        sol.message,
        sol.iterations,
        sol.objective
    );
    Ok(sol)
}
