//! Plant model, the four-bus power network and file formats.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Matrix};

/// `x' = A x + B u + E d`, `z = H x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
    e: Matrix,
    h: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix, e: Matrix, h: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and nonempty, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != n || e.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected B: {n}×m, E: {n}×l, H: p×{n}; got B {:?}, E {:?}, H {:?}",
                b.shape(),
                e.shape(),
                h.shape()
            )));
        }
        if b.ncols() == 0 || e.ncols() == 0 || h.nrows() == 0 {
            return Err(Error::DimensionMismatch(
                "B, E and H must be nonempty".into(),
            ));
        }
        for (name, m) in [("A", &a), ("B", &b), ("E", &e), ("H", &h)] {
            if !all_finite(m) {
                return Err(Error::InvalidInput(format!(
                    "{name} has non-finite entries"
                )));
            }
        }
        Ok(Self { a, b, e, h })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn e(&self) -> &Matrix {
        &self.e
    }
    pub fn h(&self) -> &Matrix {
        &self.h
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension.
    pub fn p(&self) -> usize {
        self.h.nrows()
    }
    /// Disturbance dimension.
    pub fn l(&self) -> usize {
        self.e.ncols()
    }

    pub fn check_gain(&self, f: &Matrix) -> Result<()> {
        if f.shape() != (self.m(), self.n()) {
            return Err(Error::DimensionMismatch(format!(
                "gain must be {}×{}, got {:?}",
                self.m(),
                self.n(),
                f.shape()
            )));
        }
        if !all_finite(f) {
            return Err(Error::InvalidInput("gain has non-finite entries".into()));
        }
        Ok(())
    }

    /// `A + B F`.
    pub fn closed_loop_matrix(&self, f: &Matrix) -> Result<Matrix> {
        self.check_gain(f)?;
        Ok(&self.a + &self.b * f)
    }
}

/// State feedback `u = F x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub f: Matrix,
}

impl Controller {
    pub fn new(f: Matrix) -> Self {
        Self { f }
    }

    pub fn zero(sys: &LtiSystem) -> Self {
        Self {
            f: Matrix::zeros(sys.m(), sys.n()),
        }
    }
}

pub fn closed_loop(sys: &LtiSystem, ctrl: &Controller) -> Result<Matrix> {
    sys.closed_loop_matrix(&ctrl.f)
}

/// Parameters of the three-generator network whose fourth bus is the infinite bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGridParams {
    pub inertia: [f64; 3],
    pub damping: [f64; 3],
    /// Susceptances of lines (1,2), (2,3), (3,4), (4,1).
    pub susceptance: [f64; 4],
}

impl Default for PowerGridParams {
    fn default() -> Self {
        Self::nominal()
    }
}

impl PowerGridParams {
    pub fn nominal() -> Self {
        Self {
            inertia: [10.0; 3],
            damping: [10.0; 3],
            susceptance: [0.386, 0.294, 0.596, 0.474],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .inertia
            .iter()
            .chain(&self.damping)
            .chain(&self.susceptance);
        for v in all {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "grid parameters must be positive, got {self:?}"
                )));
            }
        }
        Ok(())
    }

    /// Grounded line-susceptance Laplacian over buses 1..3.
    pub fn laplacian(&self) -> Matrix {
        let [b12, b23, b34, b41] = self.susceptance;
        Matrix::from_row_slice(
            3,
            3,
            &[
                b12 + b41,
                -b12,
                0.0,
                -b12,
                b12 + b23,
                -b23,
                0.0,
                -b23,
                b23 + b34,
            ],
        )
    }
}

/// Linearized swing dynamics with states `(θ_1..θ_3, θ'_1..θ'_3)`.
///
/// The disturbance is a torque deviation at generator 3 (`E = e_6`) and the
/// output is the phase of buses 1 and 2.
pub fn build_power_grid(params: &PowerGridParams) -> Result<LtiSystem> {
    params.validate()?;
    let l = params.laplacian();
    let mut a = Matrix::zeros(6, 6);
    let mut b = Matrix::zeros(6, 3);
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
        let minv = 1.0 / params.inertia[i];
        for j in 0..3 {
            a[(3 + i, j)] = -l[(i, j)] * minv;
        }
        a[(3 + i, 3 + i)] = -params.damping[i] * minv;
        b[(3 + i, i)] = minv;
    }
    let mut e = Matrix::zeros(6, 1);
    e[(5, 0)] = 1.0;
    let mut h = Matrix::zeros(2, 6);
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    LtiSystem::new(a, b, e, h)
}

/// Gaussian perturbation (unit variance) of inertia and damping; draws
/// at or below 0.1 are resampled. Susceptances are left untouched.
pub fn randomize_grid(params: &PowerGridParams, seed: u64) -> PowerGridParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |mean: f64| {
        let dist = Normal::new(mean, 1.0).expect("unit standard deviation");
        loop {
            let v: f64 = dist.sample(&mut rng);
            if v > 0.1 {
                return v;
            }
        }
    };
    let mut out = params.clone();
    for i in 0..3 {
        out.inertia[i] = draw(params.inertia[i]);
        out.damping[i] = draw(params.damping[i]);
    }
    out
}

/// The three-state system with `V = span{e_3}` whose DD controller `F = 0`
/// leaves an unstable mode, so no stabilizing DD controller exists.
pub fn example_marginal() -> LtiSystem {
    let a = Matrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, -1.0, 0.0, 1.0, 0.0, 1.0]);
    small_example(a)
}

/// Same plant with the third column of `A` replaced by `(0, 1, -1)`; the DD
/// controller `F = [0, 0, -1]` is also stabilizing.
pub fn example_gap() -> LtiSystem {
    let a = Matrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, -1.0, 1.0, 1.0, 0.0, -1.0]);
    small_example(a)
}

fn small_example(a: Matrix) -> LtiSystem {
    let b = Matrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
    let e = Matrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let h = Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    LtiSystem::new(a, b, e, h).expect("fixture dimensions are consistent")
}

// ---------------------------------------------------------------------------
// File formats

pub(crate) fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

pub(crate) fn from_rows(
    name: &str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<Matrix> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{name}: expected {nrows}×{ncols} row arrays"
        )));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    if !all_finite(&m) {
        return Err(Error::InvalidInput(format!(
            "{name} has non-finite entries"
        )));
    }
    Ok(m)
}

/// On-disk system description; matrices are arrays of row arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub l: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_params: Option<PowerGridParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl SystemFile {
    pub fn from_system(sys: &LtiSystem) -> Self {
        Self {
            n: sys.n(),
            m: sys.m(),
            p: sys.p(),
            l: sys.l(),
            a: to_rows(sys.a()),
            b: to_rows(sys.b()),
            e: to_rows(sys.e()),
            h: to_rows(sys.h()),
            grid_params: None,
            manifest: None,
        }
    }

    pub fn to_system(&self) -> Result<LtiSystem> {
        LtiSystem::new(
            from_rows("A", &self.a, self.n, self.n)?,
            from_rows("B", &self.b, self.n, self.m)?,
            from_rows("E", &self.e, self.n, self.l)?,
            from_rows("H", &self.h, self.p, self.n)?,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn system_to_json(sys: &LtiSystem) -> String {
    SystemFile::from_system(sys).to_json()
}

pub fn system_from_json(text: &str) -> Result<LtiSystem> {
    SystemFile::from_json(text)?.to_system()
}

/// Metric values attached to a controller file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub f_alpha: f64,
    pub f_gain: f64,
    pub f_h2: f64,
    pub f_dd: f64,
    pub hurwitz: bool,
}

/// On-disk controller description, optionally with the certificates and
/// solver statistics of the synthesis run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ControllerFile {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "X", default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<Vec<f64>>>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl ControllerFile {
    pub fn from_gain(f: &Matrix) -> Self {
        Self {
            m: f.nrows(),
            n: f.ncols(),
            f: to_rows(f),
            ..Default::default()
        }
    }

    pub fn gain(&self) -> Result<Matrix> {
        from_rows("F", &self.f, self.m, self.n)
    }

    pub fn controller(&self) -> Result<Controller> {
        Ok(Controller::new(self.gain()?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
