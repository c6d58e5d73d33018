use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::BackendConfig;
use crate::ddpf::{
    dd_only, dd_setup, evaluate_controller, initialize_ddpf, solve_ddpf, Objective, PiVariant,
    SolveConfig, SynthesisResult, TraceEntry,
};
use crate::error::{Error, Result};
use crate::h2::{synthesize_h2, H2SdpConfig};
use crate::linalg::Tolerance;
use crate::model::{build_power_grid, randomize_grid, LtiSystem, MetricsRow, PowerGridParams};
use crate::sim::SweepConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    H2Sdp,
    DdH2,
    DdAlpha,
    DdGain,
    DdOnly,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::H2Sdp,
        Mode::DdH2,
        Mode::DdAlpha,
        Mode::DdGain,
        Mode::DdOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::H2Sdp => "h2-sdp",
            Mode::DdH2 => "dd-h2",
            Mode::DdAlpha => "dd-alpha",
            Mode::DdGain => "dd-gain",
            Mode::DdOnly => "dd-only",
        }
    }

    /// Objective and Lyapunov term of the successive-linearization modes.
    pub fn program(self, stability_eps: f64) -> Option<(Objective, PiVariant)> {
        let stab = PiVariant::Stability { eps: stability_eps };
        match self {
            Mode::DdH2 => Some((Objective::H2Trace, stab)),
            Mode::DdAlpha => Some((Objective::NegAlpha, PiVariant::Convergence)),
            Mode::DdGain => Some((Objective::GainNorm, stab)),
            Mode::H2Sdp | Mode::DdOnly => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode `{s}`")))
    }
}

/// Everything a run can be configured with; read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// `ε` of `Π = HᵀH + εI`.
    pub stability_eps: f64,
    pub solve: SolveConfig,
    pub h2: H2SdpConfig,
    pub h2_backend: BackendConfig,
    pub sweep: SweepConfig,
    /// Simulation horizon and step.
    pub horizon: f64,
    pub dt: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stability_eps: 1e-6,
            solve: SolveConfig::default(),
            h2: H2SdpConfig::default(),
            h2_backend: BackendConfig::default(),
            sweep: SweepConfig::default(),
            horizon: 60.0,
            dt: 1e-2,
        }
    }
}

impl RunConfig {
    pub fn tol(&self) -> &Tolerance {
        &self.solve.tol
    }

    pub fn validate(&self) -> Result<()> {
        PiVariant::Stability {
            eps: self.stability_eps,
        }
        .validate()?;
        self.solve.validate()?;
        self.h2.validate()
    }
}

/// Synthesizes one controller; the trace is empty for the direct modes.
pub fn synthesize_mode(
    sys: &LtiSystem,
    mode: Mode,
    cfg: &RunConfig,
) -> Result<(SynthesisResult, Vec<TraceEntry>)> {
    cfg.validate()?;
    let tol = cfg.tol();
    match mode {
        Mode::H2Sdp => {
            let c = synthesize_h2(sys, &cfg.h2, &cfg.h2_backend, tol)?;
            let v = crate::geometry::largest_ci_subspace(sys, tol);
            let metrics = evaluate_controller(sys, &v, &c.f, tol)?;
            let warning = c
                .ill_conditioned
                .then(|| format!("ill-conditioned certificate, cond(P) = {:e}", c.cond_p));
            let res = SynthesisResult {
                f: c.f,
                x: None,
                p: Some(c.p),
                alpha: None,
                metrics,
                iterations: 0,
                converged: true,
                warning,
                kkt_residual: None,
            };
            Ok((res, Vec::new()))
        }
        Mode::DdOnly => {
            let (v, param) = dd_setup(sys, tol)?;
            Ok((dd_only(sys, &v, &param, tol)?, Vec::new()))
        }
        _ => {
            let (obj, pi) = mode.program(cfg.stability_eps).expect("iterative mode");
            let (v, param) = dd_setup(sys, tol)?;
            let init = initialize_ddpf(sys, &v, &param, &obj, &pi, &cfg.solve, cfg.seed)?;
            solve_ddpf(sys, &v, &param, &obj, &pi, &cfg.solve, init)
        }
    }
}

/// Seed of Monte Carlo trial `k`; trial `k` is the grid `powergrid --seed <seed + k>`.
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub mode: Mode,
    pub metrics: MetricsRow,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs every mode on `trials` randomized grids. Trials run concurrently and
/// the rows come back ordered by trial, then mode.
pub fn monte_carlo(trials: usize, modes: &[Mode], cfg: &RunConfig) -> Result<Vec<TrialRow>> {
    let per_trial: Vec<Vec<TrialRow>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let seed = trial_seed(cfg.seed, k);
            let sys = build_power_grid(&randomize_grid(&PowerGridParams::nominal(), seed))?;
            let trial_cfg = RunConfig {
                seed,
                ..cfg.clone()
            };
            modes
                .iter()
                .map(|&mode| {
                    let (res, _) = synthesize_mode(&sys, mode, &trial_cfg)?;
                    Ok(TrialRow {
                        trial: k,
                        mode,
                        metrics: res.metrics,
                        iterations: res.iterations,
                        converged: res.converged,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and (n-1)-normalized standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub f_alpha: MeanStd,
    pub f_gain: MeanStd,
    pub f_h2: MeanStd,
    pub f_dd: MeanStd,
}

pub fn summarize(rows: &[TrialRow], modes: &[Mode]) -> Vec<SummaryRow> {
    modes
        .iter()
        .map(|&mode| {
            let pick = |g: fn(&MetricsRow) -> f64| -> MeanStd {
                MeanStd::of(
                    &rows
                        .iter()
                        .filter(|r| r.mode == mode)
                        .map(|r| g(&r.metrics))
                        .collect::<Vec<_>>(),
                )
            };
            SummaryRow {
                mode,
                f_alpha: pick(|m| m.f_alpha),
                f_gain: pick(|m| m.f_gain),
                f_h2: pick(|m| m.f_h2),
                f_dd: pick(|m| m.f_dd),
            }
        })
        .collect()
}
