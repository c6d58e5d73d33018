use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Iterate, Objective, PiVariant, SolveConfig};
use crate::error::{Error, Result};
use crate::geometry::{dd_feasible, DdParameterization, Subspace};
use crate::linalg::{lyapunov_solve, min_eig, norm2, spectral_abscissa, Matrix};
use crate::model::LtiSystem;

/// Multi-start coordinate pattern search on the spectral abscissa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub starts: usize,
    pub step: f64,
    pub shrink: f64,
    /// Step growth after a successful sweep.
    pub expand: f64,
    /// Largest step after expansion.
    pub max_step: f64,
    pub floor: f64,
    /// Abscissa evaluations per start.
    pub budget: usize,
    /// Random starts are drawn uniformly from `[-spread, spread]^dof`.
    pub spread: f64,
    /// Decay rate sought before the gain is reduced; `None` means
    /// `alpha_max` for the convergence variant and `0.01` otherwise.
    pub decay_target: Option<f64>,
    /// Slack `η` of the initial Lyapunov equation.
    pub eta: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            starts: 20,
            step: 1.0,
            shrink: 0.5,
            expand: 2.0,
            max_step: 8.0,
            floor: 1e-6,
            budget: 5000,
            spread: 1.0,
            decay_target: None,
            eta: 1e-3,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.starts >= 1
            && self.step > 0.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.expand >= 1.0
            && self.max_step >= self.step
            && self.floor > 0.0
            && self.budget >= 1
            && self.spread >= 0.0
            && self.eta > 0.0
            && self.decay_target.is_none_or(|d| d.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid initialization settings {self:?}"
            )))
        }
    }
}

struct SearchOutcome {
    theta: Vec<f64>,
    abscissa: f64,
    gain: f64,
}

impl SearchOutcome {
    /// Lexicographic merit: shortfall of the decay rate, then the gain.
    fn key(&self, target: f64) -> (f64, f64) {
        ((self.abscissa + target).max(0.0), self.gain)
    }

    fn better(&self, other: &SearchOutcome, target: f64) -> bool {
        let (a, b) = (self.key(target), other.key(target));
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }
}

/// Coordinate search along the columns of `basis`; returns the number of evaluations.
fn coordinate_search(
    eval: &dyn Fn(&[f64]) -> (f64, f64),
    basis: &Matrix,
    state: &mut SearchOutcome,
    cfg: &InitConfig,
    budget: usize,
    target: f64,
) -> usize {
    let mut evals = 0;
    let mut step = cfg.step;
    'outer: while step >= cfg.floor {
        let mut improved = false;
        for i in 0..basis.ncols() {
            for dir in [1.0, -1.0] {
                if evals >= budget {
                    break 'outer;
                }
                let theta: Vec<f64> = state
                    .theta
                    .iter()
                    .zip(basis.column(i).iter())
                    .map(|(t, b)| t + dir * step * b)
                    .collect();
                let (abscissa, gain) = eval(&theta);
                evals += 1;
                let cand = SearchOutcome {
                    theta,
                    abscissa,
                    gain,
                };
                if cand.better(state, target) {
                    *state = cand;
                    improved = true;
                    break;
                }
            }
        }
        step = if improved {
            (step * cfg.expand).min(cfg.max_step)
        } else {
            step * cfg.shrink
        };
    }
    evals
}

/// Pattern search that restarts in a randomly rotated basis whenever the
/// step collapses, until the budget is spent. The abscissa is nonsmooth and
/// coordinate polls stall where eigenvalues coalesce.
fn pattern_search(
    eval: &dyn Fn(&[f64]) -> (f64, f64),
    theta: Vec<f64>,
    cfg: &InitConfig,
    target: f64,
    rng: &mut ChaCha8Rng,
) -> SearchOutcome {
    let dof = theta.len();
    let (abscissa, gain) = eval(&theta);
    let mut state = SearchOutcome {
        theta,
        abscissa,
        gain,
    };
    let mut used = 1;
    let mut basis = Matrix::identity(dof, dof);
    while used < cfg.budget && dof > 0 {
        used += coordinate_search(eval, &basis, &mut state, cfg, cfg.budget - used, target);
        let g = Matrix::from_fn(dof, dof, |_, _| rng.sample::<f64, _>(StandardNormal));
        basis = g.qr().q();
    }
    state
}

/// Finds a stabilizing point of the DD set and a matching Lyapunov certificate.
///
/// Each start first drives the decay rate `-abscissa(A + B F(θ))` up to the
/// target and then lowers `‖F‖_2` while keeping it there. Every start is an
/// independent seeded stream, so the result does not depend on thread
/// scheduling; the best start under the same ordering wins.
pub fn initialize_ddpf(
    sys: &LtiSystem,
    v: &Subspace,
    param: &DdParameterization,
    obj: &Objective,
    pi: &PiVariant,
    cfg: &SolveConfig,
    seed: u64,
) -> Result<Iterate> {
    if !dd_feasible(sys, v, &cfg.tol) {
        return Err(Error::InvalidInput(
            "subspace must contain im E and lie in ker H".into(),
        ));
    }
    let icfg = &cfg.init;
    let target = icfg.decay_target.unwrap_or(match pi {
        PiVariant::Convergence => cfg.alpha_max,
        _ => 0.01,
    });
    let dof = param.dof();
    let eval = |th: &[f64]| -> (f64, f64) {
        let (_, f) = param.split(&param.point(th));
        (spectral_abscissa(&(sys.a() + sys.b() * &f)), norm2(&f))
    };
    let outcomes: Vec<SearchOutcome> = (0..icfg.starts)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let start = if s == 0 {
                vec![0.0; dof]
            } else {
                (0..dof)
                    .map(|_| rng.random_range(-1.0..=1.0) * icfg.spread)
                    .collect()
            };
            pattern_search(&eval, start, icfg, target, &mut rng)
        })
        .collect();

    let best = outcomes
        .iter()
        .reduce(|a, b| if b.better(a, target) { b } else { a })
        .expect("at least one start");
    if !(best.abscissa < 0.0) {
        return Err(Error::NoStabilizingDd {
            starts: icfg.starts,
            best_abscissa: best.abscissa,
        });
    }
    log::info!(
        "initialization: abscissa {:.4e}, gain {:.4e} ({} starts reached the target)",
        best.abscissa,
        best.gain,
        outcomes.iter().filter(|o| o.abscissa <= -target).count()
    );

    let (x, f) = param.split(&param.point(&best.theta));
    let af = sys.a() + sys.b() * &f;
    let n = sys.n();
    let (alpha, p) = match pi {
        PiVariant::Convergence => {
            let alpha = (-best.abscissa / 2.0).min(cfg.alpha_max);
            let shifted = &af + Matrix::identity(n, n) * alpha;
            let p = lyapunov_solve(&shifted, &Matrix::identity(n, n), &cfg.tol)?;
            (alpha, &p / norm2(&p))
        }
        _ => {
            let q = pi.constant(sys) + Matrix::identity(n, n) * icfg.eta;
            (0.0, lyapunov_solve(&af, &q, &cfg.tol)?)
        }
    };
    // scaling up keeps every homogeneous Lyapunov inequality satisfied
    let lmin = min_eig(&p);
    let p = if lmin < cfg.delta {
        &p * (cfg.delta / lmin)
    } else {
        p
    };
    let it = Iterate::new(sys, v, obj, pi, alpha, f, p, x);
    it.check(cfg.delta, &cfg.tol)
        .map_err(|e| Error::NumericalFailure(format!("initial iterate infeasible: {e}")))?;
    Ok(it)
}
