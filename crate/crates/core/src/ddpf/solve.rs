use super::{
    evaluate_controller, initialize_ddpf, linearized_subproblem, lyap_margin, Iterate, Objective,
    PiVariant, SolveConfig, SynthesisResult, TraceEntry,
};
use crate::conic::{solve_conic, ConicStatus};
use crate::error::{Error, Result};
use crate::geometry::{
    assemble_dd_system, dd_feasible, largest_ci_subspace, DdParameterization, Subspace,
};
use crate::linalg::{min_eig, symmetrize, Tolerance};
use crate::model::LtiSystem;

fn check_combination(obj: &Objective, pi: &PiVariant) -> Result<()> {
    if matches!(obj, Objective::NegAlpha) && !matches!(pi, PiVariant::Convergence) {
        return Err(Error::InvalidInput(
            "the -alpha objective needs the convergence variant".into(),
        ));
    }
    pi.validate()
}

fn sq_dist(a: &crate::linalg::Matrix, b: &crate::linalg::Matrix) -> f64 {
    (a - b).norm_squared()
}

/// Projects `(X, F)` back onto the DD set and restores strict Lyapunov
/// feasibility lost to solver tolerances, then checks the iterate invariants.
#[allow(clippy::too_many_arguments)]
fn repair(
    sys: &LtiSystem,
    v: &Subspace,
    param: &DdParameterization,
    obj: &Objective,
    pi: &PiVariant,
    cfg: &SolveConfig,
    alpha: f64,
    f: crate::linalg::Matrix,
    p: crate::linalg::Matrix,
    x: crate::linalg::Matrix,
) -> std::result::Result<Iterate, String> {
    let (x, f) = param.project(&x, &f);
    let mut p = symmetrize(&p);
    let mut alpha = alpha;
    let margin = lyap_margin(sys, pi, alpha, &f, &p);
    match pi {
        PiVariant::Stability { eps } if margin > cfg.tol.psd_tol => {
            // c (A_FᵀP + P A_F) + Π ⪯ (c (margin - ε) + ε) I
            if margin >= *eps {
                return Err(format!("Lyapunov margin {margin:e} beyond repair"));
            }
            p *= eps / (eps - margin) * (1.0 + 1e-12);
        }
        PiVariant::Convergence if margin > cfg.tol.psd_tol => {
            alpha -= margin / (2.0 * min_eig(&p));
        }
        _ => {}
    }
    let it = Iterate::new(sys, v, obj, pi, alpha, f, p, x);
    it.check(cfg.delta, &cfg.tol)?;
    Ok(it)
}

/// Admitted relative increase of the penalized objective over one step.
const DESCENT_SLACK: f64 = 1e-9;

fn step_sq(next: &Iterate, anchor: &Iterate) -> f64 {
    (next.alpha - anchor.alpha).powi(2) + sq_dist(&next.p, &anchor.p) + sq_dist(&next.f, &anchor.f)
}

/// Runs the successive-linearization loop from a feasible `init`.
///
/// A subproblem the backend cannot solve, or whose solution raises the
/// penalized objective, is retried with a tenfold larger proximal weight;
/// after `max_retries` failures the last accepted iterate is returned with a
/// warning.
pub fn solve_ddpf(
    sys: &LtiSystem,
    v: &Subspace,
    param: &DdParameterization,
    obj: &Objective,
    pi: &PiVariant,
    cfg: &SolveConfig,
    init: Iterate,
) -> Result<(SynthesisResult, Vec<TraceEntry>)> {
    cfg.validate()?;
    check_combination(obj, pi)?;
    init.check(cfg.delta, &cfg.tol)
        .map_err(|e| Error::InvalidInput(format!("initial iterate infeasible: {e}")))?;

    let mut trace = vec![TraceEntry {
        iter: 0,
        iterate: init.clone(),
        penalty: 0.0,
        step: 0.0,
    }];
    let mut anchor = init;
    let mut converged = false;
    let mut warning = None;
    let mut kkt = None;

    for iter in 1..=cfg.max_iters {
        let mut gamma = cfg.gamma;
        let mut accepted = None;
        let mut last_err = String::new();
        let mut only_ascents = true;
        for _ in 0..=cfg.max_retries {
            let sub = linearized_subproblem(sys, param, obj, pi, &anchor, cfg, gamma);
            let sol = solve_conic(&sub.program, &cfg.backend, &cfg.tol)?;
            if sol.status != ConicStatus::Optimal {
                last_err = format!("{:?}: {}", sol.status, sol.message);
                only_ascents = false;
            } else {
                let alpha = sub
                    .vars
                    .alpha
                    .as_ref()
                    .map_or(anchor.alpha, |a| sol.scalar(a));
                let cand = repair(
                    sys,
                    v,
                    param,
                    obj,
                    pi,
                    cfg,
                    alpha,
                    sol.value(&sub.vars.f),
                    sol.value(&sub.vars.p),
                    sol.value(&sub.vars.x),
                );
                match cand {
                    Ok(it) => {
                        // the anchor is feasible for the subproblem, so an accurate solve never ascends
                        let rise = it.objective_value + 0.5 * gamma * step_sq(&it, &anchor)
                            - anchor.objective_value;
                        if rise <= DESCENT_SLACK * (1.0 + anchor.objective_value.abs()) {
                            accepted = Some((it, gamma, sub.program.kkt_residual(&sol)));
                            break;
                        }
                        last_err = format!("penalized objective rose by {rise:e}");
                    }
                    Err(e) => {
                        last_err = e;
                        only_ascents = false;
                    }
                }
            }
            log::debug!("iteration {iter}: subproblem rejected at gamma {gamma:e}: {last_err}");
            gamma *= 10.0;
        }
        let Some((next, gamma, res)) = accepted else {
            if only_ascents {
                // every solve was inaccurate in the same direction: the
                // anchor is the best point available, so the step is zero
                let msg = format!(
                    "kept the iteration {} point; subproblem solves did not descend ({last_err})",
                    iter - 1
                );
                log::info!("{msg}");
                trace.push(TraceEntry {
                    iter,
                    iterate: anchor.clone(),
                    penalty: 0.0,
                    step: 0.0,
                });
                warning = Some(msg);
                converged = true;
                break;
            }
            let msg = format!("subproblem failed at iteration {iter}: {last_err}");
            log::warn!("{msg}");
            warning = Some(msg);
            break;
        };
        let step = step_sq(&next, &anchor);
        let penalty = 0.5 * gamma * step;
        log::debug!(
            "iteration {iter}: objective {:.6e}, step {step:.3e}, dd {:.1e}, margin {:.1e}",
            next.objective_value,
            next.dd_residual,
            next.lyap_margin
        );
        trace.push(TraceEntry {
            iter,
            iterate: next.clone(),
            penalty,
            step,
        });
        anchor = next;
        kkt = Some(res);
        if step <= cfg.stop_eps {
            converged = true;
            break;
        }
    }

    let metrics = evaluate_controller(sys, v, &anchor.f, &cfg.tol)?;
    let result = SynthesisResult {
        f: anchor.f.clone(),
        x: Some(anchor.x.clone()),
        p: Some(anchor.p.clone()),
        alpha: matches!(pi, PiVariant::Convergence).then_some(anchor.alpha),
        metrics,
        iterations: trace.len() - 1,
        converged,
        warning,
        kkt_residual: kkt,
    };
    Ok((result, trace))
}

/// Minimum-norm solution of the DD equation, with no stability requirement.
pub fn dd_only(
    sys: &LtiSystem,
    v: &Subspace,
    param: &DdParameterization,
    tol: &Tolerance,
) -> Result<SynthesisResult> {
    let (x, f) = param.split(&param.particular);
    let metrics = evaluate_controller(sys, v, &f, tol)?;
    Ok(SynthesisResult {
        f,
        x: Some(x),
        p: None,
        alpha: None,
        metrics,
        iterations: 0,
        converged: true,
        warning: None,
        kkt_residual: None,
    })
}

/// Largest controlled-invariant subspace in `ker H` and the DD parameterization over it.
pub fn dd_setup(sys: &LtiSystem, tol: &Tolerance) -> Result<(Subspace, DdParameterization)> {
    let v = largest_ci_subspace(sys, tol);
    if !dd_feasible(sys, &v, tol) {
        return Err(Error::Infeasible(
            "the disturbance is not contained in the largest controlled-invariant subspace of ker H".into(),
        ));
    }
    let param = assemble_dd_system(sys, &v, tol)?;
    Ok((v, param))
}

/// Subspace setup, initialization and the loop in one call.
pub fn synthesize(
    sys: &LtiSystem,
    obj: &Objective,
    pi: &PiVariant,
    cfg: &SolveConfig,
    seed: u64,
) -> Result<(SynthesisResult, Vec<TraceEntry>)> {
    cfg.validate()?;
    check_combination(obj, pi)?;
    let (v, param) = dd_setup(sys, &cfg.tol)?;
    let init = initialize_ddpf(sys, &v, &param, obj, pi, cfg, seed)?;
    solve_ddpf(sys, &v, &param, obj, pi, cfg, init)
}
