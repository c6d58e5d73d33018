use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{assemble_dd_system, largest_ci_subspace};
use crate::linalg::{min_eig, spectral_abscissa, symmetrize};
use crate::model::{build_power_grid, example_gap, example_marginal, PowerGridParams};

fn grid() -> (LtiSystem, Subspace, DdParameterization) {
    let sys = build_power_grid(&PowerGridParams::nominal()).unwrap();
    let v = largest_ci_subspace(&sys, &Tolerance::default());
    let p = assemble_dd_system(&sys, &v, &Tolerance::default()).unwrap();
    (sys, v, p)
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
}

fn anchor_point(sub: &Subproblem, it: &Iterate) -> Vec<f64> {
    let mut x = vec![0.0; sub.program.num_vars()];
    sub.vars.x.write(&it.x, &mut x);
    sub.vars.f.write(&it.f, &mut x);
    sub.vars.p.write(&it.p, &mut x);
    if let Some(a) = &sub.vars.alpha {
        x[a.offset] = it.alpha;
    }
    x
}

#[test]
fn approximant_dominates_bilinear_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let z = random(&mut rng, n, n);
        let zk = random(&mut rng, n, n);
        let y = symmetrize(&random(&mut rng, n, n));
        let yk = symmetrize(&random(&mut rng, n, n));
        let bilinear = |z: &Matrix, y: &Matrix| z.transpose() * y + y * z;
        let gap = inner_approximant(&z, &y, &zk, &yk) - bilinear(&z, &y);
        assert!(min_eig(&symmetrize(&gap)) >= -1e-9);
        let at_anchor = inner_approximant(&zk, &yk, &zk, &yk) - bilinear(&zk, &yk);
        assert!(at_anchor.amax() <= 1e-10);
    }
}

#[test]
fn anchor_feasible_for_own_subproblem() {
    let (sys, v, param) = grid();
    let cfg = SolveConfig::default();
    for (obj, pi) in [
        (Objective::H2Trace, PiVariant::Stability { eps: 1e-6 }),
        (Objective::NegAlpha, PiVariant::Convergence),
    ] {
        let anchor = initialize_ddpf(&sys, &v, &param, &obj, &pi, &cfg, 1).unwrap();
        let sub = linearized_subproblem(&sys, &param, &obj, &pi, &anchor, &cfg, cfg.gamma);
        let x = anchor_point(&sub, &anchor);
        assert!(sub.program.equality_residual(&x) <= 1e-8);

        // Schur complement of the LMI block equals the negated Lyapunov form
        let n = sys.n();
        let blk = sub.program.psd_value(1, &x);
        let l = blk.view((0, 0), (n, n)).into_owned();
        let s = blk.view((n, 0), (n, n)).into_owned();
        let schur = l - s.transpose() * &s;
        let mut zk = sys.a() + sys.b() * &anchor.f;
        if matches!(pi, PiVariant::Convergence) {
            zk += Matrix::identity(n, n) * anchor.alpha;
        }
        let lyap = zk.transpose() * &anchor.p
            + &anchor.p * &zk
            + pi.constant(&sys)
            + Matrix::identity(n, n) * cfg.lmi_margin;
        assert!((schur + &lyap).amax() <= 1e-9 * (1.0 + lyap.amax()));
        assert!(min_eig(&symmetrize(&blk)) >= -1e-9);

        // proximal terms vanish at the anchor
        let prox: f64 = sub
            .program
            .quadratic_diag()
            .iter()
            .map(|&(i, w)| 0.5 * w * x[i] * x[i])
            .sum();
        let lin: f64 = sub
            .program
            .linear_objective()
            .terms
            .iter()
            .map(|&(i, c)| c * x[i])
            .sum();
        let full = sub.program.objective_value(&x);
        let expected = match obj {
            Objective::NegAlpha => -anchor.alpha,
            _ => anchor.objective_value,
        };
        assert!(
            (full - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
            "{full} vs {expected} ({prox} {lin})"
        );
    }
}

#[test]
fn neg_alpha_objective_touches_only_alpha() {
    let (sys, v, param) = grid();
    let cfg = SolveConfig::default();
    let anchor = initialize_ddpf(
        &sys,
        &v,
        &param,
        &Objective::NegAlpha,
        &PiVariant::Convergence,
        &cfg,
        1,
    )
    .unwrap();
    let sub = linearized_subproblem(
        &sys,
        &param,
        &Objective::NegAlpha,
        &PiVariant::Convergence,
        &anchor,
        &cfg,
        0.0,
    );
    let a = sub.vars.alpha.as_ref().unwrap().offset;
    let terms = &sub.program.linear_objective().compact().terms;
    assert!(terms.iter().all(|&(i, c)| i == a || c == 0.0));
    assert!(terms.iter().any(|&(i, c)| i == a && c == -1.0));
    assert!(sub.program.quadratic_diag().iter().all(|&(_, w)| w == 0.0));
}

#[test]
fn neg_alpha_needs_convergence_variant() {
    let (sys, v, param) = grid();
    let cfg = SolveConfig::default();
    let pi = PiVariant::Stability { eps: 1e-6 };
    let init = initialize_ddpf(&sys, &v, &param, &Objective::H2Trace, &pi, &cfg, 1).unwrap();
    let err = solve_ddpf(&sys, &v, &param, &Objective::NegAlpha, &pi, &cfg, init).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn init_on_grid_is_feasible() {
    let (sys, v, param) = grid();
    let cfg = SolveConfig::default();
    let it = initialize_ddpf(
        &sys,
        &v,
        &param,
        &Objective::H2Trace,
        &PiVariant::Stability { eps: 1e-6 },
        &cfg,
        5,
    )
    .unwrap();
    assert!(it.dd_residual <= 1e-8);
    assert!(spectral_abscissa(&(sys.a() + sys.b() * &it.f)) < 0.0);
    assert!(min_eig(&it.p) >= cfg.delta * 0.5);
    assert!(it.lyap_margin <= 0.0);
}

#[test]
fn init_rejects_subspace_missing_disturbance() {
    let (sys, _, _) = grid();
    let tol = Tolerance::default();
    let v = Subspace::span(
        &Matrix::from_fn(6, 1, |i, _| if i == 2 { 1.0 } else { 0.0 }),
        &tol,
    );
    let param = assemble_dd_system(&sys, &v, &tol).unwrap();
    let err = initialize_ddpf(
        &sys,
        &v,
        &param,
        &Objective::H2Trace,
        &PiVariant::NoStability,
        &SolveConfig::default(),
        1,
    );
    assert!(matches!(err, Err(Error::InvalidInput(_))));
}

#[test]
fn huge_stop_eps_returns_after_one_step() {
    let (sys, v, param) = grid();
    let cfg = SolveConfig {
        stop_eps: 1e12,
        ..SolveConfig::default()
    };
    let obj = Objective::H2Trace;
    let pi = PiVariant::Stability { eps: 1e-6 };
    let init = initialize_ddpf(&sys, &v, &param, &obj, &pi, &cfg, 1).unwrap();
    let (res, trace) = solve_ddpf(&sys, &v, &param, &obj, &pi, &cfg, init).unwrap();
    assert_eq!(res.iterations, 1);
    assert_eq!(trace.len(), 2);
    assert!(res.converged);
}

#[test]
fn h2_run_on_grid_keeps_invariants() {
    let (sys, v, param) = grid();
    let cfg = SolveConfig::default();
    let obj = Objective::H2Trace;
    let pi = PiVariant::Stability { eps: 1e-6 };
    let init = initialize_ddpf(&sys, &v, &param, &obj, &pi, &cfg, 2).unwrap();
    let (res, trace) = solve_ddpf(&sys, &v, &param, &obj, &pi, &cfg, init).unwrap();
    assert!(res.converged);
    for t in &trace {
        assert!(t.iterate.check(cfg.delta, &cfg.tol).is_ok());
    }
    for w in trace.windows(2) {
        let (prev, next) = (
            w[0].iterate.objective_value,
            w[1].iterate.objective_value + w[1].penalty,
        );
        assert!(
            next <= prev + 1e-7,
            "iteration {}: {next:e} > {prev:e}",
            w[1].iter
        );
    }
    assert!(res.metrics.f_dd <= 1e-8);
    assert!(res.metrics.hurwitz);
    assert!(res.kkt_residual.unwrap() <= 1e-5);
}

#[test]
fn evaluate_controller_examples() {
    let tol = Tolerance::default();
    let sys = example_gap();
    let v = largest_ci_subspace(&sys, &tol);
    let f = Matrix::from_row_slice(1, 3, &[0.0, 0.0, -1.0]);
    assert!(evaluate_controller(&sys, &v, &f, &tol).unwrap().f_dd <= 1e-10);

    let (grid, gv, _) = grid();
    let row = evaluate_controller(&grid, &gv, &Matrix::zeros(3, 6), &tol).unwrap();
    assert_eq!(row.f_gain, 0.0);
    assert!(row.f_alpha > 0.0);
}

#[test]
fn dd_only_on_marginal_example() {
    let tol = Tolerance::default();
    let sys = example_marginal();
    let v = largest_ci_subspace(&sys, &tol);
    let param = assemble_dd_system(&sys, &v, &tol).unwrap();
    let res = dd_only(&sys, &v, &param, &tol).unwrap();
    assert!(res.metrics.f_dd <= 1e-10);
    assert_eq!(res.iterations, 0);
}

#[test]
fn trace_csv_has_header_and_rows() {
    let (sys, v, param) = grid();
    let cfg = SolveConfig::default();
    let it = initialize_ddpf(
        &sys,
        &v,
        &param,
        &Objective::GainNorm,
        &PiVariant::NoStability,
        &cfg,
        1,
    )
    .unwrap();
    let trace = vec![TraceEntry {
        iter: 0,
        iterate: it,
        penalty: 0.0,
        step: 0.0,
    }];
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("iter,objective,penalty,dd_residual,lyap_margin,alpha")
    );
    assert!(lines.next().unwrap().starts_with("0,"));
}

#[test]
fn pi_variant_validation() {
    assert!(PiVariant::Stability { eps: 0.0 }.validate().is_err());
    assert!(PiVariant::Convergence.validate().is_ok());
    let json = serde_json::to_string(&PiVariant::Stability { eps: 1e-6 }).unwrap();
    assert_eq!(
        serde_json::from_str::<PiVariant>(&json).unwrap(),
        PiVariant::Stability { eps: 1e-6 }
    );
}
