use super::{dd_equalities, Iterate, Objective, PiVariant, SolveConfig};
use crate::conic::{AffineMatrix, ConicProgram, MatVar};
use crate::geometry::DdParameterization;
use crate::linalg::Matrix;
use crate::model::LtiSystem;

/// Slices of a linearized subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemVars {
    pub x: MatVar,
    pub f: MatVar,
    pub p: MatVar,
    /// Present only for [`PiVariant::Convergence`].
    pub alpha: Option<MatVar>,
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub vars: SubproblemVars,
}

/// `Z = A + B F (+ α I)` as an affine expression.
fn z_expr(sys: &LtiSystem, vars: &SubproblemVars) -> AffineMatrix {
    let mut z = AffineMatrix::constant(sys.a()).plus(&AffineMatrix::lmul(sys.b(), &vars.f.expr()));
    if let Some(a) = &vars.alpha {
        for i in 0..sys.n() {
            z.get_mut(i, i).add_scaled(&a.scalar(), 1.0);
        }
    }
    z
}

/// Convex inner approximation of the Lyapunov BMI at `anchor`.
///
/// With `Y = P`, the bilinear constraint `ZᵀP + PZ + Π ⪯ 0` is rewritten as
/// `(Z+P)ᵀ(Z+P) ⪯ ZᵀZ + P² - Π`; linearizing the right side at the anchor
/// and taking a Schur complement gives
///
/// ```text
/// [ ZᵀZ_k + Z_kᵀZ - Z_kᵀZ_k + P P_k + P_k P - P_k² - Π - μI   (Z+P)ᵀ ]
/// [ Z + P                                                      I     ] ⪰ 0
/// ```
///
/// which implies the original constraint since the linearization underestimates.
pub fn linearized_subproblem(
    sys: &LtiSystem,
    param: &DdParameterization,
    obj: &Objective,
    pi: &PiVariant,
    anchor: &Iterate,
    cfg: &SolveConfig,
    gamma: f64,
) -> Subproblem {
    let (n, m, k) = (sys.n(), sys.m(), param.k());
    let mut prog = ConicProgram::new();
    let x = prog.add_dense("X", k, k);
    let f = prog.add_dense("F", m, n);
    let p = prog.add_symmetric("P", n);
    let alpha = matches!(pi, PiVariant::Convergence).then(|| prog.add_scalar("alpha"));
    let vars = SubproblemVars { x, f, p, alpha };

    for e in dd_equalities(param, &vars.x, &vars.f) {
        prog.add_equality(e);
    }
    prog.add_psd(
        vars.p
            .expr()
            .minus(&AffineMatrix::identity(n).scaled(cfg.delta)),
    );

    if !matches!(pi, PiVariant::NoStability) {
        let z = z_expr(sys, &vars);
        let mut zk = sys.a() + sys.b() * &anchor.f;
        if vars.alpha.is_some() {
            zk += Matrix::identity(n, n) * anchor.alpha;
        }
        let pk = &anchor.p;
        let pe = vars.p.expr();
        let konst = zk.transpose() * &zk
            + pk * pk
            + pi.constant(sys)
            + Matrix::identity(n, n) * cfg.lmi_margin;
        let lin = z
            .transpose()
            .rmul(&zk)
            .sym_part2()
            .plus(&pe.rmul(pk).sym_part2())
            .minus(&AffineMatrix::constant(&konst));
        let zp = z.plus(&pe);
        let zpt = zp.transpose();
        let eye = AffineMatrix::identity(n);
        prog.add_psd(AffineMatrix::blocks(
            &[vec![Some(&lin), Some(&zpt)], vec![Some(&zp), Some(&eye)]],
            &[n, n],
            &[n, n],
        ));
    }

    if let Some(a) = &vars.alpha {
        let mut cap = a.scalar().scaled(-1.0);
        cap.constant += cfg.alpha_max;
        prog.add_nonneg(cap);
    }

    let objective = match obj {
        Objective::H2Trace => AffineMatrix::lmul(&sys.e().transpose(), &vars.p.expr())
            .rmul(sys.e())
            .trace(),
        Objective::NegAlpha => vars
            .alpha
            .as_ref()
            .map(|a| a.scalar().scaled(-1.0))
            .expect("NegAlpha requires the Convergence variant"),
        Objective::GainNorm => {
            let t = prog.add_scalar("t");
            let tm = identity_times(&t, m);
            let tn = identity_times(&t, n);
            let fe = vars.f.expr();
            let ft = fe.transpose();
            prog.add_psd(AffineMatrix::blocks(
                &[vec![Some(&tm), Some(&fe)], vec![Some(&ft), Some(&tn)]],
                &[m, n],
                &[m, n],
            ));
            t.scalar()
        }
        Objective::Custom(c) => c.build(&mut prog, &vars),
    };
    prog.add_objective(&objective);

    prog.add_proximal(&vars.p, &anchor.p, gamma);
    prog.add_proximal(&vars.f, &anchor.f, gamma);
    if let Some(a) = &vars.alpha {
        prog.add_proximal(a, &Matrix::from_element(1, 1, anchor.alpha), gamma);
    }
    Subproblem {
        program: prog,
        vars,
    }
}

fn identity_times(t: &MatVar, size: usize) -> AffineMatrix {
    let mut out = AffineMatrix::zeros(size, size);
    for i in 0..size {
        *out.get_mut(i, i) = t.scalar();
    }
    out
}
