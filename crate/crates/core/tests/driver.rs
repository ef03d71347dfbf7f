use transflow_core::driver::{run, Damping, DriverError, FdProblem, NewtonProblem, OuterConfig, RbfProblem};
use transflow_core::grid::{Field, GridSpec};
use transflow_core::kkt::{self, Formulation, ObjectiveData, ProblemParams, QOperator};
use transflow_core::krylov::{KrylovConfig, KrylovMethod};
use transflow_core::linalg::norm2;
use transflow_core::precond::{PrecondConfig, PrecondKind};
use transflow_core::rbf::{halton_centres, RbfData, RbfModel};
use transflow_core::transport::{forward_solve, TransportForm};

fn bump(g: &GridSpec, c: [f64; 2]) -> Vec<f64> {
    Field::from_fn(*g, 0, |x, y| {
        let (dx, dy) = (x - c[0], y - c[1]);
        (-(dx * dx + dy * dy) / 0.02).exp()
    })
    .values
}

fn cfg(method: KrylovMethod, kind: PrecondKind, tol: f64, nl_tol: f64, max_outer: usize, damping: Damping) -> OuterConfig {
    OuterConfig {
        nl_tol,
        max_outer,
        damping,
        linear: KrylovConfig {
            method,
            tol,
            max_iter: 2000,
            restart: 50,
            record_history: false,
        },
        precond: PrecondConfig {
            kind,
            ..Default::default()
        },
    }
}

fn translation_problem(n: usize, n_t: usize, beta: f64) -> FdProblem {
    let g = GridSpec::new(n, n, n_t).unwrap();
    let data = ObjectiveData::new(g, bump(&g, [0.5, 0.5]), bump(&g, [0.625, 0.5625]), None).unwrap();
    FdProblem::new(
        data,
        ProblemParams {
            beta,
            ..Default::default()
        },
    )
    .unwrap()
}

#[test]
fn kkt_point_takes_one_zero_step() {
    let g = GridSpec::new(6, 6, 3).unwrap();
    let y0 = bump(&g, [0.4, 0.5]);
    let traj = forward_solve(&g, TransportForm::Continuity, &vec![0.0; 2 * g.n() * g.n_t], &y0).unwrap();
    let y1 = traj[(g.n_t - 1) * g.n()..].to_vec();
    let data = ObjectiveData::new(g, y0, y1, None).unwrap();
    let mut p = FdProblem::new(data, ProblemParams::default()).unwrap();
    let r = run(&mut p, &cfg(KrylovMethod::GMRES, PrecondKind::P2, 1e-8, 1e-4, 10, Damping::None)).unwrap();
    assert_eq!(r.outer_iterations, 1);
    assert!(r.converged);
    assert_eq!(r.step_norm_history, vec![0.0]);
    assert_eq!(r.initial_residual_norm, 0.0);
}

#[test]
fn single_outer_step_is_reported_unconverged() {
    let mut p = translation_problem(8, 4, 1e-1);
    let r = run(&mut p, &cfg(KrylovMethod::GMRES, PrecondKind::P2, 1e-6, 1e-4, 1, Damping::None)).unwrap();
    assert_eq!(r.outer_iterations, 1);
    assert!(!r.converged);
    assert!(r.step_norm_history[0] > 1e-4);
    for len in [
        r.solves.len(),
        r.objective_history.len(),
        r.residual_norm_history.len(),
        r.step_lengths.len(),
    ] {
        assert_eq!(len, 1);
    }
}

#[test]
fn accepted_step_solves_the_newton_system() {
    let p = translation_problem(8, 4, 1e-1);
    let z0 = p.iterate().to_vec();
    let step = p.linearise(&PrecondConfig::default()).unwrap();
    let mut q = p.clone();
    let c = cfg(KrylovMethod::GMRES, PrecondKind::P2, 1e-6, 1e-4, 1, Damping::None);
    let r = run(&mut q, &c).unwrap();
    let s: Vec<f64> = q.iterate().iter().zip(&z0).map(|(a, b)| a - b).collect();
    let mut res = step.op.apply_vec(&s);
    res.iter_mut().zip(&step.rhs).for_each(|(a, b)| *a -= b);
    assert!(norm2(&res) <= c.linear.tol * norm2(&step.rhs) * (1.0 + 1e-9));
    assert!(r.solves[0].relative_residual <= c.linear.tol);
}

#[test]
fn runs_are_deterministic() {
    let c = cfg(KrylovMethod::CGS, PrecondKind::P2, 1e-6, 1e-4, 3, Damping::Backtracking);
    let mut a = translation_problem(8, 4, 1e-2);
    let mut b = translation_problem(8, 4, 1e-2);
    let ra = run(&mut a, &c).unwrap();
    let rb = run(&mut b, &c).unwrap();
    assert_eq!(ra, rb);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ra.final_iterate), bits(&rb.final_iterate));
}

#[test]
fn backtracking_translation_converges_monotonically() {
    let mut p = translation_problem(16, 8, 1e-2);
    let c = cfg(KrylovMethod::CGS, PrecondKind::P2, 1e-6, OuterConfig::default().nl_tol, 50, Damping::Backtracking);
    let r = match run(&mut p, &c) {
        Ok(r) => r,
        Err(e) => panic!("{e}"),
    };
    let mut prev = r.initial_residual_norm;
    for &v in &r.residual_norm_history {
        assert!(v < prev, "residual rose from {prev} to {v}");
        prev = v;
    }
    assert!(r.converged, "not converged after {} steps", r.outer_iterations);
}

#[test]
fn backtracking_never_accepts_a_residual_increase() {
    let mut p = translation_problem(8, 4, 1e-2);
    let c = cfg(KrylovMethod::GMRES, PrecondKind::P2, 1e-6, 1e-4, 8, Damping::Backtracking);
    let r = match run(&mut p, &c) {
        Ok(r) => r,
        Err(DriverError::LineSearchFailed { report, .. }) => *report,
        Err(e) => panic!("{e}"),
    };
    let mut prev = r.initial_residual_norm;
    for (&v, &a) in r.residual_norm_history.iter().zip(&r.step_lengths) {
        assert!(v < prev);
        assert!(a > 0.0 && a <= 1.0);
        prev = v;
    }
}

#[test]
fn linear_failure_carries_partial_report() {
    let mut p = translation_problem(8, 4, 1e-2);
    let mut c = cfg(KrylovMethod::CGS, PrecondKind::None, 1e-10, 1e-4, 5, Damping::None);
    c.linear.max_iter = 3;
    let e = run(&mut p, &c).unwrap_err();
    assert!(matches!(e, DriverError::LinearSolveFailed { k: 1, .. }));
    let r = e.partial_report().unwrap();
    assert_eq!(r.outer_iterations, 0);
    assert_eq!(r.final_iterate, p.iterate());
}

#[test]
fn invalid_outer_config_is_rejected() {
    let mut p = translation_problem(4, 1, 1e-1);
    for bad in [
        OuterConfig {
            nl_tol: 0.0,
            ..Default::default()
        },
        OuterConfig {
            max_outer: 0,
            ..Default::default()
        },
    ] {
        assert!(matches!(run(&mut p, &bad), Err(DriverError::InvalidConfig(_))));
    }
}

#[test]
fn objective_and_misfit_drop_on_a_small_fd_run() {
    let mut p = translation_problem(8, 4, 1e-1);
    let params = p.params;
    let m0 = kkt::terminal_misfit(&p.state, &p.data, &params);
    let r = run(&mut p, &cfg(KrylovMethod::GMRES, PrecondKind::P2, 1e-6, 1e-2, 5, Damping::Backtracking)).unwrap_or_else(|e| e.partial_report().unwrap().clone());
    assert!(r.outer_iterations >= 1);
    assert!(kkt::terminal_misfit(&p.state, &p.data, &params) < m0);
    assert!(*r.objective_history.last().unwrap() < r.initial_objective);
}

#[test]
fn rbf_run_converges_and_rejects_fd_only_preconditioners() {
    let centres = halton_centres(30);
    let model = RbfModel::with_default_shape(centres.clone(), 4).unwrap();
    let bump_at = |c: [f64; 2]| -> Vec<f64> {
        centres
            .iter()
            .map(|p| (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / 0.02).exp())
            .collect()
    };
    let data = RbfData::new(&model, bump_at([0.5, 0.5]), bump_at([0.55, 0.5]), None).unwrap();
    let params = ProblemParams {
        beta: 1e-1,
        q_operator: QOperator::Gradient,
        formulation: Formulation::ContinuityOTD,
        ..Default::default()
    };
    let mut p = RbfProblem::new(model, data, params).unwrap();
    let r = run(&mut p, &cfg(KrylovMethod::GMRES, PrecondKind::P1, 1e-6, 1e-2, 20, Damping::None)).unwrap();
    assert!(r.converged);
    assert!(p.linearise(&PrecondConfig::default()).is_err());
}
