use fxtes::dynamics::{ClosedLoopState, NfxtesSystem};
use fxtes::experiments::{
    assess_hessian, run_figure1, run_hessian_convergence, run_montecarlo, ExperimentConfig,
};
use fxtes::params::gain_for_time;
use fxtes::plant::reference_quadratic;
use fxtes::sim::{integrate, SimConfig};
use fxtes::Execution;
use nalgebra::DMatrix;

#[test]
fn figure1_run_meets_the_bound_and_beats_the_baseline() {
    let out = run_figure1(&ExperimentConfig::figure1()).unwrap();
    let r = &out.report;
    assert!(r.pass, "{}", r.to_json());
    let t = r.runs[0].convergence_time.unwrap();
    assert!(t <= 123.4, "{t}");
    assert!(r.runs[0].final_distance <= 0.25);

    let hess = assess_hessian(&out.nfxtes.trajectory, &reference_quadratic());
    assert!(hess.iter().all(|c| c.pass), "{hess:?}");
}

#[test]
fn gain_from_its_own_bound_reproduces_the_run() {
    let mut cfg = ExperimentConfig::figure1();
    cfg.horizon = 20.0;
    let a = run_hessian_convergence(&cfg).unwrap();
    let t_star = a.report.params_used.t_star();
    cfg.params.k = gain_for_time(t_star, cfg.params.q1, cfg.params.q2).unwrap();
    let b = run_hessian_convergence(&cfg).unwrap();
    let (ra, rb) = (&a.report.runs[0], &b.report.runs[0]);
    assert_eq!(ra.convergence_time, rb.convergence_time);
    assert!((ra.final_distance - rb.final_distance).abs() < 1e-9);
}

#[test]
fn closed_loop_trajectories_are_bit_identical() {
    let cfg = ExperimentConfig::figure1();
    let p = cfg.params.validate().unwrap();
    let map = reference_quadratic();
    let sys = NfxtesSystem::new(&map, &p).unwrap();
    let s0 = ClosedLoopState::initial(&cfg.x0, DMatrix::identity(2, 2) * 0.001).to_flat();
    let sim = SimConfig::new(1e-4, 5.0, s0).with_stride(50);
    assert_eq!(
        integrate(&sys, &sim).unwrap(),
        integrate(&sys, &sim).unwrap()
    );
}

#[test]
fn montecarlo_reports_repeat_byte_for_byte() {
    let mut cfg = ExperimentConfig::montecarlo();
    cfg.runs = 4;
    cfg.horizon = 10.0;
    let a = run_montecarlo(&cfg, Execution::default())
        .unwrap()
        .report
        .to_json();
    let b = run_montecarlo(&cfg, Execution::default())
        .unwrap()
        .report
        .to_json();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = 2;
    assert_ne!(
        a,
        run_montecarlo(&other, Execution::default())
            .unwrap()
            .report
            .to_json()
    );
}
