use mfg_homog::evolve::{
    cole_hopf_check, solve_error_system, terminal_energy_bound, terminal_energy_estimate, ColeHopfConfig,
    EvolutionConfig,
};
use mfg_homog::grid::PeriodicGrid;
use mfg_homog::potential::PotentialSpec;

fn config(n: usize, eps: f64, steps: usize) -> EvolutionConfig {
    let mut c = EvolutionConfig::new(PeriodicGrid::new(1, n).unwrap(), PotentialSpec::separable_default(), vec![1.0], eps);
    c.time_steps = steps;
    c
}

#[test]
fn terminal_energy_respects_both_bounds() {
    let run = solve_error_system(&config(32, 0.25, 64)).unwrap();
    let e_t = *run.energy_trace.last().unwrap();
    let estimate = terminal_energy_estimate(&run);
    assert!(e_t <= estimate + 1e-12, "{e_t} {estimate}");
    assert!(estimate <= terminal_energy_bound(&run.base_cell, &run.config.p));
}

#[test]
fn invariants_hold_at_every_level() {
    let run = solve_error_system(&config(32, 0.125, 128)).unwrap();
    for d in &run.diagnostics {
        assert!(d.mass.abs() <= 1e-10);
        assert!(d.min_density > 0.0);
    }
    assert!(!run.sign_flagged());
    let lhs = run.dissipation_lhs();
    let rhs = run.dissipation_rhs();
    assert!((lhs - rhs).abs() <= f64::max(1e-6, 0.05 * rhs.abs()), "{lhs} {rhs}");
}

#[test]
fn energy_drift_shrinks_with_the_time_step() {
    let drift = |steps| solve_error_system(&config(32, 0.25, steps)).unwrap().energy_drift();
    let (a, b) = (drift(256), drift(512));
    assert!(a / b >= 1.5, "{a} {b}");
}

#[test]
fn transform_check_refines() {
    let run = solve_error_system(&config(32, 0.25, 64)).unwrap();
    let d = |s| cole_hopf_check(&run, &ColeHopfConfig { time_steps: s }).unwrap();
    let (a, b) = (d(64), d(128));
    assert_eq!(a.macro_points, 128);
    assert!(a.defect / b.defect >= 1.5, "{} {}", a.defect, b.defect);
    assert!(a.min_transform > 0.0);
}

#[test]
fn transform_check_rejects_fine_scales_and_two_dimensions() {
    let run = solve_error_system(&config(16, 1.0 / 16.0, 16)).unwrap();
    assert!(cole_hopf_check(&run, &ColeHopfConfig { time_steps: 16 }).is_err());
    let g = PeriodicGrid::new(2, 8).unwrap();
    let mut c = EvolutionConfig::new(g, PotentialSpec::separable_default(), vec![1.0, 0.0], 0.5);
    c.time_steps = 16;
    let run = solve_error_system(&c).unwrap();
    assert!(cole_hopf_check(&run, &ColeHopfConfig { time_steps: 16 }).is_err());
}
