//! Battery of closed-form and structural checks, fast enough for every build.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::{check_variational_identity, solve_cell, CellQuery};
use crate::evolve::cole_hopf::compare_on_frozen;
use crate::evolve::{solve_error_system, EvolutionConfig};
use crate::grid::{
    advection_diffusion_matrix, fokker_planck_matrix, gradient, integrate, laplacian_matrix, PeriodicGrid,
    VectorField,
};
use crate::io::{format_number, ExperimentConfig};
use crate::linsolve::{SolverOptions, SparseOperator};
use crate::potential::{gauss_integral, PotentialSpec};
use crate::sensitivity::solve_sensitivity_P;

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    /// Corrupts one entry of the transport adjoint before comparison.
    pub inject_fault: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome.is_ok())
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| c.outcome.is_err()).map(|c| c.name).collect()
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .checks
            .iter()
            .map(|c| match &c.outcome {
                Ok(()) => format!("PASS {}", c.name),
                Err(why) => format!("FAIL {}: {why}", c.name),
            })
            .collect();
        let passed = self.checks.iter().filter(|c| c.outcome.is_ok()).count();
        out.push(format!("{passed}/{} checks passed", self.checks.len()));
        out
    }
}

type Check = Result<(), String>;

fn within(label: &str, value: f64, bound: f64) -> Check {
    if value <= bound {
        Ok(())
    } else {
        Err(format!("{label} = {} exceeds {}", format_number(value), format_number(bound)))
    }
}

fn random_drift(grid: PeriodicGrid, rng: &mut ChaCha8Rng) -> VectorField {
    let comps = (0..grid.dim())
        .map(|_| (0..grid.total_points()).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    VectorField::new(grid, comps).expect("drift shape")
}

fn flip_one(a: &SparseOperator) -> SparseOperator {
    let mut t: Vec<(usize, usize, f64)> = a.triplets().collect();
    if let Some(entry) = t.iter_mut().find(|(r, c, v)| r != c && *v != 0.0) {
        entry.2 = -entry.2;
    }
    SparseOperator::from_triplets(a.nrows(), a.ncols(), &t).expect("same pattern")
}

fn adjoint(dim: usize, opts: &SelftestOptions, rng: &mut ChaCha8Rng) -> Check {
    let g = PeriodicGrid::new(dim, 16).map_err(|e| e.to_string())?;
    let w = random_drift(g, rng);
    let mut fp = fokker_planck_matrix(&w);
    if opts.inject_fault {
        fp = flip_one(&fp);
    }
    within("max |FP - L^T|", fp.max_abs_diff(&advection_diffusion_matrix(&w).transpose()), 1e-13)
}

fn fp_conserves_mass(rng: &mut ChaCha8Rng) -> Check {
    let g = PeriodicGrid::new(2, 16).map_err(|e| e.to_string())?;
    let fp = fokker_planck_matrix(&random_drift(g, rng));
    let ones = vec![1.0; g.total_points()];
    let col_sums = fp.transpose().matvec(&ones);
    within("max column sum", col_sums.iter().fold(0.0, |a, b| a.max(b.abs())), 1e-9)
}

fn laplacian_structure() -> Check {
    let g = PeriodicGrid::new(2, 16).map_err(|e| e.to_string())?;
    let lap = laplacian_matrix(&g);
    if !lap.is_symmetric(0.0) {
        return Err("laplacian is not symmetric".into());
    }
    let r = lap.matvec(&vec![1.0; g.total_points()]);
    within("|lap 1|", r.iter().fold(0.0, |a, b| a.max(b.abs())), 1e-9)?;
    let grad = gradient(&g.sample(|_| 3.5));
    within("|grad const|", grad.norm_sq().max_abs(), 0.0)
}

fn zero_cell(p: f64, alpha: f64) -> Check {
    let g = PeriodicGrid::new(1, 32).map_err(|e| e.to_string())?;
    let q = CellQuery::new(g, PotentialSpec::zero(), vec![p], alpha);
    let s = solve_cell(&q).map_err(|e| e.to_string())?;
    within("|H - P^2/2|", (s.h_bar - 0.5 * p * p).abs(), 1e-10)?;
    within("|b - P|", (s.b_bar[0] - p).abs(), 1e-10)?;
    within("|u|", s.u.max_abs(), 1e-10)?;
    within("|m - 1|", s.m.map(|x| x - 1.0).max_abs(), 1e-10)
}

fn y_independent_cell() -> Check {
    let g = PeriodicGrid::new(2, 8).map_err(|e| e.to_string())?;
    let pot = PotentialSpec::y_independent_default();
    let alpha = 1.5;
    let q = CellQuery::new(g, pot.clone(), vec![1.0, -2.0], alpha);
    let s = solve_cell(&q).map_err(|e| e.to_string())?;
    let expected = 2.5 - pot.evaluate_v(&[0.0, 0.0], alpha);
    within("|H - closed form|", (s.h_bar - expected).abs(), 1e-10)
}

fn generic_mass() -> Check {
    let g = PeriodicGrid::new(1, 32).map_err(|e| e.to_string())?;
    let q = CellQuery::new(g, PotentialSpec::separable_default(), vec![1.0], 1.0);
    let s = solve_cell(&q).map_err(|e| e.to_string())?;
    within("|int m - 1|", (integrate(&s.m) - 1.0).abs(), 1e-10)?;
    if s.m.min() <= 0.0 {
        return Err("density not positive".into());
    }
    Ok(())
}

fn variational_trivial() -> Check {
    let g = PeriodicGrid::new(1, 16).map_err(|e| e.to_string())?;
    let pot = PotentialSpec::y_independent_default();
    let q = CellQuery::new(g, pot, vec![2.0], 1.0);
    let s = solve_cell(&q).map_err(|e| e.to_string())?;
    within("variational defect", check_variational_identity(&s, &q), 1e-6)
}

fn primitive_matches_quadrature() -> Check {
    let pot = PotentialSpec::separable_default();
    let y = [0.3];
    let closed = pot.phi_alpha(&y, 1.7, 0.8);
    let quad = gauss_integral(|s| pot.evaluate_v(&y, 0.8 * s), 0.0, 1.7, 24);
    within("|Phi - quadrature|", (closed - quad).abs(), 1e-12)
}

fn sensitivity_zero() -> Check {
    let g = PeriodicGrid::new(1, 16).map_err(|e| e.to_string())?;
    let q = CellQuery::new(g, PotentialSpec::zero(), vec![1.25], 1.0);
    let base = solve_cell(&q).map_err(|e| e.to_string())?;
    let s = solve_sensitivity_P(&base, &q, 0).map_err(|e| e.to_string())?;
    within("|dH/dP - P|", (s.constant - 1.25).abs(), 1e-10)
}

fn evolve_zero() -> Check {
    let g = PeriodicGrid::new(1, 16).map_err(|e| e.to_string())?;
    let mut c = EvolutionConfig::new(g, PotentialSpec::zero(), vec![1.0], 0.25);
    c.time_steps = 16;
    let run = solve_error_system(&c).map_err(|e| e.to_string())?;
    let worst = run
        .v
        .iter()
        .chain(&run.n)
        .map(|f| f.max_abs())
        .fold(0.0, f64::max);
    within("max |v|, |n|", worst, 1e-12)
}

fn transform_constant() -> Check {
    let g = PeriodicGrid::new(1, 16).map_err(|e| e.to_string())?;
    let (wt, wd, _, _) = compare_on_frozen(g, 0.5, 1.0, 1.0, 16, |_| vec![1.75; 16], &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    let worst = wt
        .iter()
        .zip(&wd)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    within("transform defect", worst, 1e-8)?;
    within("|w(0) - (V - P^2/2) T|", (wd[0][0] - 1.25).abs(), 1e-8)
}

fn config_round_trip() -> Check {
    let c = ExperimentConfig::default();
    let text = c.to_canonical().map_err(|e| e.to_string())?;
    let back = ExperimentConfig::parse(&text).map_err(|e| e.to_string())?;
    if back != c || back.to_canonical().map_err(|e| e.to_string())? != text {
        return Err("config does not survive a round trip".into());
    }
    Ok(())
}

fn number_format(rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..1000 {
        let x: f64 = rng.gen_range(-1e6..1e6) * 10f64.powi(rng.gen_range(-200..200));
        let s = format_number(x);
        if s.parse::<f64>().ok() != Some(x) {
            return Err(format!("{x:?} printed as {s}"));
        }
    }
    Ok(())
}

pub fn run(opts: &SelftestOptions) -> SelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    let mut push = |name: &'static str, outcome: Check| checks.push(CheckResult { name, outcome });
    push("adjoint-1d", adjoint(1, opts, &mut rng));
    push("adjoint-2d", adjoint(2, opts, &mut rng));
    push("fokker-planck-mass", fp_conserves_mass(&mut rng));
    push("laplacian-structure", laplacian_structure());
    push("zero-potential-cell", zero_cell(1.0, 1.0));
    push("zero-potential-alpha0", zero_cell(2.0, 0.0));
    push("zero-potential-at-rest", zero_cell(0.0, 1.0));
    push("y-independent-cell", y_independent_cell());
    push("cell-mass", generic_mass());
    push("variational-trivial", variational_trivial());
    push("primitive-quadrature", primitive_matches_quadrature());
    push("sensitivity-zero", sensitivity_zero());
    push("evolve-zero", evolve_zero());
    push("transform-constant", transform_constant());
    push("config-round-trip", config_round_trip());
    push("number-format", number_format(&mut rng));
    SelftestReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes() {
        let r = run(&SelftestOptions::default());
        assert!(r.all_passed(), "{:?}", r.lines());
        assert!(r.checks.len() >= 12);
    }

    #[test]
    fn fault_is_caught() {
        let r = run(&SelftestOptions {
            inject_fault: true,
            seed: 3,
        });
        assert_eq!(r.failed(), vec!["adjoint-1d", "adjoint-2d"]);
    }
}
