//! Time-dependent error system in cell coordinates.
//!
//! With `(u1, m1, H)` the cell solution at `alpha = 1`, the rescaled errors
//! `v = u(eps y, t)/eps - P.y - (t - T) H/eps - u1` and `n = m(eps y, t) - m1`
//! are periodic on the unit torus and solve
//!
//! ```text
//! -eps v_t - lap v + H_P(y, grad v)          = V(y, m1 + n) - V(y, m1),   v(T) = -u1
//!  eps n_t - lap n - div(n (grad v + P + grad u1)) = div(m1 grad v),      n(0) = 1 - m1
//! ```
//!
//! with `H_P(y, q) = |q|^2/2 + q.(P + grad u1)`. `eps` only enters as a
//! coefficient, so the grid does not have to resolve the small scale.
//!
//! The backward step from level `k+1` to `k` uses `n^{k+1}` and linearizes
//! the Hamiltonian about `v^{k+1}`; the forward step from `k` to `k+1` is
//! fully implicit with drift built from `v^k`. This pairing makes the discrete
//! dissipation identity hold up to the linearization remainder only.

pub mod cole_hopf;
pub mod study;

use crate::cell::{potential_field, solve_cell, CellQuery, CellSolution, Tolerances};
use crate::error::{Error, Result};
use crate::grid::{
    advection_diffusion_matrix, fokker_planck_matrix, gradient, laplacian, PeriodicGrid, ScalarField, VectorField,
};
use crate::linsolve::{solve_general_with, SolverOptions, SparseOperator};
use crate::potential::PotentialSpec;

pub use cole_hopf::{cole_hopf_check, ColeHopfConfig, ColeHopfReport};
pub use study::{convergence_study, ConvergenceConfig, ConvergenceReport, ConvergenceRow};

/// Exponent of the density-error integral `int int |n|^p`.
pub const DENSITY_EXPONENT: f64 = 1.5;

/// Output stride in 2-D (every step is kept in 1-D).
pub const STORE_STRIDE_2D: usize = 8;

#[derive(Debug, Clone)]
pub struct EvolutionConfig {
    pub p: Vec<f64>,
    pub epsilon: f64,
    pub t_final: f64,
    pub grid: PeriodicGrid,
    pub time_steps: usize,
    pub potential: PotentialSpec,
    /// Space-time L2 tolerance on successive density paths.
    pub coupling_tol: f64,
    pub max_coupling_iter: usize,
    /// Under-relaxation applied to the density path between sweeps.
    pub relaxation: f64,
    pub cell_tolerances: Tolerances,
    pub solver: SolverOptions,
}

impl EvolutionConfig {
    pub fn new(grid: PeriodicGrid, potential: PotentialSpec, p: Vec<f64>, epsilon: f64) -> Self {
        Self {
            p,
            epsilon,
            t_final: 1.0,
            grid,
            time_steps: 256,
            potential,
            coupling_tol: 1e-10,
            max_coupling_iter: 300,
            relaxation: 0.5,
            cell_tolerances: Tolerances::default(),
            solver: SolverOptions::default(),
        }
    }

    /// `k` with `epsilon = 1/k`.
    pub fn cells_per_unit(&self) -> usize {
        (1.0 / self.epsilon).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        let k = (1.0 / self.epsilon).round();
        if (1.0 / k - self.epsilon).abs() > 1e-14 {
            return Err(Error::InvalidInput(format!(
                "epsilon must be 1/k for an integer k, got {}",
                self.epsilon
            )));
        }
        if self.time_steps < 8 {
            return Err(Error::InvalidInput(format!("need at least 8 time steps, got {}", self.time_steps)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidInput("horizon T must be positive".into()));
        }
        if self.p.len() != self.grid.dim() {
            return Err(Error::InvalidInput("P must match the grid dimension".into()));
        }
        if !(self.coupling_tol > 0.0) || self.max_coupling_iter == 0 {
            return Err(Error::InvalidInput("coupling tolerance and iteration cap must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidInput("relaxation must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.time_steps as f64
    }

    fn cell_query(&self) -> CellQuery {
        let mut q = CellQuery::new(self.grid, self.potential.clone(), self.p.clone(), 1.0);
        q.tolerances = self.cell_tolerances;
        q.solver = self.solver;
        q
    }
}

/// One row of the per-run diagnostic table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub energy: f64,
    /// `int |grad v|^2`.
    pub grad_v_sq: f64,
    /// `(int |n|^p)^(1/p)`.
    pub n_lp: f64,
    pub min_density: f64,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct EvolutionRun {
    pub config: EvolutionConfig,
    pub base_cell: CellSolution,
    /// Stored time levels (all in 1-D, every 8th plus the last in 2-D).
    pub times: Vec<f64>,
    pub v: Vec<ScalarField>,
    pub n: Vec<ScalarField>,
    pub energy_trace: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// `sum dt int (2 m1 + n^{k+1})/2 |grad v^k|^2`.
    pub dissipation: f64,
    /// `sum dt int [V(m1 + n^{k+1}) - V(m1)] n^{k+1}`.
    pub coupling_defect: f64,
    /// `int v n` at `t = 0` and `t = T`.
    pub pairing: (f64, f64),
    /// `sum dt int |grad v^k|^2`.
    pub grad_v_integral: f64,
    /// `sum dt int |n^{k+1}|^p`.
    pub n_p_integral: f64,
    /// `eps ||u1 + v||` in space-time L2, the error of the reconstructed value function.
    pub reconstruction_error: f64,
    pub min_density: f64,
    /// Most negative pointwise value of either dissipation integrand.
    pub min_dissipation_integrand: f64,
    /// `max_t |int n(t)|`.
    pub max_mass_drift: f64,
    pub coupling_iterations: usize,
    pub coupling_history: Vec<f64>,
    /// `n` at every step; kept only in 1-D, for the frozen-path checks.
    full_n: Option<Vec<Vec<f64>>>,
}

impl EvolutionRun {
    /// `-eps [int v n]_0^T`.
    pub fn dissipation_lhs(&self) -> f64 {
        -self.config.epsilon * (self.pairing.1 - self.pairing.0)
    }

    pub fn dissipation_rhs(&self) -> f64 {
        self.dissipation + self.coupling_defect
    }

    /// Set when an integrand that should be nonnegative dips below `-1e-10`.
    pub fn sign_flagged(&self) -> bool {
        self.min_dissipation_integrand < -1e-10
    }

    /// `max_t |E(t) - E(T)| / (1 + |E(T)|)`.
    pub fn energy_drift(&self) -> f64 {
        let last = *self.energy_trace.last().unwrap_or(&0.0);
        self.energy_trace
            .iter()
            .map(|e| (e - last).abs())
            .fold(0.0, f64::max)
            / (1.0 + last.abs())
    }

    /// Density error at every time level, when kept.
    pub fn density_path(&self) -> Option<&[Vec<f64>]> {
        self.full_n.as_deref()
    }
}

struct Workspace<'a> {
    cfg: &'a EvolutionConfig,
    m1: Vec<f64>,
    /// `P + grad u1`.
    a: VectorField,
    base_v: ScalarField,
    points: Vec<[f64; 2]>,
}

impl Workspace<'_> {
    fn coupling(&self, n: &[f64]) -> Vec<f64> {
        let d = self.cfg.grid.dim();
        (0..n.len())
            .map(|i| {
                let y = &self.points[i][..d];
                self.cfg.potential.evaluate_v(y, self.m1[i] + n[i]) - self.base_v.values()[i]
            })
            .collect()
    }

    fn drift(&self, v: &ScalarField) -> VectorField {
        let gv = gradient(v);
        let comps = (0..self.cfg.grid.dim())
            .map(|d| gv.component(d).iter().zip(self.a.component(d)).map(|(x, y)| x + y).collect())
            .collect();
        VectorField::new(self.cfg.grid, comps).unwrap()
    }
}

fn shifted_identity(a: &SparseOperator, shift: f64) -> SparseOperator {
    a.combine(1.0, &SparseOperator::identity(a.nrows()), shift)
}

fn solve(a: &SparseOperator, rhs: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    Ok(solve_general_with(a, rhs, 1e-13, opts, None)?.0)
}

/// Backward sweep for `v` given the whole density path.
fn sweep_v(ws: &Workspace, n_path: &[Vec<f64>], u1: &ScalarField) -> Result<Vec<ScalarField>> {
    let cfg = ws.cfg;
    let k_max = cfg.time_steps;
    let c = cfg.epsilon / cfg.dt();
    let mut v = vec![cfg.grid.zeros(); k_max + 1];
    v[k_max] = u1.map(|x| -x);
    for k in (0..k_max).rev() {
        let next = &v[k + 1];
        let b = ws.drift(next);
        let a = shifted_identity(&advection_diffusion_matrix(&b), c);
        let q_sq = gradient(next).norm_sq();
        let f = ws.coupling(&n_path[k + 1]);
        let rhs: Vec<f64> = (0..next.values().len())
            .map(|i| c * next.values()[i] + f[i] + 0.5 * q_sq.values()[i])
            .collect();
        v[k] = ScalarField::new(cfg.grid, solve(&a, &rhs, &cfg.solver)?)?;
    }
    Ok(v)
}

/// Forward sweep for `n` given the whole value path.
fn sweep_n(ws: &Workspace, v: &[ScalarField], n0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let cfg = ws.cfg;
    let c = cfg.epsilon / cfg.dt();
    let g = cfg.grid;
    let mut path = Vec::with_capacity(cfg.time_steps + 1);
    path.push(n0.to_vec());
    let m1_field = ScalarField::new(g, ws.m1.clone())?;
    for k in 0..cfg.time_steps {
        let b = ws.drift(&v[k]);
        let a = shifted_identity(&fokker_planck_matrix(&b), c);
        // div(m1 grad v) as a flux-form divergence
        let gv = gradient(&v[k]);
        let src = crate::grid::divergence_of_product(&m1_field, &gv)?;
        let rhs: Vec<f64> = path[k].iter().zip(src.values()).map(|(x, s)| c * x + s).collect();
        let next = solve(&a, &rhs, &cfg.solver)?;
        let min = next
            .iter()
            .zip(&ws.m1)
            .map(|(x, m)| x + m)
            .fold(f64::INFINITY, f64::min);
        if !(min >= -1e-12) {
            return Err(Error::SchemeFailure { step: k + 1, min });
        }
        path.push(next);
    }
    Ok(path)
}

fn path_distance(a: &[Vec<f64>], b: &[Vec<f64>], dt: f64, vol: f64) -> f64 {
    a.iter()
        .zip(b)
        .skip(1)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum::<f64>()
        .mul_add(dt * vol, 0.0)
        .sqrt()
}

/// `E(v, n) = int (n + m1) H_P(grad v) + grad v . grad(n + m1) - Phi1(y, n)`.
///
/// The cross term is evaluated as `<-lap v, n + m1>`, the summation-by-parts
/// form that matches the stencils of the time stepper.
pub fn energy(base: &CellSolution, p: &[f64], potential: &PotentialSpec, v: &ScalarField, n: &ScalarField) -> f64 {
    let g = *v.grid();
    let d = g.dim();
    let a = base.drift(p);
    let gv = gradient(v);
    let lap = laplacian(v);
    let mut acc = 0.0;
    for i in 0..g.total_points() {
        let y = g.point(i);
        let rho = n.values()[i] + base.m.values()[i];
        let mut hp = 0.0;
        for k in 0..d {
            let q = gv.component(k)[i];
            hp += 0.5 * q * q + q * a.component(k)[i];
        }
        acc += rho * hp - lap.values()[i] * rho - potential.phi_shifted(&y[..d], n.values()[i], base.m.values()[i]);
    }
    acc * g.cell_volume()
}

/// Energy at every stored level of a run.
pub fn energy_trace(run: &EvolutionRun) -> Vec<f64> {
    run.v
        .iter()
        .zip(&run.n)
        .map(|(v, n)| energy(&run.base_cell, &run.config.p, &run.config.potential, v, n))
        .collect()
}

/// `max|u1| + max|grad u1| + max|D^2 u1| + |P|^2/2`, the bound on `E(T)`.
pub fn terminal_energy_bound(base: &CellSolution, p: &[f64]) -> f64 {
    let u = &base.u;
    let g = *u.grid();
    let gu = gradient(u);
    let mut c1: f64 = 0.0;
    let mut c2: f64 = 0.0;
    for i in 0..g.total_points() {
        let norm: f64 = (0..g.dim()).map(|k| gu.component(k)[i].powi(2)).sum::<f64>().sqrt();
        c1 = c1.max(norm);
    }
    for k in 0..g.dim() {
        for l in 0..g.dim() {
            let col = ScalarField::new(g, gu.component(l).to_vec()).unwrap();
            let second = gradient(&col);
            c2 = c2.max(second.component(k).iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
        }
    }
    u.max_abs() + c1 + c2 + 0.5 * p.iter().map(|x| x * x).sum::<f64>()
}

/// The bound `int (lap u1 + H_P(-grad u1)) (n(T) + m1)` on the terminal energy.
pub fn terminal_energy_estimate(run: &EvolutionRun) -> f64 {
    let base = &run.base_cell;
    let g = *base.u.grid();
    let a = base.drift(&run.config.p);
    let gu = gradient(&base.u);
    let lap = laplacian(&base.u);
    let n_t = run.n.last().expect("run has stored levels");
    let mut acc = 0.0;
    for i in 0..g.total_points() {
        let mut hp = 0.0;
        for k in 0..g.dim() {
            let q = -gu.component(k)[i];
            hp += 0.5 * q * q + q * a.component(k)[i];
        }
        acc += (lap.values()[i] + hp) * (n_t.values()[i] + base.m.values()[i]);
    }
    acc * g.cell_volume()
}

pub fn solve_error_system(cfg: &EvolutionConfig) -> Result<EvolutionRun> {
    cfg.validate()?;
    let base = solve_cell(&cfg.cell_query())?;
    solve_error_system_with_base(cfg, base)
}

/// [`solve_error_system`] reusing an already computed cell solution at `alpha = 1`.
pub fn solve_error_system_with_base(cfg: &EvolutionConfig, base: CellSolution) -> Result<EvolutionRun> {
    cfg.validate()?;
    let g = cfg.grid;
    let dt = cfg.dt();
    let vol = g.cell_volume();
    let points: Vec<[f64; 2]> = (0..g.total_points()).map(|i| g.point(i)).collect();
    let base_v = potential_field(&cfg.potential, &base.m, 1.0);
    let ws = Workspace {
        cfg,
        m1: base.m.values().to_vec(),
        a: base.drift(&cfg.p),
        base_v,
        points,
    };
    let n0: Vec<f64> = ws.m1.iter().map(|m| 1.0 - m).collect();

    let mut n_path: Vec<Vec<f64>> = vec![vec![0.0; g.total_points()]; cfg.time_steps + 1];
    n_path[0] = n0.clone();
    let mut history = Vec::new();
    let mut result = None;
    for it in 1..=cfg.max_coupling_iter {
        let v = sweep_v(&ws, &n_path, &base.u)?;
        let fresh = sweep_n(&ws, &v, &n0)?;
        let change = path_distance(&fresh, &n_path, dt, vol);
        history.push(change);
        if change <= cfg.coupling_tol {
            result = Some((v, fresh, it));
            break;
        }
        let th = cfg.relaxation;
        for (old, new) in n_path.iter_mut().zip(&fresh) {
            for (o, f) in old.iter_mut().zip(new) {
                *o = (1.0 - th) * *o + th * f;
            }
        }
    }
    let Some((v, n_full, iterations)) = result else {
        return Err(Error::Coupling {
            iterations: cfg.max_coupling_iter,
            last_change: *history.last().unwrap_or(&f64::NAN),
            history,
        });
    };

    // space-time functionals with the same level pairing as the scheme
    let mut dissipation = 0.0;
    let mut coupling_defect = 0.0;
    let mut grad_v_integral = 0.0;
    let mut n_p_integral = 0.0;
    let mut recon = 0.0;
    let mut min_integrand = f64::INFINITY;
    for k in 0..cfg.time_steps {
        let q_sq = gradient(&v[k]).norm_sq();
        let nk1 = &n_full[k + 1];
        let f = ws.coupling(nk1);
        for i in 0..g.total_points() {
            let d = (2.0 * ws.m1[i] + nk1[i]) / 2.0 * q_sq.values()[i];
            dissipation += d;
            coupling_defect += f[i] * nk1[i];
            min_integrand = min_integrand.min(d).min(f[i] * nk1[i]);
            grad_v_integral += q_sq.values()[i];
            n_p_integral += nk1[i].abs().powf(DENSITY_EXPONENT);
            let r = base.u.values()[i] + v[k].values()[i];
            recon += r * r;
        }
    }
    let w = dt * vol;
    dissipation *= w;
    coupling_defect *= w;
    grad_v_integral *= w;
    n_p_integral *= w;
    let reconstruction_error = cfg.epsilon * (recon * w).sqrt();

    let pair = |k: usize| -> f64 { v[k].values().iter().zip(&n_full[k]).map(|(a, b)| a * b).sum::<f64>() * vol };
    let pairing = (pair(0), pair(cfg.time_steps));

    let stride = if g.dim() == 1 { 1 } else { STORE_STRIDE_2D };
    let mut stored: Vec<usize> = (0..=cfg.time_steps).step_by(stride).collect();
    if *stored.last().unwrap() != cfg.time_steps {
        stored.push(cfg.time_steps);
    }
    let mut times = Vec::with_capacity(stored.len());
    let mut v_out = Vec::with_capacity(stored.len());
    let mut n_out = Vec::with_capacity(stored.len());
    let mut diagnostics = Vec::with_capacity(stored.len());
    let mut energy_values = Vec::with_capacity(stored.len());
    let mut min_density = f64::INFINITY;
    let mut max_mass_drift: f64 = 0.0;
    for nk in &n_full {
        let mass: f64 = nk.iter().sum::<f64>() * vol;
        max_mass_drift = max_mass_drift.max(mass.abs());
        let md = nk.iter().zip(&ws.m1).map(|(x, m)| x + m).fold(f64::INFINITY, f64::min);
        min_density = min_density.min(md);
    }
    for &k in &stored {
        let t = k as f64 * dt;
        let nf = ScalarField::new(g, n_full[k].clone())?;
        let e = energy(&base, &cfg.p, &cfg.potential, &v[k], &nf);
        let grad_v_sq = gradient(&v[k]).norm_sq().values().iter().sum::<f64>() * vol;
        let n_lp = (n_full[k].iter().map(|x| x.abs().powf(DENSITY_EXPONENT)).sum::<f64>() * vol)
            .powf(1.0 / DENSITY_EXPONENT);
        let md = n_full[k].iter().zip(&ws.m1).map(|(x, m)| x + m).fold(f64::INFINITY, f64::min);
        let mass = n_full[k].iter().sum::<f64>() * vol;
        diagnostics.push(StepDiagnostics {
            t,
            energy: e,
            grad_v_sq,
            n_lp,
            min_density: md,
            mass,
        });
        energy_values.push(e);
        times.push(t);
        v_out.push(v[k].clone());
        n_out.push(nf);
    }
    let full_n = if g.dim() == 1 { Some(n_full) } else { None };

    Ok(EvolutionRun {
        config: cfg.clone(),
        base_cell: base,
        times,
        v: v_out,
        n: n_out,
        energy_trace: energy_values,
        diagnostics,
        dissipation,
        coupling_defect,
        pairing,
        grad_v_integral,
        n_p_integral,
        reconstruction_error,
        min_density,
        min_dissipation_integrand: min_integrand,
        max_mass_drift,
        coupling_iterations: iterations,
        coupling_history: history,
        full_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(potential: PotentialSpec, eps: f64, steps: usize) -> EvolutionConfig {
        let mut c = EvolutionConfig::new(PeriodicGrid::new(1, 32).unwrap(), potential, vec![1.0], eps);
        c.time_steps = steps;
        c
    }

    #[test]
    fn zero_potential_is_exactly_zero() {
        let run = solve_error_system(&cfg(PotentialSpec::zero(), 0.125, 32)).unwrap();
        for (v, n) in run.v.iter().zip(&run.n) {
            assert!(v.max_abs() <= 1e-12 && n.max_abs() <= 1e-12);
        }
        assert!(run.energy_trace.iter().all(|e| e.abs() <= 1e-12));
        assert_eq!(run.coupling_iterations, 1);
    }

    #[test]
    fn y_independent_is_exactly_zero() {
        let run = solve_error_system(&cfg(PotentialSpec::y_independent_default(), 0.25, 16)).unwrap();
        assert!(run.v.iter().all(|v| v.max_abs() <= 1e-12));
        assert!(run.n.iter().all(|n| n.max_abs() <= 1e-12));
    }

    #[test]
    fn data_and_invariants() {
        let run = solve_error_system(&cfg(PotentialSpec::separable_default(), 0.25, 64)).unwrap();
        let last = run.v.last().unwrap();
        assert!(last.max_abs_diff(&run.base_cell.u.map(|x| -x)) == 0.0);
        let first = &run.n[0];
        assert!(first.max_abs_diff(&run.base_cell.m.map(|m| 1.0 - m)) == 0.0);
        assert!(run.max_mass_drift <= 1e-10);
        assert!(run.min_density > 0.0 && !run.sign_flagged());
        assert!(run.dissipation >= 0.0 && run.coupling_defect >= -1e-10);
        assert_eq!(run.times.len(), 65);
        assert_eq!(energy_trace(&run), run.energy_trace);
    }

    #[test]
    fn dissipation_identity_is_first_order_in_time() {
        let defect = |steps| {
            let run = solve_error_system(&cfg(PotentialSpec::separable_default(), 0.25, steps)).unwrap();
            (run.dissipation_lhs() - run.dissipation_rhs()).abs()
        };
        let (a, b) = (defect(64), defect(128));
        assert!(a / b > 1.5, "{a} {b}");
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = cfg(PotentialSpec::zero(), 0.3, 32);
        assert!(solve_error_system(&c).is_err());
        c.epsilon = 0.25;
        c.time_steps = 4;
        assert!(solve_error_system(&c).is_err());
        c.time_steps = 16;
        c.relaxation = 0.0;
        assert!(solve_error_system(&c).is_err());
    }

    #[test]
    fn coupling_cap_reports_history() {
        let mut c = cfg(PotentialSpec::separable_default(), 0.25, 16);
        c.max_coupling_iter = 1;
        match solve_error_system(&c) {
            Err(Error::Coupling { history, .. }) => assert_eq!(history.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_dimensional_run_stores_every_eighth_level() {
        let g = PeriodicGrid::new(2, 8).unwrap();
        let mut c = EvolutionConfig::new(g, PotentialSpec::separable_default(), vec![1.0, 0.5], 0.5);
        c.time_steps = 20;
        let run = solve_error_system(&c).unwrap();
        assert_eq!(run.times.len(), 4);
        assert!((run.times[3] - 1.0).abs() < 1e-15);
        assert!(run.density_path().is_none());
        assert!(run.max_mass_drift <= 1e-10);
    }
}
