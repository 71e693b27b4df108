//! Cole-Hopf cross-check of the value equation along a frozen density path.
//!
//! In original variables, on one macro period holding `k = 1/eps` cells, the
//! periodic part `w = u - P.x` solves
//! `-w_t - eps lap w + |grad w + P|^2/2 = V(x/eps, m(x, t))`, `w(T) = 0`.
//! With `psi = exp(-w/(2 eps))` this becomes linear:
//! `-psi_t - eps lap psi + P.grad psi - |P|^2 psi/(4 eps) + V psi/(2 eps) = 0`.
//! The linear problem is stepped by Strang splitting, exact reaction factors
//! around a Crank-Nicolson transport-diffusion stage, tracking a log scale so that `psi`
//! never under- or overflows. The result is compared with a direct
//! semi-implicit solve of the nonlinear equation on the same grid.

use super::EvolutionRun;
use crate::error::{Error, Result};
use crate::grid::{advection_matrix, gradient, laplacian_matrix, PeriodicGrid, ScalarField, VectorField};
use crate::linsolve::{solve_general_with, SolverOptions, SparseOperator};

/// Macro periods with more cells than this are rejected.
pub const MAX_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColeHopfConfig {
    pub time_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColeHopfReport {
    pub time_steps: usize,
    pub macro_points: usize,
    /// `max_{t, x} |w_transform - w_direct|`.
    pub defect: f64,
    pub min_transform: f64,
    /// Terminal-to-initial change of the tracked log scale.
    pub log_scale: f64,
}

/// Both solutions for a given frozen coupling `V(x, t)` on a 1-D macro grid.
///
/// Returns `(w_transform, w_direct)` at every level, index 0 being `t = 0`.
pub fn compare_on_frozen(
    grid: PeriodicGrid,
    epsilon: f64,
    p: f64,
    t_final: f64,
    steps: usize,
    coupling: impl Fn(f64) -> Vec<f64>,
    solver: &SolverOptions,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64, f64)> {
    if grid.dim() != 1 {
        return Err(Error::InvalidInput("the transform check is one-dimensional".into()));
    }
    let n = grid.total_points();
    let dt = t_final / steps as f64;
    let identity = SparseOperator::identity(n);
    let half_p2 = 0.5 * p * p;

    // transformed problem: Strang splitting, Crank-Nicolson for transport-diffusion
    let diffusion = laplacian_matrix(&grid);
    let transport = advection_matrix(&VectorField::uniform(grid, &[p])?).combine(1.0, &diffusion, -epsilon);
    let implicit_half = transport.combine(0.5, &identity, 1.0 / dt);
    let explicit_half = transport.combine(-0.5, &identity, 1.0 / dt);
    let reaction = |x: &mut [f64], v: &[f64]| {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi *= (-(dt / (4.0 * epsilon)) * (vi - half_p2)).exp();
        }
    };
    let mut psi = vec![1.0; n];
    let mut scale = 0.0;
    let mut min_transform = 1.0f64;
    let mut w_transform = vec![vec![0.0; n]; steps + 1];
    let mut later = coupling(t_final);
    let mut averaged = Vec::with_capacity(steps);
    for k in (0..steps).rev() {
        let earlier = coupling(k as f64 * dt);
        reaction(&mut psi, &later);
        let rhs = explicit_half.matvec(&psi);
        let (mut next, _) = solve_general_with(&implicit_half, &rhs, 1e-14, solver, None)?;
        reaction(&mut next, &earlier);
        let top = next.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let low = next.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if !(low > 0.0) || !top.is_finite() {
            return Err(Error::TransformBreakdown { step: k, value: low });
        }
        min_transform = min_transform.min(low / top);
        scale += top.ln();
        next.iter_mut().for_each(|x| *x /= top);
        w_transform[k] = next.iter().map(|x| -2.0 * epsilon * (x.ln() + scale)).collect();
        psi = next;
        averaged.push(later.iter().zip(&earlier).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<f64>>());
        later = earlier;
    }
    averaged.reverse();

    // direct semi-implicit solve, Hamiltonian linearized about the later level
    let mut w_direct = vec![vec![0.0; n]; steps + 1];
    for k in (0..steps).rev() {
        let later = ScalarField::new(grid, w_direct[k + 1].clone())?;
        let q = gradient(&later);
        let b = q.shifted(&[p]);
        let a = advection_matrix(&b)
            .combine(1.0, &diffusion, -epsilon)
            .combine(1.0, &identity, 1.0 / dt);
        let v = &averaged[k];
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let qi = q.component(0)[i];
                later.values()[i] / dt + v[i] + 0.5 * qi * qi - half_p2
            })
            .collect();
        w_direct[k] = solve_general_with(&a, &rhs, 1e-14, solver, None)?.0;
    }
    Ok((w_transform, w_direct, min_transform, scale))
}

/// Runs the check on the density path of a completed 1-D run.
pub fn cole_hopf_check(run: &EvolutionRun, cfg: &ColeHopfConfig) -> Result<ColeHopfReport> {
    let ec = &run.config;
    let k = ec.cells_per_unit();
    if k > MAX_CELLS {
        return Err(Error::InvalidInput(format!("1/eps = {k} exceeds the {MAX_CELLS} cells of the check")));
    }
    if cfg.time_steps < 2 {
        return Err(Error::InvalidInput("need at least two time steps".into()));
    }
    let path = run
        .density_path()
        .ok_or_else(|| Error::InvalidInput("the transform check needs a 1-D run".into()))?;
    let cell = ec.grid;
    let nc = cell.total_points();
    let macro_grid = PeriodicGrid::new(1, k * nc)?;
    let m1 = run.base_cell.m.values();
    let run_dt = ec.dt();
    let coupling = |t: f64| -> Vec<f64> {
        let s = (t / run_dt).clamp(0.0, ec.time_steps as f64);
        let lo = (s.floor() as usize).min(ec.time_steps - 1);
        let frac = s - lo as f64;
        (0..k * nc)
            .map(|j| {
                let i = j % nc;
                let n = (1.0 - frac) * path[lo][i] + frac * path[lo + 1][i];
                ec.potential.evaluate_v(&cell.point(i)[..1], m1[i] + n)
            })
            .collect()
    };
    let (wt, wd, min_transform, log_scale) =
        compare_on_frozen(macro_grid, ec.epsilon, ec.p[0], ec.t_final, cfg.time_steps, coupling, &ec.solver)?;
    let defect = wt
        .iter()
        .zip(&wd)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok(ColeHopfReport {
        time_steps: cfg.time_steps,
        macro_points: k * nc,
        defect,
        min_transform,
        log_scale,
    })
}
