//! Ergodic cell problem: for momentum `P` and mass level `alpha`, find
//! `(u, m, H)` with
//!
//! ```text
//! -lap u + |grad u + P|^2 / 2 - V(y, alpha m) = H
//! -lap m - div(m (grad u + P))             = 0
//! int u = 0,  int m = 1
//! ```
//!
//! solved by damped Picard iteration on `m`. Each sweep runs Newton on
//! `(u, H)` for the frozen density, then takes the normalized kernel of the
//! discrete Fokker-Planck operator.

use crate::error::{Error, Result};
use crate::grid::{
    advection_diffusion_matrix, fokker_planck_matrix, gradient, integrate, laplacian, PeriodicGrid, ScalarField,
    VectorField,
};
use crate::linsolve::{solve_augmented_mean_zero_with, solve_kernel_normalized_with, SolverOptions};
use crate::potential::{PotentialKind, PotentialSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Sup-norm target for the HJB residual inside Newton (relative to `1 + |H|`).
    pub newton_tol: f64,
    /// Sup-norm target for the change in `m` between Picard sweeps.
    pub fixedpoint_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            fixedpoint_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellQuery {
    pub p: Vec<f64>,
    pub alpha: f64,
    pub grid: PeriodicGrid,
    pub potential: PotentialSpec,
    pub tolerances: Tolerances,
    /// Initial Picard relaxation; halved whenever the change grows.
    pub damping: f64,
    pub max_outer_iter: usize,
    pub max_newton_iter: usize,
    pub solver: SolverOptions,
}

impl CellQuery {
    pub fn new(grid: PeriodicGrid, potential: PotentialSpec, p: Vec<f64>, alpha: f64) -> Self {
        Self {
            p,
            alpha,
            grid,
            potential,
            tolerances: Tolerances::default(),
            damping: 0.5,
            max_outer_iter: 2000,
            max_newton_iter: 60,
            solver: SolverOptions::default(),
        }
    }

    /// Same query at a different point `(P, alpha)`.
    pub fn at(&self, p: Vec<f64>, alpha: f64) -> Self {
        Self { p, alpha, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != self.grid.dim() {
            return Err(Error::InvalidInput(format!(
                "P has {} components, grid dimension is {}",
                self.p.len(),
                self.grid.dim()
            )));
        }
        if self.p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("P must be finite".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        let t = self.tolerances;
        if !(t.newton_tol > 0.0 && t.fixedpoint_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.potential.min_dim() > self.grid.dim() {
            return Err(Error::InvalidInput(format!(
                "potential varies along axis {} but the grid is {}-dimensional",
                self.potential.min_dim(),
                self.grid.dim()
            )));
        }
        if self.max_outer_iter == 0 || self.max_newton_iter == 0 {
            return Err(Error::InvalidInput("iteration caps must be positive".into()));
        }
        Ok(())
    }

    pub fn p_norm_sq(&self) -> f64 {
        self.p.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// Sup norm of the HJB residual at the returned `(u, H, m)`.
    pub hjb: f64,
    /// Sup norm of the Fokker-Planck residual at the returned `(u, m)`.
    pub fp: f64,
}

#[derive(Debug, Clone)]
pub struct CellSolution {
    pub u: ScalarField,
    pub m: ScalarField,
    pub h_bar: f64,
    pub b_bar: Vec<f64>,
    pub residuals: Residuals,
    /// Picard sweeps taken (1 when `alpha = 0`).
    pub iterations: usize,
    /// Sup-norm change in `m` at each sweep.
    pub history: Vec<f64>,
}

impl CellSolution {
    /// `grad u + P`.
    pub fn drift(&self, p: &[f64]) -> VectorField {
        gradient(&self.u).shifted(p)
    }

    /// `int m^2`.
    pub fn m_l2_sq(&self) -> f64 {
        integrate(&self.m.map(|v| v * v))
    }
}

/// Pointwise `V(y, alpha m)`.
pub fn potential_field(potential: &PotentialSpec, m: &ScalarField, alpha: f64) -> ScalarField {
    let g = *m.grid();
    let values = (0..g.total_points())
        .map(|i| {
            let y = g.point(i);
            potential.evaluate_v(&y[..g.dim()], alpha * m.values()[i])
        })
        .collect();
    ScalarField::new(g, values).expect("same grid")
}

/// Pointwise `V_m(y, alpha m)`.
pub fn potential_derivative_field(potential: &PotentialSpec, m: &ScalarField, alpha: f64) -> ScalarField {
    let g = *m.grid();
    let values = (0..g.total_points())
        .map(|i| {
            let y = g.point(i);
            potential.evaluate_vm(&y[..g.dim()], alpha * m.values()[i])
        })
        .collect();
    ScalarField::new(g, values).expect("same grid")
}

/// `-lap u + |grad u + P|^2 / 2 - coupling - H`.
pub fn hjb_residual(u: &ScalarField, h_bar: f64, p: &[f64], coupling: &ScalarField) -> ScalarField {
    let lap = laplacian(u);
    let w = gradient(u).shifted(p).norm_sq();
    let values = (0..u.values().len())
        .map(|i| -lap.values()[i] + 0.5 * w.values()[i] - coupling.values()[i] - h_bar)
        .collect();
    ScalarField::new(*u.grid(), values).expect("same grid")
}

/// Newton on `(u, H)` for a frozen coupling term `V(y, alpha m)`.
fn solve_hjb(
    q: &CellQuery,
    coupling: &ScalarField,
    u0: ScalarField,
    h0: f64,
) -> Result<(ScalarField, f64, f64)> {
    let mut u = u0;
    let mut h = h0;
    let mut res = hjb_residual(&u, h, &q.p, coupling);
    let mut norm = res.max_abs();
    for it in 0..q.max_newton_iter {
        if norm <= q.tolerances.newton_tol * (1.0 + h.abs()) {
            return Ok((u, h, norm));
        }
        let w = gradient(&u).shifted(&q.p);
        let jac = advection_diffusion_matrix(&w);
        let rhs: Vec<f64> = res.values().iter().map(|v| -v).collect();
        // J du - dH = -R; the bordered solve returns lambda = -dH
        let (du, lambda) = solve_augmented_mean_zero_with(&jac, &rhs, &q.solver).map_err(|e| match e {
            Error::DegenerateOperator(_) => Error::DivergedHjb {
                iterations: it,
                residual: norm,
            },
            other => other,
        })?;
        for (ui, di) in u.values_mut().iter_mut().zip(&du) {
            *ui += di;
        }
        h -= lambda;
        res = hjb_residual(&u, h, &q.p, coupling);
        let new_norm = res.max_abs();
        if !new_norm.is_finite() {
            return Err(Error::DivergedHjb {
                iterations: it + 1,
                residual: new_norm,
            });
        }
        // quadratic convergence stalls at roundoff; accept a plateau near tolerance
        if new_norm >= norm && new_norm <= 1e3 * q.tolerances.newton_tol * (1.0 + h.abs()) {
            return Ok((u, h, new_norm));
        }
        norm = new_norm;
    }
    if norm <= q.tolerances.newton_tol * (1.0 + h.abs()) {
        return Ok((u, h, norm));
    }
    Err(Error::DivergedHjb {
        iterations: q.max_newton_iter,
        residual: norm,
    })
}

fn solve_density(q: &CellQuery, u: &ScalarField) -> Result<(ScalarField, f64)> {
    let w = gradient(u).shifted(&q.p);
    let fp = fokker_planck_matrix(&w);
    let m = solve_kernel_normalized_with(&fp, q.grid.cell_volume(), &q.solver).map_err(|e| match e {
        Error::PositivityViolation { min } => Error::CoarseGrid(format!(
            "Fokker-Planck kernel has min {min:e}; refine the grid or reduce |P|"
        )),
        other => other,
    })?;
    let fp_res = fp.matvec(&m).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok((ScalarField::new(q.grid, m)?, fp_res))
}

/// `int m (grad u + P)`.
pub fn effective_drift(u: &ScalarField, m: &ScalarField, p: &[f64]) -> Vec<f64> {
    let w = gradient(u).shifted(p);
    let vol = u.grid().cell_volume();
    (0..u.grid().dim())
        .map(|d| w.component(d).iter().zip(m.values()).map(|(a, b)| a * b).sum::<f64>() * vol)
        .collect()
}

pub fn solve_cell(q: &CellQuery) -> Result<CellSolution> {
    solve_cell_from(q, None)
}

/// [`solve_cell`] started from a previous solution (same grid) instead of the
/// `V = 0` state.
pub fn solve_cell_from(q: &CellQuery, guess: Option<&CellSolution>) -> Result<CellSolution> {
    q.validate()?;
    let g = q.grid;
    let (mut u, mut h, mut m_prev) = match guess {
        Some(s) if s.u.grid() == &g => (s.u.clone(), s.h_bar, s.m.clone()),
        _ => (g.zeros(), 0.5 * q.p_norm_sq(), ScalarField::constant(g, 1.0)),
    };

    if q.alpha == 0.0 {
        let coupling = potential_field(&q.potential, &m_prev, 0.0);
        let (u1, h1, hjb_res) = solve_hjb(q, &coupling, u, h)?;
        let (m, fp_res) = solve_density(q, &u1)?;
        let b_bar = effective_drift(&u1, &m, &q.p);
        return Ok(CellSolution {
            u: u1,
            m,
            h_bar: h1,
            b_bar,
            residuals: Residuals {
                hjb: hjb_res,
                fp: fp_res,
            },
            iterations: 1,
            history: vec![0.0],
        });
    }

    let mut theta = q.damping;
    let mut history = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut last_hjb = f64::INFINITY;
    for it in 1..=q.max_outer_iter {
        let coupling = potential_field(&q.potential, &m_prev, q.alpha);
        let (u1, h1, _) = solve_hjb(q, &coupling, u, h)?;
        let (m_new, fp_res) = solve_density(q, &u1)?;
        let change = m_new.max_abs_diff(&m_prev);
        history.push(change);
        let coupling_new = potential_field(&q.potential, &m_new, q.alpha);
        let hjb_res = hjb_residual(&u1, h1, &q.p, &coupling_new).max_abs();
        u = u1;
        h = h1;
        if change <= q.tolerances.fixedpoint_tol && hjb_res <= q.tolerances.fixedpoint_tol {
            let b_bar = effective_drift(&u, &m_new, &q.p);
            return Ok(CellSolution {
                u,
                m: m_new,
                h_bar: h,
                b_bar,
                residuals: Residuals {
                    hjb: hjb_res,
                    fp: fp_res,
                },
                iterations: it,
                history,
            });
        }
        if change > last_change {
            theta = (theta * 0.5).max(1e-3);
        }
        last_change = change;
        last_hjb = hjb_res;
        m_prev = m_prev.axpby(1.0 - theta, &m_new, theta);
    }
    Err(Error::NoConvergence {
        iterations: q.max_outer_iter,
        last_change,
        hjb_residual: last_hjb,
    })
}

/// `int m |grad u + P|^2 / 2 + grad m . (grad u + P) - Phi_alpha(y, m)`.
pub fn energy_functional(sol: &CellSolution, q: &CellQuery) -> f64 {
    let g = q.grid;
    let w = sol.drift(&q.p);
    let gm = gradient(&sol.m);
    let wsq = w.norm_sq();
    let mut acc = 0.0;
    for i in 0..g.total_points() {
        let y = g.point(i);
        let m = sol.m.values()[i];
        let cross: f64 = (0..g.dim()).map(|d| gm.component(d)[i] * w.component(d)[i]).sum();
        acc += 0.5 * m * wsq.values()[i] + cross - q.potential.phi_alpha(&y[..g.dim()], m, q.alpha);
    }
    acc * g.cell_volume()
}

/// `|H - E(u, m) - int (Phi_alpha(y, m) - V(y, alpha m) m)|`.
pub fn check_variational_identity(sol: &CellSolution, q: &CellQuery) -> f64 {
    let g = q.grid;
    let energy = energy_functional(sol, q);
    let mut acc = 0.0;
    for i in 0..g.total_points() {
        let y = &g.point(i)[..g.dim()];
        let m = sol.m.values()[i];
        acc += q.potential.phi_alpha(y, m, q.alpha) - q.potential.evaluate_v(y, q.alpha * m) * m;
    }
    (sol.h_bar - energy - acc * g.cell_volume()).abs()
}

/// Effective Hamiltonian of the finite-noise problem with constant Hessian `x`:
/// `-tr X + |P|^2 / 2 - int V(y, alpha)`, the integral taken on `grid`.
pub fn finite_noise_h(
    x: &[Vec<f64>],
    p: &[f64],
    alpha: f64,
    potential: &PotentialSpec,
    grid: &PeriodicGrid,
) -> Result<f64> {
    if matches!(potential.kind, PotentialKind::LinearExample { .. }) {
        return Err(Error::UnsupportedPotential(
            "the finite-noise closed form needs a bounded potential".into(),
        ));
    }
    let n = grid.dim();
    if p.len() != n || x.len() != n || x.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!("X must be {n}x{n} and P of length {n}")));
    }
    for i in 0..n {
        for j in 0..i {
            if (x[i][j] - x[j][i]).abs() > 1e-12 * (1.0 + x[i][j].abs()) {
                return Err(Error::InvalidInput("X must be symmetric".into()));
            }
        }
    }
    let trace: f64 = (0..n).map(|i| x[i][i]).sum();
    let mean_v = integrate(&grid.sample(|y| potential.evaluate_v(y, alpha)));
    Ok(-trace + 0.5 * p.iter().map(|v| v * v).sum::<f64>() - mean_v)
}
