//! Behaviour of the error system as `eps` decreases.

use super::{solve_error_system_with_base, EvolutionConfig};
use crate::cell::solve_cell;
use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    /// Template run; its `epsilon` and `time_steps` are overridden per row.
    pub base: EvolutionConfig,
    pub epsilons: Vec<f64>,
    /// Time step as a fraction of `eps`, so that the boundary layers in time
    /// are resolved equally well at every scale.
    pub step_over_eps: f64,
}

impl ConvergenceConfig {
    pub fn new(base: EvolutionConfig, epsilons: Vec<f64>) -> Self {
        Self {
            base,
            epsilons,
            step_over_eps: 1.0 / 64.0,
        }
    }

    pub fn time_steps_for(&self, epsilon: f64) -> usize {
        (self.base.t_final / (self.step_over_eps * epsilon)).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub time_steps: usize,
    /// `int int |grad v|^2`.
    pub grad_v_integral: f64,
    /// `int int |n|^p`.
    pub n_p_integral: f64,
    /// Space-time L2 error of the reconstructed value function.
    pub reconstruction_error: f64,
    pub dissipation_defect: f64,
    /// Right-hand side of the dissipation identity, for relative comparisons.
    pub dissipation_rhs: f64,
    pub max_mass_drift: f64,
    pub energy_drift: f64,
    pub coupling_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log int int |grad v|^2` against `log eps`;
    /// `None` when every run is exactly zero.
    pub grad_v_slope: Option<f64>,
    pub n_p_slope: Option<f64>,
}

impl ConvergenceReport {
    /// Every run vanished to round-off, so there is nothing to fit.
    pub fn is_exact(&self) -> bool {
        self.grad_v_slope.is_none()
    }

    /// Whether `int int |n|^p` decreases along decreasing `eps`.
    pub fn density_error_decreasing(&self) -> bool {
        let mut rows: Vec<&ConvergenceRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        rows.windows(2).all(|w| w[1].n_p_integral < w[0].n_p_integral)
            || rows.iter().all(|r| r.n_p_integral <= EXACT_ZERO)
    }
}

/// Space-time integrals below this count as exactly zero.
pub const EXACT_ZERO: f64 = 1e-12;

fn fit_or_exact(eps: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if y.iter().all(|v| v.abs() <= EXACT_ZERO) {
        return Ok(None);
    }
    log_log_slope(eps, y).map(Some)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::InsufficientData("need at least two points for a slope".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InsufficientData("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    Ok(sxy / sxx)
}

pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.epsilons.len() < 3 {
        return Err(Error::InsufficientData("need at least three values of eps".into()));
    }
    if !(cfg.step_over_eps > 0.0) {
        return Err(Error::InvalidInput("time step ratio must be positive".into()));
    }
    let base = solve_cell(&cfg.base.cell_query())?;
    let rows = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            let mut run_cfg = cfg.base.clone();
            run_cfg.epsilon = eps;
            run_cfg.time_steps = cfg.time_steps_for(eps);
            let run = solve_error_system_with_base(&run_cfg, base.clone())?;
            Ok(ConvergenceRow {
                epsilon: eps,
                time_steps: run_cfg.time_steps,
                grad_v_integral: run.grad_v_integral,
                n_p_integral: run.n_p_integral,
                reconstruction_error: run.reconstruction_error,
                dissipation_defect: (run.dissipation_lhs() - run.dissipation_rhs()).abs(),
                dissipation_rhs: run.dissipation_rhs(),
                max_mass_drift: run.max_mass_drift,
                energy_drift: run.energy_drift(),
                coupling_iterations: run.coupling_iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let gv: Vec<f64> = rows.iter().map(|r| r.grad_v_integral).collect();
    let np: Vec<f64> = rows.iter().map(|r| r.n_p_integral).collect();
    Ok(ConvergenceReport {
        grad_v_slope: fit_or_exact(&eps, &gv)?,
        n_p_slope: fit_or_exact(&eps, &np)?,
        rows,
    })
}
