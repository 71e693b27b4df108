//! Linearized cell systems and the derivatives of `H` and `b` they produce.
//!
//! Both the `P_i` and the `alpha` directions are solved as one sparse block
//! system in `(u~, m~, c, mu)`: the linearized HJB rows, the linearized
//! Fokker-Planck rows, and two mean-zero rows. The Fokker-Planck rows are
//! linearly dependent (their sum vanishes identically), so an extra
//! multiplier `mu` on those rows squares the system; it must come out zero.

use rayon::prelude::*;

use crate::cell::{potential_derivative_field, CellQuery, CellSolution};
use crate::error::{Error, Result};
use crate::grid::{
    advection_diffusion_matrix, centered_difference_matrix, fokker_planck_matrix, gradient, integrate,
    weighted_gradient_divergence_matrix, ScalarField,
};
use crate::linsolve::{solve_general_with, SolverOptions, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Derivative in `P` along a zero-based axis.
    Axis(usize),
    Alpha,
}

#[derive(Debug, Clone)]
pub struct SensitivitySolution {
    pub direction: Direction,
    pub u_tilde: ScalarField,
    pub m_tilde: ScalarField,
    /// `c_i` for an axis, `k` for `alpha`; taken from the block solve.
    pub constant: f64,
    /// The same constant from the independent closed formula.
    pub formula_constant: f64,
    /// Multiplier of the dependent Fokker-Planck rows.
    pub multiplier: f64,
    /// Sup norm of the block-system residual.
    pub residual: f64,
}

/// Agreement required between the block constant and its closed formula.
pub const CONSISTENCY_TOL: f64 = 1e-8;

fn check_regime(q: &CellQuery) -> Result<()> {
    q.validate()?;
    if q.alpha <= 0.0 {
        return Err(Error::UnsupportedRegime(
            "the linearized systems are posed for alpha > 0".into(),
        ));
    }
    Ok(())
}

/// Assembles the block operator shared by all directions.
fn block_operator(base: &CellSolution, q: &CellQuery) -> (SparseOperator, ScalarField) {
    let g = q.grid;
    let n = g.total_points();
    let w = base.drift(&q.p);
    let vm = potential_derivative_field(&q.potential, &base.m, q.alpha);
    let mut t: Vec<(usize, usize, f64)> = Vec::new();
    t.extend(advection_diffusion_matrix(&w).triplets());
    for i in 0..n {
        t.push((i, n + i, -q.alpha * vm.values()[i]));
        t.push((i, 2 * n, -1.0));
    }
    t.extend(fokker_planck_matrix(&w).triplets().map(|(r, c, v)| (n + r, n + c, v)));
    t.extend(
        weighted_gradient_divergence_matrix(&base.m)
            .triplets()
            .map(|(r, c, v)| (n + r, c, -v)),
    );
    for i in 0..n {
        t.push((n + i, 2 * n + 1, 1.0));
        t.push((2 * n, i, 1.0));
        t.push((2 * n + 1, n + i, 1.0));
    }
    let a = SparseOperator::from_triplets(2 * n + 2, 2 * n + 2, &t).expect("block operator");
    (a, vm)
}

fn solve_block(
    a: &SparseOperator,
    rhs: &[f64],
    opts: &SolverOptions,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    let (x, report) = solve_general_with(a, rhs, 1e-13, opts, x0).map_err(|e| match e {
        Error::Singular(msg) => Error::DegenerateLinearization(msg),
        other => other,
    })?;
    let r = a.matvec(&x);
    let res = r.iter().zip(rhs).fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs()));
    let scale = rhs.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if !report.converged && res > 1e-8 * scale {
        return Err(Error::DegenerateLinearization(format!(
            "block solve residual {res:e} after {} iterations",
            report.iterations
        )));
    }
    Ok((x, res))
}

fn split(g: &crate::grid::PeriodicGrid, x: &[f64]) -> (ScalarField, ScalarField, f64, f64) {
    let n = g.total_points();
    let mut u = x[..n].to_vec();
    let mut m = x[n..2 * n].to_vec();
    // the constraint rows leave O(eps) means; project them out exactly
    for v in [&mut u, &mut m] {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|e| *e -= mean);
    }
    (
        ScalarField::new(*g, u).unwrap(),
        ScalarField::new(*g, m).unwrap(),
        x[2 * n],
        x[2 * n + 1],
    )
}

#[allow(non_snake_case)]
pub fn solve_sensitivity_P(base: &CellSolution, q: &CellQuery, axis: usize) -> Result<SensitivitySolution> {
    solve_sensitivity_p_with(base, q, axis, &q.solver, None)
}

/// [`solve_sensitivity_P`] with explicit solver options and Krylov seed.
pub fn solve_sensitivity_p_with(
    base: &CellSolution,
    q: &CellQuery,
    axis: usize,
    opts: &SolverOptions,
    x0: Option<&[f64]>,
) -> Result<SensitivitySolution> {
    check_regime(q)?;
    let g = q.grid;
    if axis >= g.dim() {
        return Err(Error::InvalidInput(format!("axis {axis} out of range for a {}-d grid", g.dim())));
    }
    let n = g.total_points();
    let (a, vm) = block_operator(base, q);
    let w = base.drift(&q.p);
    let mut rhs = vec![0.0; 2 * n + 2];
    for i in 0..n {
        rhs[i] = -w.component(axis)[i];
    }
    let dm = centered_difference_matrix(&g, axis).matvec(base.m.values());
    rhs[n..2 * n].copy_from_slice(&dm);
    let (x, residual) = solve_block(&a, &rhs, opts, x0)?;
    let (u_tilde, m_tilde, constant, multiplier) = split(&g, &x);

    let vol = g.cell_volume();
    let mut formula = 0.0;
    for i in 0..n {
        let m = base.m.values()[i];
        formula += w.component(axis)[i] * m - vm.values()[i] * q.alpha * m_tilde.values()[i] * m;
    }
    formula *= vol;
    if (constant - formula).abs() > CONSISTENCY_TOL * (1.0 + constant.abs()) {
        return Err(Error::Inconsistency { block: constant, formula });
    }
    Ok(SensitivitySolution {
        direction: Direction::Axis(axis),
        u_tilde,
        m_tilde,
        constant,
        formula_constant: formula,
        multiplier,
        residual,
    })
}

pub fn solve_sensitivity_alpha(base: &CellSolution, q: &CellQuery) -> Result<SensitivitySolution> {
    solve_sensitivity_alpha_with(base, q, &q.solver, None)
}

pub fn solve_sensitivity_alpha_with(
    base: &CellSolution,
    q: &CellQuery,
    opts: &SolverOptions,
    x0: Option<&[f64]>,
) -> Result<SensitivitySolution> {
    check_regime(q)?;
    let g = q.grid;
    let n = g.total_points();
    let (a, vm) = block_operator(base, q);
    let mut rhs = vec![0.0; 2 * n + 2];
    for i in 0..n {
        rhs[i] = vm.values()[i] * base.m.values()[i];
    }
    let (x, residual) = solve_block(&a, &rhs, opts, x0)?;
    let (u_bar, m_bar, k, multiplier) = split(&g, &x);

    // k = -int [V_m (m + alpha m~)^2 + alpha m |grad u~|^2]
    let grad_sq = gradient(&u_bar).norm_sq();
    let mut repr = 0.0;
    for i in 0..n {
        let m = base.m.values()[i];
        let s = m + q.alpha * m_bar.values()[i];
        repr += vm.values()[i] * s * s + q.alpha * m * grad_sq.values()[i];
    }
    let formula = -repr * g.cell_volume();
    if (k - formula).abs() > CONSISTENCY_TOL * (1.0 + k.abs()) {
        return Err(Error::Inconsistency { block: k, formula });
    }
    if k >= 0.0 {
        return Err(Error::SignViolation(k));
    }
    Ok(SensitivitySolution {
        direction: Direction::Alpha,
        u_tilde: u_bar,
        m_tilde: m_bar,
        constant: k,
        formula_constant: formula,
        multiplier,
        residual,
    })
}

/// `int [m~ grad u + m grad u~]`, the common part of both drift derivatives.
fn drift_variation(base: &CellSolution, sens: &SensitivitySolution) -> Vec<f64> {
    let g = *base.u.grid();
    let gu = gradient(&base.u);
    let gt = gradient(&sens.u_tilde);
    (0..g.dim())
        .map(|d| {
            let f = ScalarField::new(
                g,
                (0..g.total_points())
                    .map(|i| {
                        sens.m_tilde.values()[i] * gu.component(d)[i] + base.m.values()[i] * gt.component(d)[i]
                    })
                    .collect(),
            )
            .unwrap();
            integrate(&f)
        })
        .collect()
}

/// `d b / d P_i = e_i + int [m~_i grad u + m grad u~_i]`.
#[allow(non_snake_case)]
pub fn db_dP(base: &CellSolution, sens: &SensitivitySolution) -> Result<Vec<f64>> {
    let Direction::Axis(axis) = sens.direction else {
        return Err(Error::InvalidInput("db_dP needs a P-direction sensitivity".into()));
    };
    let mut out = drift_variation(base, sens);
    out[axis] += 1.0;
    Ok(out)
}

/// `d b / d alpha = int [m~ grad u + m grad u~]`.
pub fn db_dalpha(base: &CellSolution, sens: &SensitivitySolution) -> Result<Vec<f64>> {
    if sens.direction != Direction::Alpha {
        return Err(Error::InvalidInput("db_dalpha needs the alpha sensitivity".into()));
    }
    Ok(drift_variation(base, sens))
}

/// All directions (each `P` axis, then `alpha`) solved concurrently.
pub fn solve_all_directions(base: &CellSolution, q: &CellQuery) -> Result<Vec<SensitivitySolution>> {
    let dirs: Vec<Direction> = (0..q.grid.dim())
        .map(Direction::Axis)
        .chain(std::iter::once(Direction::Alpha))
        .collect();
    dirs.par_iter()
        .map(|d| match *d {
            Direction::Axis(i) => solve_sensitivity_P(base, q, i),
            Direction::Alpha => solve_sensitivity_alpha(base, q),
        })
        .collect()
}
