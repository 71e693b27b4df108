//! Sparse assembly and linear solves.
//!
//! Systems up to [`DIRECT_LIMIT`] unknowns are factorized with a sparse LU
//! (faer); larger ones go through ILU(0)-preconditioned BiCGSTAB. The two
//! bordered solvers append the normalization row and the constant column that
//! pin down the ergodic constant and the density normalization.

mod krylov;
mod sparse;

pub use krylov::{bicgstab, Ilu0};
pub use sparse::{dot, norm2, SparseOperator};

use crate::error::{Error, Result};
use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

/// Largest dimension factorized directly.
pub const DIRECT_LIMIT: usize = 20_000;

/// Relative residual above which a direct solve is declared singular.
const SINGULAR_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Auto,
    Direct,
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    pub direct_limit: usize,
    pub krylov_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            direct_limit: DIRECT_LIMIT,
            krylov_max_iter: 5_000,
        }
    }
}

impl SolverOptions {
    fn use_direct(&self, n: usize) -> bool {
        match self.method {
            Method::Direct => true,
            Method::Krylov => false,
            Method::Auto => n <= self.direct_limit,
        }
    }
}

fn check_square(a: &SparseOperator, rhs_len: usize) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "operator is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    if rhs_len != a.nrows() {
        return Err(Error::InvalidInput(format!(
            "rhs has length {rhs_len}, operator dimension is {}",
            a.nrows()
        )));
    }
    Ok(())
}

fn residual(a: &SparseOperator, x: &[f64], rhs: &[f64]) -> f64 {
    let ax = a.matvec(x);
    norm2(&ax.iter().zip(rhs).map(|(p, q)| q - p).collect::<Vec<_>>())
}

fn direct_solve(a: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    let triplets: Vec<Triplet<usize, usize, f64>> = a.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::InvalidInput(format!("sparse assembly failed: {e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::Singular(format!("LU factorization failed: {e:?}")))?;
    let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite entries in the LU solution".into()));
    }
    Ok(out)
}

/// Solves `A x = rhs` to relative residual `tol`.
pub fn solve_general(a: &SparseOperator, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)> {
    solve_general_with(a, rhs, tol, &SolverOptions::default(), None)
}

/// [`solve_general`] with explicit method selection and an optional initial
/// guess (used only by the Krylov path).
pub fn solve_general_with(
    a: &SparseOperator,
    rhs: &[f64],
    tol: f64,
    opts: &SolverOptions,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)> {
    check_square(a, rhs.len())?;
    let n = a.nrows();
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                residual_norm: 0.0,
                converged: true,
            },
        ));
    }
    if opts.use_direct(n) {
        let x = direct_solve(a, rhs)?;
        let res = residual(a, &x, rhs);
        if !res.is_finite() || res > SINGULAR_RESIDUAL * bnorm {
            return Err(Error::Singular(format!(
                "relative residual {:e} after direct solve",
                res / bnorm
            )));
        }
        Ok((
            x,
            SolveReport {
                iterations: 1,
                residual_norm: res,
                converged: res <= tol * bnorm,
            },
        ))
    } else {
        let (x, report) = bicgstab(a, rhs, x0, tol, opts.krylov_max_iter);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("Krylov iteration produced non-finite values".into()));
        }
        Ok((x, report))
    }
}

/// Solves the bordered system `A x + lambda * 1 = rhs`, `sum(x) = 0`.
///
/// `A` must have a one-dimensional kernel spanned by the constants (the
/// linearized ergodic HJB operator); `lambda` is the ergodic-constant shift.
pub fn solve_augmented_mean_zero(a: &SparseOperator, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
    solve_augmented_mean_zero_with(a, rhs, &SolverOptions::default())
}

pub fn solve_augmented_mean_zero_with(
    a: &SparseOperator,
    rhs: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, f64)> {
    check_square(a, rhs.len())?;
    let n = a.nrows();
    let ones = vec![1.0; n];
    let big = a.bordered(&ones, &ones, 0.0);
    let mut b = rhs.to_vec();
    b.push(0.0);
    let (sol, report) = match solve_general_with(&big, &b, 1e-13, opts, None) {
        Ok(v) => v,
        Err(Error::Singular(msg)) => return Err(Error::DegenerateOperator(msg)),
        Err(e) => return Err(e),
    };
    if !opts.use_direct(n + 1) && !report.converged {
        return Err(Error::DegenerateOperator(format!(
            "bordered Krylov solve stalled at residual {:e}",
            report.residual_norm
        )));
    }
    let lambda = sol[n];
    let mut x = sol;
    x.truncate(n);
    // remove the O(eps) drift of the constraint left by the factorization
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    Ok((x, lambda))
}

/// Kernel vector of a discrete stationary Fokker-Planck operator, normalized
/// so that `cell_volume * sum(m) = 1` and checked to be strictly positive.
pub fn solve_kernel_normalized(a: &SparseOperator, cell_volume: f64) -> Result<Vec<f64>> {
    solve_kernel_normalized_with(a, cell_volume, &SolverOptions::default())
}

pub fn solve_kernel_normalized_with(
    a: &SparseOperator,
    cell_volume: f64,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidInput("kernel solve needs a square operator".into()));
    }
    let n = a.nrows();
    let ones = vec![1.0; n];
    let weights = vec![cell_volume; n];
    let big = a.bordered(&ones, &weights, 0.0);
    let mut b = vec![0.0; n + 1];
    b[n] = 1.0;
    let (sol, report) = match solve_general_with(&big, &b, 1e-13, opts, None) {
        Ok(v) => v,
        Err(Error::Singular(msg)) => return Err(Error::DegenerateOperator(msg)),
        Err(e) => return Err(e),
    };
    if !opts.use_direct(n + 1) && !report.converged {
        return Err(Error::DegenerateOperator(format!(
            "bordered Krylov solve stalled at residual {:e}",
            report.residual_norm
        )));
    }
    let mut m = sol;
    m.truncate(n);
    let total: f64 = m.iter().sum::<f64>() * cell_volume;
    m.iter_mut().for_each(|v| *v /= total);
    let min = m.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::PositivityViolation { min });
    }
    Ok(m)
}
