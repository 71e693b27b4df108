//! Preconditioned BiCGSTAB with an ILU(0) preconditioner, used for systems
//! above the direct-factorization size limit.

use super::sparse::{dot, norm2, SparseOperator};
use super::SolveReport;

/// Incomplete LU factorization with the sparsity pattern of the input.
pub struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    lu: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    /// Factorizes `a`. Zero pivots (as in the corner of a bordered system) are
    /// replaced by a small multiple of the row norm so the sweep never divides by zero.
    pub fn new(a: &SparseOperator) -> Self {
        let n = a.nrows();
        let (rp, ci, vals) = a.csr();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(ci.len() + n);
        let mut lu = Vec::with_capacity(ci.len() + n);
        let mut diag = vec![0usize; n];
        row_ptr.push(0);
        for r in 0..n {
            let mut has_diag = false;
            for k in rp[r]..rp[r + 1] {
                if ci[k] == r {
                    has_diag = true;
                }
                if !has_diag && ci[k] > r {
                    col_idx.push(r);
                    lu.push(0.0);
                    has_diag = true;
                }
                col_idx.push(ci[k]);
                lu.push(vals[k]);
            }
            if !has_diag {
                col_idx.push(r);
                lu.push(0.0);
            }
            row_ptr.push(col_idx.len());
            for k in row_ptr[r]..row_ptr[r + 1] {
                if col_idx[k] == r {
                    diag[r] = k;
                }
            }
        }

        let row_norms: Vec<f64> = (0..n)
            .map(|r| lu[row_ptr[r]..row_ptr[r + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .collect();
        let mut position = vec![usize::MAX; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                position[col_idx[k]] = k;
            }
            for k in row_ptr[i]..diag[i] {
                let j = col_idx[k];
                let factor = lu[k] / lu[diag[j]];
                lu[k] = factor;
                for kk in (diag[j] + 1)..row_ptr[j + 1] {
                    let p = position[col_idx[kk]];
                    if p != usize::MAX {
                        lu[p] -= factor * lu[kk];
                    }
                }
            }
            let floor = 1e-10 * row_norms[i].max(1e-300);
            if lu[diag[i]].abs() < floor {
                lu[diag[i]] = if lu[diag[i]] < 0.0 { -floor } else { floor };
            }
            for k in row_ptr[i]..row_ptr[i + 1] {
                position[col_idx[k]] = usize::MAX;
            }
        }
        Self {
            n,
            row_ptr,
            col_idx,
            lu,
            diag,
        }
    }

    pub fn apply(&self, rhs: &[f64], out: &mut [f64]) {
        out.copy_from_slice(rhs);
        for i in 0..self.n {
            let mut acc = out[i];
            for k in self.row_ptr[i]..self.diag[i] {
                acc -= self.lu[k] * out[self.col_idx[k]];
            }
            out[i] = acc;
        }
        for i in (0..self.n).rev() {
            let mut acc = out[i];
            for k in (self.diag[i] + 1)..self.row_ptr[i + 1] {
                acc -= self.lu[k] * out[self.col_idx[k]];
            }
            out[i] = acc / self.lu[self.diag[i]];
        }
    }
}

/// Right-preconditioned BiCGSTAB. Stops when `||b - A x|| <= tol * ||b||`.
pub fn bicgstab(
    a: &SparseOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, SolveReport) {
    let n = b.len();
    let pre = Ilu0::new(a);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let target = tol * bnorm;

    let mut r = a.matvec(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = norm2(&r);
    if res <= target {
        return (
            x,
            SolveReport {
                iterations: 0,
                residual_norm: res,
                converged: true,
            },
        );
    }
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut iterations = 0;

    for it in 1..=max_iter {
        iterations = it;
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut p_hat);
        a.matvec_into(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            break;
        }
        pre.apply(&s, &mut s_hat);
        a.matvec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            break;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r);
        if res <= target || omega == 0.0 {
            break;
        }
    }

    // report the true residual, not the recursively updated one
    let ax = a.matvec(&x);
    let true_res = norm2(&ax.iter().zip(b).map(|(p, q)| q - p).collect::<Vec<_>>());
    (
        x,
        SolveReport {
            iterations,
            residual_norm: true_res,
            converged: true_res <= target,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> SparseOperator {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.5));
            }
        }
        SparseOperator::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        let a = tridiag(20);
        let pre = Ilu0::new(&a);
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&x);
        let mut y = vec![0.0; 20];
        pre.apply(&b, &mut y);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn bicgstab_converges_on_nonsymmetric_system() {
        let a = tridiag(200);
        let b: Vec<f64> = (0..200).map(|i| 1.0 + (i % 7) as f64).collect();
        let (x, rep) = bicgstab(&a, &b, None, 1e-12, 500);
        assert!(rep.converged);
        let r = a.matvec(&x);
        let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }
}
