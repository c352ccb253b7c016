//! Thin SVD of a tall, full-column-rank matrix by one-sided (Hestenes)
//! Jacobi rotations.
//!
//! The working copy of `W` has its columns rotated pairwise until they are
//! mutually orthogonal; the accumulated rotations form `V`, the column norms
//! are the singular values and the normalized columns form `U`.

use super::matrix::{dot, Matrix};
use crate::error::{MooreError, Result};

/// Relative off-diagonal level `|a_pᵀa_q| / (‖a_p‖‖a_q‖)` at which a sweep
/// counts as converged.
pub const JACOBI_TOL: f64 = 1e-12;
/// Rank check: smallest singular value must exceed this times the largest.
pub const RANK_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 80;
/// Pairs below this level are not rotated at all.
const ROTATE_FLOOR: f64 = 1e-15;

/// `W = U · diag(sigma) · Vᵀ` with `U` of shape `D_out × D` and `V` of shape `D × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    /// Checks shapes, orthonormality (1e-10), ordering and sign of `sigma`.
    pub fn validate(&self) -> Result<()> {
        let d = self.sigma.len();
        if self.u.cols() != d || self.v.shape() != (d, d) || self.u.rows() < d {
            return Err(MooreError::shape(
                "SvdFactors",
                format!("U (>= {d})x{d}, V {d}x{d}"),
                format!("U {:?}, V {:?}", self.u.shape(), self.v.shape()),
            ));
        }
        if self.sigma.iter().any(|s| !s.is_finite() || *s < 0.0)
            || self.sigma.windows(2).any(|w| w[0] < w[1])
        {
            return Err(MooreError::InvalidSpec(
                "singular values must be finite, non-negative and non-increasing".into(),
            ));
        }
        let eu = self.u.orthonormality_error();
        let ev = self.v.orthonormality_error();
        if eu > 1e-10 || ev > 1e-10 {
            return Err(MooreError::InvalidSpec(format!(
                "factors not orthonormal: |UᵀU-I| = {eu:e}, |VᵀV-I| = {ev:e}"
            )));
        }
        Ok(())
    }

    /// `U · diag(sigma) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us.set(i, j, us.get(i, j) * s);
            }
        }
        us.matmul(&self.v.transpose(), None)
            .expect("factor shapes conform")
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn out_dim(&self) -> usize {
        self.u.rows()
    }
}

/// Thin SVD of `w` (`rows >= cols`, full column rank).
///
/// Sign convention: the largest-magnitude entry of every `u_d` is
/// non-negative, ties resolved by the lowest row index.
pub fn svd(w: &Matrix) -> Result<SvdFactors> {
    let (m, n) = w.shape();
    if m < n {
        return Err(MooreError::shape("svd", format!("rows >= cols ({n})"), m));
    }
    if n == 0 {
        return Err(MooreError::shape("svd", "at least one column", 0));
    }

    // Column-major working copies so rotations touch contiguous memory.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| w.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut max_off: f64 = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                max_off = max_off.max(off);
                if off <= ROTATE_FLOOR {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if max_off < JACOBI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MooreError::NoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<(f64, usize)> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (dot(col, col).sqrt(), j))
        .collect();
    // Stable sort keeps the original column order among equal values.
    order.sort_by(|x, y| y.0.total_cmp(&x.0));

    let largest = order[0].0;
    let smallest = order[n - 1].0;
    // negated so a NaN spectrum also lands here
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(smallest > RANK_TOL * largest) {
        return Err(MooreError::RankDeficient { smallest, largest });
    }

    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (d, &(s, j)) in order.iter().enumerate() {
        let mut ucol: Vec<f64> = a[j].iter().map(|x| x / s).collect();
        let mut vcol = v[j].clone();
        let pivot = ucol
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if ucol[pivot] < 0.0 {
            ucol.iter_mut().for_each(|x| *x = -*x);
            vcol.iter_mut().for_each(|x| *x = -*x);
        }
        u.set_col(d, &ucol);
        vm.set_col(d, &vcol);
        sigma.push(s);
    }

    Ok(SvdFactors { u, sigma, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}
