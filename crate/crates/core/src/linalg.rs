//! Dense decompositions used by the decomposition lab.
//!
//! Singular values come from one-sided (Hestenes) Jacobi rotations applied to
//! the columns of the input. The accumulated right rotation `V` is a full
//! orthogonal basis of the column space `R^c`, so for wide inputs the columns
//! of `V` paired with vanishing singular values span the null space.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default relative threshold for [`numeric_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

/// `A = U · diag(sigma) · Vᵀ` with `sigma` sorted in decreasing order.
///
/// For an `r×c` input: `u` is `r×c` (columns paired with zero singular values
/// are zero), `sigma` has length `c`, `v` is a `c×c` orthogonal matrix.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Tensor<T>,
    pub sigma: Vec<T>,
    pub v: Tensor<T>,
}

pub fn svd<T: Scalar>(a: &Tensor<T>) -> Result<Svd<T>> {
    let (r, c) = a.expect_matrix("svd")?;
    // Column-major working copies.
    let mut w: Vec<Vec<T>> = (0..c).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<T>> = (0..c)
        .map(|j| (0..c).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let (alpha, beta, gamma) = column_products(&w[p], &w[q]);
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut w, p, q, cs, sn);
                rotate(&mut v, p, q, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<T> = w
        .iter()
        .map(|col| col.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = Tensor::zeros(&[r, c]);
    let mut vt = Tensor::zeros(&[c, c]);
    let mut sigma = Vec::with_capacity(c);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > T::zero() {
            for i in 0..r {
                u.set(i, k, w[j][i] / s);
            }
        }
        for i in 0..c {
            vt.set(i, k, v[j][i]);
        }
    }
    Ok(Svd { u, sigma, v: vt })
}

fn column_products<T: Scalar>(x: &[T], y: &[T]) -> (T, T, T) {
    let mut a = T::zero();
    let mut b = T::zero();
    let mut g = T::zero();
    for (&p, &q) in x.iter().zip(y) {
        a += p * p;
        b += q * q;
        g += p * q;
    }
    (a, b, g)
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, cs: T, sn: T) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = cs * a - sn * b;
        *y = sn * a + cs * b;
    }
}

/// Singular values in decreasing order; `min(r, c)` of them.
pub fn singular_values<T: Scalar>(a: &Tensor<T>) -> Result<Vec<T>> {
    let (r, c) = a.expect_matrix("singular_values")?;
    let s = if r < c {
        svd(&a.transpose()?)?.sigma
    } else {
        svd(a)?.sigma
    };
    Ok(s.into_iter().take(r.min(c)).collect())
}

/// Count of singular values above `tol · σ_max`; zero for the zero matrix.
pub fn numeric_rank<T: Scalar>(m: &Tensor<T>, tol: f64) -> Result<usize> {
    if tol <= 0.0 {
        return Err(Error::Precondition(format!("rank tolerance must be positive, got {tol}")));
    }
    let s = singular_values(m)?;
    Ok(rank_of(&s, tol))
}

pub(crate) fn rank_of<T: Scalar>(sigma: &[T], tol: f64) -> usize {
    let Some(&top) = sigma.first() else {
        return 0;
    };
    if top == T::zero() {
        return 0;
    }
    let cut = top * T::of(tol);
    sigma.iter().filter(|&&s| s > cut).count()
}

/// Ratio of the largest to the smallest of the first `k` singular values.
pub(crate) fn condition_number<T: Scalar>(sigma: &[T], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let lo = sigma[k - 1].as_f64();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        sigma[0].as_f64() / lo
    }
}
