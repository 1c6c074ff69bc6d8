//! Solution sets of `B C = A` with `B` of full row rank.

use crate::error::{Error, Result};
use crate::linalg::{rank_of, svd, Svd, DEFAULT_RANK_TOL};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Every solution of `B C = A` as `particular + kernel_basis · Λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MddSolution<T> {
    /// Minimum-Frobenius-norm solution, `l×n`.
    pub particular: Tensor<T>,
    /// Orthonormal basis of `Ker(B)`, `l×(l−m)`.
    pub kernel_basis: Tensor<T>,
    /// `(m, n, l)` with `B: m×l` and `A: m×n`.
    pub source_shapes: (usize, usize, usize),
}

#[derive(Clone, Copy, Debug)]
pub struct MddOptions {
    /// Relative singular-value threshold for the rank test.
    pub rank_tol: f64,
    /// Accept more equations than right-hand-side columns (`m > n`).
    pub allow_wide: bool,
}

impl Default for MddOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            allow_wide: false,
        }
    }
}

fn full_row_rank_svd<T: Scalar>(b: &Tensor<T>, tol: f64) -> Result<(Svd<T>, usize, usize)> {
    let (m, l) = b.expect_matrix("kernel_basis")?;
    if l < m {
        return Err(Error::RankDeficient {
            expected: m,
            detected: l,
        });
    }
    let d = svd(b)?;
    let rank = rank_of(&d.sigma, tol);
    if rank != m {
        return Err(Error::RankDeficient {
            expected: m,
            detected: rank,
        });
    }
    Ok((d, m, l))
}

fn kernel_from<T: Scalar>(d: &Svd<T>, m: usize, l: usize) -> Tensor<T> {
    let mut k = Tensor::zeros(&[l, l - m]);
    for i in 0..l {
        for j in m..l {
            k.set(i, j - m, d.v.at(i, j));
        }
    }
    k
}

/// Orthonormal basis of the null space of a full-row-rank `m×l` matrix.
pub fn kernel_basis<T: Scalar>(b: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, m, l) = full_row_rank_svd(b, DEFAULT_RANK_TOL)?;
    Ok(kernel_from(&d, m, l))
}

/// [`mdd_solve_with`] using the default options (`m ≤ n` enforced).
pub fn mdd_solve<T: Scalar>(b: &Tensor<T>, a: &Tensor<T>) -> Result<MddSolution<T>> {
    mdd_solve_with(b, a, MddOptions::default())
}

pub fn mdd_solve_with<T: Scalar>(b: &Tensor<T>, a: &Tensor<T>, opts: MddOptions) -> Result<MddSolution<T>> {
    let (m, l) = b.expect_matrix("mdd_solve")?;
    let (ma, n) = a.expect_matrix("mdd_solve")?;
    if ma != m {
        return Err(Error::dim("mdd_solve", b.shape(), a.shape()));
    }
    if m > n && !opts.allow_wide {
        return Err(Error::TooManyEquations { rows: m, cols: n });
    }
    let (d, m, l2) = full_row_rank_svd(b, opts.rank_tol)?;
    debug_assert_eq!(l, l2);

    // C_p = V_m Σ_m⁻¹ U_mᵀ A
    let mut coeff = Tensor::zeros(&[m, n]);
    for k in 0..m {
        let inv = T::one() / d.sigma[k];
        for j in 0..n {
            let mut s = T::zero();
            for i in 0..m {
                s += d.u.at(i, k) * a.at(i, j);
            }
            coeff.set(k, j, s * inv);
        }
    }
    let mut particular = Tensor::zeros(&[l, n]);
    for i in 0..l {
        for j in 0..n {
            let mut s = T::zero();
            for k in 0..m {
                s += d.v.at(i, k) * coeff.at(k, j);
            }
            particular.set(i, j, s);
        }
    }
    Ok(MddSolution {
        particular,
        kernel_basis: kernel_from(&d, m, l),
        source_shapes: (m, n, l),
    })
}

impl<T: Scalar> MddSolution<T> {
    /// Shape `(l−m)×n` expected for the free parameter `Λ`.
    pub fn lambda_shape(&self) -> [usize; 2] {
        let (m, n, l) = self.source_shapes;
        [l - m, n]
    }

    /// `C_p + X_h Λ`.
    pub fn sample(&self, lambda: &Tensor<T>) -> Result<Tensor<T>> {
        if lambda.shape() != self.lambda_shape() {
            return Err(Error::dim("sample_solution", &self.lambda_shape(), lambda.shape()));
        }
        self.particular.add(&self.kernel_basis.matmul(lambda)?)
    }

    /// Relative residual `‖B C − A‖_F / (‖A‖_F + 1)`.
    pub fn residual(b: &Tensor<T>, c: &Tensor<T>, a: &Tensor<T>) -> Result<f64> {
        let r = b.matmul(c)?.sub(a)?;
        Ok(r.frobenius_norm().as_f64() / (a.frobenius_norm().as_f64() + 1.0))
    }
}
