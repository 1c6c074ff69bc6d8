//! Constructive sum-product decomposition
//! `t[a_1, …, a_n] = Σ_i Π_j G_j[i, a_j]`.
//!
//! All factors but one are fixed in advance with a Vandermonde structure whose
//! row-wise Kronecker product `X` has full column rank. The remaining factor
//! then solves the linear system `Xᵀ G = T`, where `T` is the tensor unfolded
//! along the solved axis, via [`mdd_solve_with`].

use crate::autodiff::sum_product_forward;
use crate::error::{Error, Result};
use crate::linalg::{condition_number, singular_values};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::mdd::{mdd_solve_with, MddOptions};

/// Condition number of `Xᵀ` above which a warning is attached to the result.
pub const CONDITION_WARNING: f64 = 1e8;

/// How the fixed factors are generated.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorConstruction<T> {
    /// Per-axis Chebyshev-Vandermonde blocks laid out on a tensor grid, so `X`
    /// is a Kronecker product of `c_j×c_j` blocks with orthogonal columns.
    /// The condition number of `X` is at most `√2` per fixed axis.
    Grid,
    /// One shared node per row, `G_j[i, a] = x_i^{a·∏_{k>j} c_k}`, so `X` is a
    /// single `N×∏c_j` Vandermonde matrix. Exponentially ill-conditioned in
    /// `∏c_j`; usable for small tensors.
    Vandermonde { nodes: Option<Vec<T>> },
}

/// Factors `G_1, …, G_n` with `G_j` of shape `components×dims[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CpFactors<T> {
    pub factors: Vec<Tensor<T>>,
    pub dims: Vec<usize>,
    pub components: usize,
    /// Numerical concerns found while solving (ill-conditioned systems).
    pub warnings: Vec<String>,
}

/// Chebyshev points of the first kind on `(−1, 1)`, distinct for every `n`.
pub fn chebyshev_nodes<T: Scalar>(n: usize) -> Vec<T> {
    let pi = std::f64::consts::PI;
    (0..n)
        .map(|i| T::of(((2 * i + 1) as f64 * pi / (2 * n) as f64).cos()))
        .collect()
}

fn check_nodes<T: Scalar>(nodes: &[T], n: usize) -> Result<()> {
    if nodes.len() != n {
        return Err(Error::Nodes(format!("expected {n} nodes, got {}", nodes.len())));
    }
    if nodes.iter().any(|x| !x.is_finite()) {
        return Err(Error::Nodes("non-finite node".into()));
    }
    let mut sorted: Vec<f64> = nodes.iter().map(|x| x.as_f64()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Nodes(format!("duplicate node {}", w[0])));
    }
    Ok(())
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.iter().any(|&c| c == 0) {
        return Err(Error::Shape {
            shape: dims.to_vec(),
            reason: "zero extent".into(),
        });
    }
    Ok(())
}

/// Factors `G_j[i, a] = x_i^{a · ∏_{k>j} c_k}` (zero-based `a`).
///
/// Their row-wise Kronecker product is the Vandermonde matrix
/// `X[i, d] = x_i^d`, which has rank `∏c_j` for distinct nodes when
/// `n ≥ ∏c_j`. Nodes default to [`chebyshev_nodes`].
pub fn vandermonde_factors<T: Scalar>(dims: &[usize], n: usize, nodes: Option<&[T]>) -> Result<Vec<Tensor<T>>> {
    check_dims(dims)?;
    let required: usize = dims.iter().product();
    if n < required {
        return Err(Error::Cardinality {
            dims: dims.to_vec(),
            required,
            got: n,
        });
    }
    let nodes: Vec<T> = match nodes {
        Some(x) => {
            check_nodes(x, n)?;
            x.to_vec()
        }
        None => chebyshev_nodes(n),
    };
    let mut out = Vec::with_capacity(dims.len());
    for (j, &c) in dims.iter().enumerate() {
        let stride: usize = dims[j + 1..].iter().product();
        let mut g = Tensor::zeros(&[n, c]);
        for (i, &x) in nodes.iter().enumerate() {
            for a in 0..c {
                g.set(i, a, x.powi((a * stride) as i32));
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Tensor-grid variant: row `r < ∏c_j` enumerates the multi-index
/// `(b_1, …, b_m)` row-major and `G_j[r, a] = T_a(y_{b_j})`, the Chebyshev
/// polynomial basis evaluated at the `c_j` Chebyshev nodes `y`; rows from
/// `∏c_j` on are zero.
pub fn grid_vandermonde_factors<T: Scalar>(dims: &[usize], n: usize) -> Result<Vec<Tensor<T>>> {
    check_dims(dims)?;
    let required: usize = dims.iter().product();
    if n < required {
        return Err(Error::Cardinality {
            dims: dims.to_vec(),
            required,
            got: n,
        });
    }
    let mut out = Vec::with_capacity(dims.len());
    for (j, &c) in dims.iter().enumerate() {
        let stride: usize = dims[j + 1..].iter().product();
        let pi = std::f64::consts::PI;
        let mut g = Tensor::zeros(&[n, c]);
        for r in 0..required {
            let b = (r / stride) % c;
            // T_a(cos θ) = cos(a θ)
            let theta = (2 * b + 1) as f64 * pi / (2 * c) as f64;
            for a in 0..c {
                g.set(r, a, T::of((a as f64 * theta).cos()));
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Row-wise Kronecker product: row `i` is `kron(G_1[i], …, G_m[i])`.
/// With no factors, `n` rows of the single entry `1`.
pub fn row_kron<T: Scalar>(factors: &[Tensor<T>], n: usize) -> Result<Tensor<T>> {
    let mut acc = Tensor::ones(&[n, 1]);
    for f in factors {
        let (r, c) = f.expect_matrix("row_kron")?;
        if r != n {
            return Err(Error::dim("row_kron", acc.shape(), f.shape()));
        }
        let w = acc.cols();
        let mut next = Vec::with_capacity(n * w * c);
        for i in 0..n {
            for &a in acc.row(i) {
                for &b in f.row(i) {
                    next.push(a * b);
                }
            }
        }
        acc = Tensor::matrix(n, w * c, next)?;
    }
    Ok(acc)
}

/// Smallest component count the constructive route accepts:
/// `∏c_j / max_j c_j`.
pub fn sufficiency_bound(dims: &[usize]) -> usize {
    let max = dims.iter().copied().max().unwrap_or(1);
    dims.iter().product::<usize>() / max
}

/// [`cp_decompose_with`] using [`FactorConstruction::Grid`].
pub fn cp_decompose<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<CpFactors<T>> {
    cp_decompose_with(t, n, &FactorConstruction::Grid)
}

pub fn cp_decompose_with<T: Scalar>(
    t: &Tensor<T>,
    n: usize,
    construction: &FactorConstruction<T>,
) -> Result<CpFactors<T>> {
    let dims = t.shape().to_vec();
    check_dims(&dims)?;
    let required = sufficiency_bound(&dims);
    if n < required || n == 0 {
        return Err(Error::Cardinality {
            dims,
            required: required.max(1),
            got: n,
        });
    }
    // Solve for the largest axis (the last one among ties).
    let solved = dims
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|&(_, &c)| c)
        .map(|(k, _)| k)
        .expect("non-empty dims");
    let fixed_axes: Vec<usize> = (0..dims.len()).filter(|&k| k != solved).collect();
    let fixed_dims: Vec<usize> = fixed_axes.iter().map(|&k| dims[k]).collect();

    let fixed = match construction {
        FactorConstruction::Grid => grid_vandermonde_factors(&fixed_dims, n)?,
        FactorConstruction::Vandermonde { nodes } => vandermonde_factors(&fixed_dims, n, nodes.as_deref())?,
    };
    let x = row_kron(&fixed, n)?;
    let unfolded = unfold_last(t, solved)?;

    let b = x.transpose()?;
    let mut warnings = Vec::new();
    let sigma = singular_values(&b)?;
    let cond = condition_number(&sigma, required.min(sigma.len()));
    if cond > CONDITION_WARNING {
        warnings.push(format!(
            "factor system is ill-conditioned (condition number {cond:.3e}); reconstruction may lose accuracy"
        ));
    }
    let opts = MddOptions {
        allow_wide: true,
        ..Default::default()
    };
    let solution = mdd_solve_with(&b, &unfolded, opts)?;

    let mut factors = Vec::with_capacity(dims.len());
    let mut fixed_iter = fixed.into_iter();
    for k in 0..dims.len() {
        if k == solved {
            factors.push(solution.particular.clone());
        } else {
            factors.push(fixed_iter.next().expect("one fixed factor per other axis"));
        }
    }
    Ok(CpFactors {
        factors,
        dims,
        components: n,
        warnings,
    })
}

/// Moves `axis` last and flattens the rest: result is `(∏_{k≠axis} c_k)×c_axis`.
fn unfold_last<T: Scalar>(t: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let dims = t.shape();
    let c = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let rows = outer * inner;
    let mut out = vec![T::zero(); rows * c];
    for o in 0..outer {
        for a in 0..c {
            for i in 0..inner {
                out[(o * inner + i) * c + a] = t.data()[(o * c + a) * inner + i];
            }
        }
    }
    Tensor::matrix(rows, c, out)
}

/// `t[a_1, …, a_n] = Σ_i Π_j G_j[i, a_j]`, products taken left to right.
pub fn reconstruct_cp<T: Scalar>(f: &CpFactors<T>) -> Result<Tensor<T>> {
    if f.factors.len() != f.dims.len() || f.factors.is_empty() {
        return Err(Error::Shape {
            shape: f.dims.clone(),
            reason: format!("{} factors for {} axes", f.factors.len(), f.dims.len()),
        });
    }
    for (g, &c) in f.factors.iter().zip(&f.dims) {
        if g.shape() != [f.components, c] {
            return Err(Error::dim("reconstruct_cp", &[f.components, c], g.shape()));
        }
    }
    let refs: Vec<&Tensor<T>> = f.factors.iter().collect();
    let flat = sum_product_forward(&refs, f.components)?;
    flat.reshape(&f.dims)
}

/// `‖a − b‖_F / max(‖b‖_F, 1)`; the floor keeps zero tensors meaningful.
pub fn relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let diff = a.sub(b)?.frobenius_norm().as_f64();
    Ok(diff / b.frobenius_norm().as_f64().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numeric_rank, DEFAULT_RANK_TOL};
    use crate::rng::RngState;

    type T = Tensor<f64>;

    #[test]
    fn two_node_vandermonde() {
        let f = vandermonde_factors(&[2], 2, Some(&[1.0, 2.0])).unwrap();
        assert_eq!(f[0], T::from_rows(&[&[1.0, 1.0], &[1.0, 2.0]]));
        assert_eq!(numeric_rank(&f[0], DEFAULT_RANK_TOL).unwrap(), 2);
    }

    #[test]
    fn flattened_two_by_two_is_full_rank() {
        let f = vandermonde_factors::<f64>(&[2, 2], 4, None).unwrap();
        let x = row_kron(&f, 4).unwrap();
        assert_eq!(x.shape(), &[4, 4]);
        // Flattened entries are plain powers of the row node.
        for i in 0..4 {
            let node = x.at(i, 1);
            for d in 0..4 {
                assert!((x.at(i, d) - node.powi(d as i32)).abs() < 1e-15);
            }
        }
        assert_eq!(numeric_rank(&x, DEFAULT_RANK_TOL).unwrap(), 4);
    }

    #[test]
    fn too_few_components() {
        assert!(matches!(
            vandermonde_factors::<f64>(&[3], 2, None),
            Err(Error::Cardinality { required: 3, got: 2, .. })
        ));
    }

    #[test]
    fn duplicate_nodes_rejected() {
        assert!(matches!(
            vandermonde_factors(&[2], 3, Some(&[1.0, 2.0, 1.0])),
            Err(Error::Nodes(_))
        ));
    }

    #[test]
    fn zero_tensor() {
        let f = cp_decompose(&T::zeros(&[2, 3]), 2).unwrap();
        assert_eq!(reconstruct_cp(&f).unwrap(), T::zeros(&[2, 3]));
    }

    #[test]
    fn rank_one_outer_product() {
        let mut rng = RngState::new(4);
        let u = T::uniform(&[2, 1], -1.0, 1.0, &mut rng);
        let v = T::uniform(&[1, 3], -1.0, 1.0, &mut rng);
        let t = u.matmul(&v).unwrap();
        let f = cp_decompose(&t, 2).unwrap();
        assert!(relative_error(&reconstruct_cp(&f).unwrap(), &t).unwrap() < 1e-8);
    }

    #[test]
    fn order_three_at_the_bound() {
        let mut rng = RngState::new(6);
        let t = T::uniform(&[2, 2, 3], -1.0, 1.0, &mut rng);
        let f = cp_decompose(&t, 4).unwrap();
        assert_eq!(f.factors.iter().map(|g| g.shape().to_vec()).collect::<Vec<_>>(), vec![
            vec![4, 2],
            vec![4, 2],
            vec![4, 3]
        ]);
        assert!(relative_error(&reconstruct_cp(&f).unwrap(), &t).unwrap() < 1e-6);
        assert!(matches!(cp_decompose(&t, 3), Err(Error::Cardinality { required: 4, .. })));
    }

    #[test]
    fn largest_axis_need_not_be_last() {
        let mut rng = RngState::new(7);
        let t = T::uniform(&[5, 2, 3], -1.0, 1.0, &mut rng);
        let f = cp_decompose(&t, 6).unwrap();
        assert!(relative_error(&reconstruct_cp(&f).unwrap(), &t).unwrap() < 1e-10);
    }

    #[test]
    fn order_one_degenerates_to_sums() {
        let t = T::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let f = cp_decompose(&t, 3).unwrap();
        assert!(relative_error(&reconstruct_cp(&f).unwrap(), &t).unwrap() < 1e-14);
    }

    #[test]
    fn single_component_is_an_outer_product() {
        let f = CpFactors {
            factors: vec![T::from_rows(&[&[1.0, 2.0]]), T::from_rows(&[&[3.0, 4.0, 5.0]])],
            dims: vec![2, 3],
            components: 1,
            warnings: vec![],
        };
        let want = T::from_rows(&[&[3.0, 4.0, 5.0], &[6.0, 8.0, 10.0]]);
        assert_eq!(reconstruct_cp(&f).unwrap(), want);
    }

    #[test]
    fn all_ones_factors_count_components() {
        let f = CpFactors {
            factors: vec![T::ones(&[5, 2]), T::ones(&[5, 3]), T::ones(&[5, 2])],
            dims: vec![2, 3, 2],
            components: 5,
            warnings: vec![],
        };
        assert_eq!(reconstruct_cp(&f).unwrap(), T::full(&[2, 3, 2], 5.0));
    }

    #[test]
    fn inconsistent_factor_shapes() {
        let f = CpFactors {
            factors: vec![T::ones(&[2, 2]), T::ones(&[3, 3])],
            dims: vec![2, 3],
            components: 2,
            warnings: vec![],
        };
        assert!(reconstruct_cp(&f).is_err());
    }

    #[test]
    fn shared_node_construction_warns_when_ill_conditioned() {
        let mut rng = RngState::new(10);
        let small = T::uniform(&[2, 2, 3], -1.0, 1.0, &mut rng);
        let f = cp_decompose_with(&small, 4, &FactorConstruction::Vandermonde { nodes: None }).unwrap();
        assert!(f.warnings.is_empty());
        assert!(relative_error(&reconstruct_cp(&f).unwrap(), &small).unwrap() < 1e-10);

        // Equispaced positive nodes: cond(X) ≈ 7e8 at 8 components.
        let nodes: Vec<f64> = (0..8).map(|i| 1.0 + i as f64 / 8.0).collect();
        let t = T::uniform(&[2, 2, 2, 2], -1.0, 1.0, &mut rng);
        let f = cp_decompose_with(&t, 8, &FactorConstruction::Vandermonde { nodes: Some(nodes) }).unwrap();
        assert_eq!(f.warnings.len(), 1, "{:?}", f.warnings);
    }
}
