//! Seeded property checks for the decomposition lab against independent oracles.

use pinset_core::decomp::cp::{relative_error, sufficiency_bound};
use pinset_core::decomp::*;
use pinset_core::linalg::{numeric_rank, DEFAULT_RANK_TOL};
use pinset_core::tensor::Tensor;
use pinset_core::{Error, RngState};
use proptest::prelude::*;

type T = Tensor<f64>;

/// Least-norm solution through the normal equations `C = Bᵀ (B Bᵀ)⁻¹ A`,
/// solved by Gauss-Jordan elimination with partial pivoting.
fn normal_equation_solution(b: &T, a: &T) -> T {
    let m = b.rows();
    let n = a.cols();
    let gram = b.matmul(&b.transpose().unwrap()).unwrap();
    let mut aug: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row: Vec<f64> = gram.row(i).to_vec();
            row.extend_from_slice(a.row(i));
            row
        })
        .collect();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| aug[x][col].abs().partial_cmp(&aug[y][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..m {
            if r != col {
                let f = aug[r][col];
                let pivot_row = aug[col].clone();
                for (v, pv) in aug[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    let y: Vec<f64> = aug.iter().flat_map(|row| row[m..m + n].to_vec()).collect();
    b.transpose().unwrap().matmul(&T::matrix(m, n, y).unwrap()).unwrap()
}

#[test]
fn particular_solution_is_least_norm() {
    let mut rng = RngState::new(77);
    for _ in 0..50 {
        let m = 1 + rng.index(5);
        let l = m + rng.index(5);
        let n = m + rng.index(4);
        let b = T::uniform(&[m, l], -1.0, 1.0, &mut rng);
        let a = T::uniform(&[m, n], -1.0, 1.0, &mut rng);
        let sol = mdd_solve(&b, &a).unwrap();
        let oracle = normal_equation_solution(&b, &a);
        assert!(sol.particular.max_abs_diff(&oracle) < 1e-9);
        // Orthogonal to the kernel.
        let cross = sol.kernel_basis.transpose().unwrap().matmul(&sol.particular).unwrap();
        assert!(cross.max_abs() < 1e-10);
    }
}

#[test]
fn residual_and_kernel_dimension_over_random_instances() {
    let mut rng = RngState::new(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = 1 + rng.index(12);
        let n = m + rng.index(13 - m);
        let l = m + rng.index(13 - m);
        let b = T::uniform(&[m, l], -1.0, 1.0, &mut rng);
        let a = T::uniform(&[m, n], -1.0, 1.0, &mut rng);
        let sol = mdd_solve(&b, &a).unwrap();
        assert_eq!(sol.kernel_basis.cols(), l - m);
        for _ in 0..10 {
            let lambda = T::uniform(&sol.lambda_shape(), -1.0, 1.0, &mut rng);
            let c = sol.sample(&lambda).unwrap();
            worst = worst.max(MddSolution::residual(&b, &c, &a).unwrap());
        }
    }
    assert!(worst < 1e-8, "worst residual {worst:e}");
}

fn dims_tuples(max_order: usize, max_product: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, prod: usize, left: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if !prefix.is_empty() {
            out.push(prefix.clone());
        }
        if left == 0 {
            return;
        }
        for c in 1..=max / prod {
            prefix.push(c);
            go(prefix, prod * c, left - 1, max, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), 1, max_order, max_product, &mut out);
    out
}

#[test]
fn cp_round_trip_at_the_sufficiency_bound() {
    let tuples: Vec<_> = dims_tuples(4, 64)
        .into_iter()
        .filter(|d| d.iter().filter(|&&c| c == 1).count() <= 1)
        .collect();
    let mut rng = RngState::new(31);
    for dims in &tuples {
        let t = T::uniform(dims, -1.0, 1.0, &mut rng);
        let n = sufficiency_bound(dims);
        let f = cp_decompose(&t, n).unwrap();
        let err = relative_error(&reconstruct_cp(&f).unwrap(), &t).unwrap();
        assert!(err < 1e-6, "{dims:?}: {err:e}");
        if n > 1 {
            assert!(matches!(cp_decompose(&t, n - 1), Err(Error::Cardinality { .. })));
        }
    }
}

#[test]
fn vandermonde_flattening_has_full_rank() {
    for dims in dims_tuples(3, 24) {
        let p: usize = dims.iter().product();
        for n in [p, p + 3] {
            let f = vandermonde_factors::<f64>(&dims, n, None).unwrap();
            let x = row_kron(&f, n).unwrap();
            assert_eq!(numeric_rank(&x, DEFAULT_RANK_TOL).unwrap(), p, "{dims:?}, N = {n}");
        }
    }
}

#[test]
fn grid_flattening_has_full_rank_everywhere() {
    for dims in dims_tuples(5, 64) {
        let p: usize = dims.iter().product();
        let f = grid_vandermonde_factors::<f64>(&dims, p + 1).unwrap();
        let x = row_kron(&f, p + 1).unwrap();
        assert_eq!(numeric_rank(&x, DEFAULT_RANK_TOL).unwrap(), p, "{dims:?}");
    }
}

/// `N×s` matrix of rank `r < s` built as a product of random factors.
fn rank_deficient(rng: &mut RngState) -> T {
    let s = 1 + rng.index(16);
    let n = s + rng.index(17 - s);
    let r = rng.index(s);
    let u = T::uniform(&[n, r], -1.0, 1.0, rng);
    let v = T::uniform(&[r, s], -1.0, 1.0, rng);
    u.matmul(&v).unwrap()
}

#[test]
fn perturbation_always_reaches_full_rank() {
    let mut rng = RngState::new(99);
    for _ in 0..100 {
        let y = rank_deficient(&mut rng);
        let s = y.cols();
        assert!(numeric_rank(&y, DEFAULT_RANK_TOL).unwrap() < s);
        let probe = perturb_to_full_rank(&y, 1e-3).unwrap();
        assert_eq!(probe.achieved_rank, s);
        assert!(probe.delta.frobenius_norm() < 1e-3);
    }
}

#[test]
fn weyl_bound_keeps_rank() {
    use pinset_core::decomp::stability::smallest_singular_value;
    let mut rng = RngState::new(5);
    for _ in 0..30 {
        let s = 1 + rng.index(8);
        let n = s + rng.index(8);
        let y = T::uniform(&[n, s], -1.0, 1.0, &mut rng);
        let smin = smallest_singular_value(&y).unwrap();
        let eps = smin / 2.0 * 0.99;
        assert_eq!(rank_stability_trial(&y, eps, 20, &mut rng).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_solutions_satisfy_the_system(seed in any::<u64>(), m in 1usize..6, extra_l in 0usize..5, extra_n in 0usize..5) {
        let mut rng = RngState::new(seed);
        let (l, n) = (m + extra_l, m + extra_n);
        let b = T::uniform(&[m, l], -1.0, 1.0, &mut rng);
        let a = T::uniform(&[m, n], -1.0, 1.0, &mut rng);
        let sol = mdd_solve(&b, &a).unwrap();
        let lambda = T::uniform(&sol.lambda_shape(), -2.0, 2.0, &mut rng);
        let c = sol.sample(&lambda).unwrap();
        prop_assert!(MddSolution::residual(&b, &c, &a).unwrap() < 1e-8);
        prop_assert_eq!(sol.kernel_basis.cols(), l - m);
    }
}
