//! Central finite differences, the oracle for [`crate::autodiff`].

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Central-difference estimate of `∇f(x)`, one coordinate at a time.
pub fn finite_difference_gradient<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    h: T,
) -> Tensor<T> {
    let mut probe = x.clone();
    let two_h = h + h;
    let mut grad = Vec::with_capacity(x.numel());
    for k in 0..x.numel() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        grad.push((up - down) / two_h);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as x")
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all entries.
///
/// `floor` keeps entries whose true gradient is (near) zero from dominating.
pub fn max_relative_error<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<T>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| {
            let (a, n) = (a.as_f64(), n.as_f64());
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
