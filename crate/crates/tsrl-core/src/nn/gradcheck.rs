//! Central finite differences for gradient verification.

use crate::tensor::{Scalar, Tensor};

/// Numerical gradient of `f` at `x` via central differences:
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)` per element.
///
/// Cost is two evaluations of `f` per element; intended for small tensors in
/// `f64` verification mode.
pub fn finite_diff_grad<E: Scalar>(
    f: &mut impl FnMut(&Tensor<E>) -> E,
    x: &Tensor<E>,
    h: E,
) -> Tensor<E> {
    assert!(h > E::zero(), "finite difference step must be positive");
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    let two_h = h + h;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / two_h;
    }
    grad
}

/// Worst-case elementwise relative error between an analytic and a numeric
/// gradient. The denominator is floored to keep noise on near-zero entries
/// from dominating: `|a-n| / max(|a|, |n|, floor)`.
pub fn max_rel_err<E: Scalar>(analytic: &Tensor<E>, numeric: &Tensor<E>, floor: E) -> E {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    let mut worst = E::zero();
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let denom = a.abs().max(n.abs()).max(floor);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}
