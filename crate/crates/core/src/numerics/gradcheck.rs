//! Central finite differences, used as the independent oracle for every
//! hand-written backward rule.

use crate::numerics::Tensor;
use crate::Float;

/// Gradient of `f` at `x` by central differences with step `h`.
pub fn finite_difference(mut f: impl FnMut(&Tensor) -> Float, x: &Tensor, h: Float) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute difference norm when both
/// are (numerically) zero.
pub fn relative_error(a: &Tensor, b: &Tensor) -> Float {
    assert_eq!(a.shape(), b.shape());
    let diff: Float = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<Float>().sqrt();
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
