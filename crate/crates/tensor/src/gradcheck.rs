//! Central finite differences, independent of the backward pass.

use crate::element::Element;
use crate::tensor::Tensor;

/// Numerical gradient of `f` with respect to every element of `param`,
/// by central differences with step `eps`. The parameter is restored.
pub fn numeric_grad<T: Element>(param: &Tensor<T>, eps: f64, mut f: impl FnMut() -> f64) -> Vec<f64> {
    let base = param.to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut probe = base.clone();
        probe[i] = T::of(base[i].widen() + eps);
        param.set_data(probe.clone()).expect("same length");
        let plus = f();
        probe[i] = T::of(base[i].widen() - eps);
        param.set_data(probe).expect("same length");
        let minus = f();
        out.push((plus - minus) / (2.0 * eps));
    }
    param.set_data(base).expect("same length");
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}
