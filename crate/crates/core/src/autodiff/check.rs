//! Central finite differences and the error measure used by every gradient check.

use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative tolerance of the float64 gradient checks.
pub const REL_TOL_F64: f64 = 1e-6;

/// Relative tolerance of the float32 gradient checks.
pub const REL_TOL_F32: f64 = 1e-4;

/// Absolute error below which an element always passes.
pub const ABS_FLOOR: f64 = 1e-8;

/// Central-difference gradient of `f` with respect to every element of `inputs`.
///
/// `f` is evaluated on perturbed copies; `inputs` itself is left untouched.
pub fn central_difference<F>(inputs: &[Tensor<f64>], h: f64, mut f: F) -> Vec<Tensor<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].len()];
        for (k, gk) in g.iter_mut().enumerate() {
            let orig = inputs[t].data()[k];
            work[t].data_mut()[k] = orig + h;
            let plus = f(&work);
            work[t].data_mut()[k] = orig - h;
            let minus = f(&work);
            work[t].data_mut()[k] = orig;
            *gk = (plus - minus) / (2.0 * h);
        }
        out.push(Tensor::from_raw(inputs[t].shape().to_vec(), g));
    }
    out
}

/// Element error `|a - b| / max(|a|, |b|, floor/rel_tol)`.
///
/// An element is within tolerance iff its relative error is below `rel_tol`
/// or its absolute error is below `floor`; the scaled denominator folds both
/// conditions into one number comparable against `rel_tol`.
pub fn element_error(a: f64, b: f64, rel_tol: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor / rel_tol);
    (a - b).abs() / denom
}

/// Largest [`element_error`] across two equally shaped gradients.
pub fn max_error<T: Scalar>(
    analytic: &Tensor<T>,
    numeric: &Tensor<f64>,
    rel_tol: f64,
    floor: f64,
) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &b)| element_error(a.as_f64(), b, rel_tol, floor))
        .fold(0.0, f64::max)
}
