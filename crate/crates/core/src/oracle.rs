//! Numerical verification oracles: the finite-difference Jacobian log-det
//! and parameter gradient checks. These deliberately avoid the analytic
//! code paths they are used to validate.

use crate::error::{FlowError, Result};
use crate::linalg;
use crate::tape::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// log|det J| of a map R^D -> R^D assembled entry by entry with central
/// differences. Intended for D <= 16 in 64-bit mode.
pub fn numerical_logdet(
    f: &dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<f64> {
    let d = x.elems();
    let mut jac = vec![0.0f64; d * d];
    for j in 0..d {
        let mut plus = x.clone();
        plus.data_mut()[j] += eps;
        let fp = f(&plus)?;
        let mut minus = x.clone();
        minus.data_mut()[j] -= eps;
        let fm = f(&minus)?;
        if fp.elems() != d || fm.elems() != d {
            return Err(FlowError::ShapeMismatch {
                context: "numerical_logdet: map must preserve dimension".into(),
                expected: vec![d],
                got: vec![fp.elems()],
            });
        }
        for i in 0..d {
            jac[i * d + j] = (fp.data()[i] - fm.data()[i]) / (2.0 * eps);
        }
    }
    let det = linalg::det(&jac, d);
    if det.abs() < 1e-300 {
        return Err(FlowError::SingularMatrix {
            context: "numerical Jacobian".into(),
            det,
        });
    }
    let (log, _) = linalg::log_abs_det(&jac, d, "numerical Jacobian")?;
    Ok(log)
}

/// Central-difference derivative of `loss` w.r.t. one parameter element.
pub fn param_finite_diff(
    store: &mut ParamStore<f64>,
    loss: &mut dyn FnMut(&ParamStore<f64>) -> Result<f64>,
    id: ParamId,
    elem: usize,
    eps: f64,
) -> Result<f64> {
    let orig = store.value(id).clone();
    let mut plus = orig.clone();
    plus.data_mut()[elem] += eps;
    store.set_value(id, plus);
    let fp = loss(store)?;
    let mut minus = orig.clone();
    minus.data_mut()[elem] -= eps;
    store.set_value(id, minus);
    let fm = loss(store)?;
    store.set_value(id, orig);
    Ok((fp - fm) / (2.0 * eps))
}

/// Relative error between an analytic and a numeric derivative, with a small
/// absolute floor to keep near-zero gradients comparable.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_logdet_zero() {
        let x = Tensor::<f64>::zeros(&[4]);
        let ld = numerical_logdet(&|v| Ok(v.clone()), &x, DEFAULT_FD_EPS).unwrap();
        assert!(ld.abs() < 1e-9);
    }

    #[test]
    fn uniform_scaling_logdet() {
        let x = Tensor::<f64>::zeros(&[16]);
        let ld = numerical_logdet(&|v| Ok(v.affine(2.0, 0.0)), &x, DEFAULT_FD_EPS).unwrap();
        assert!((ld - 16.0 * 2.0f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn nonlinear_diagonal_map() {
        // y_i = sinh(x_i); J diagonal with cosh(x_i)
        let x = Tensor::<f64>::from_f64_slice(&[3], &[0.3, -0.5, 1.1]).unwrap();
        let ld = numerical_logdet(&|v| Ok(v.map(f64::sinh)), &x, DEFAULT_FD_EPS).unwrap();
        let expected: f64 = x.data().iter().map(|v| v.cosh().ln()).sum();
        assert!((ld - expected).abs() < 1e-7);
    }
}
