//! Dense row-major tensors and the elementwise / reduction op set.
//!
//! Tensors are immutable values; every op returns a fresh tensor. The data
//! buffer is reference counted so cloning (e.g. recording a parameter on a
//! tape) is cheap.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::error::{FlowError, Result};
use crate::scalar::Scalar;

pub const GUARD_EPS: f64 = 1e-12;

/// When set, division/log guard violations raise errors instead of clamping.
/// The verification suites run in strict mode.
static STRICT_GUARDS: AtomicBool = AtomicBool::new(false);

pub fn set_strict_guards(on: bool) {
    STRICT_GUARDS.store(on, Ordering::SeqCst);
}

pub fn strict_guards() -> bool {
    STRICT_GUARDS.load(Ordering::SeqCst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let elems: usize = shape.iter().product();
        if elems != data.len() {
            return Err(FlowError::ShapeMismatch {
                context: "Tensor::new".into(),
                expected: shape.clone(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let elems = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![T::zero(); elems]),
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let elems = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; elems]),
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: Arc::new(vec![v]),
        }
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Tensor::new(shape.to_vec(), data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn elems(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<T> {
        if !self.is_scalar() {
            return Err(FlowError::NonScalarLoss {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let elems: usize = shape.iter().product();
        if elems != self.elems() {
            return Err(FlowError::ShapeMismatch {
                context: "reshape".into(),
                expected: shape.to_vec(),
                got: self.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    fn check_same_shape(&self, other: &Self, context: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(FlowError::ShapeMismatch {
                context: context.into(),
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, context: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, context)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "div")?;
        let strict = strict_guards();
        let mut out = Vec::with_capacity(self.data.len());
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            out.push(a / guard_divisor(b, strict)?);
        }
        Tensor::new(self.shape.clone(), out)
    }

    pub fn exp(&self) -> Self {
        self.map(|v| v.exp())
    }

    pub fn ln(&self) -> Result<Self> {
        let strict = strict_guards();
        let mut out = Vec::with_capacity(self.data.len());
        for &v in self.data.iter() {
            out.push(guard_log(v, strict)?.ln());
        }
        Tensor::new(self.shape.clone(), out)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    /// `x * mul + add` with constant coefficients.
    pub fn affine(&self, mul: f64, add: f64) -> Self {
        let m = T::from_f64(mul);
        let a = T::from_f64(add);
        self.map(|v| v * m + a)
    }

    /// Sum over the given axes; empty axis list means full reduction to a
    /// scalar tensor.
    pub fn reduce_sum(&self, axes: Option<&[usize]>) -> Result<Self> {
        let rank = self.shape.len();
        let axes: Vec<usize> = match axes {
            None => return Ok(Tensor::scalar(self.sum_all())),
            Some(a) if a.is_empty() => return Ok(Tensor::scalar(self.sum_all())),
            Some(a) => a.to_vec(),
        };
        for &ax in &axes {
            if ax >= rank {
                return Err(FlowError::InvalidAxis { axis: ax, rank });
            }
        }
        let keep: Vec<bool> = (0..rank).map(|i| !axes.contains(&i)).collect();
        let out_shape: Vec<usize> = (0..rank).filter(|&i| keep[i]).map(|i| self.shape[i]).collect();
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let strides = row_major_strides(&self.shape);
        let out_strides = row_major_strides(&out_shape);
        let mut idx = vec![0usize; rank];
        for (flat, &v) in self.data.iter().enumerate() {
            unflatten(flat, &strides, &mut idx);
            let mut out_flat = 0;
            let mut oi = 0;
            for d in 0..rank {
                if keep[d] {
                    out_flat += idx[d] * out_strides[oi];
                    oi += 1;
                }
            }
            out[out_flat] = out[out_flat] + v;
        }
        Tensor::new(out_shape, out)
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    let one = T::one();
    if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    }
}

pub fn guard_divisor<T: Scalar>(b: T, strict: bool) -> Result<T> {
    let eps = T::from_f64(GUARD_EPS);
    if b.abs() >= eps {
        return Ok(b);
    }
    if strict {
        return Err(FlowError::DivisionGuard {
            magnitude: b.abs().as_f64(),
        });
    }
    Ok(if b < T::zero() { -eps } else { eps })
}

pub fn guard_log<T: Scalar>(v: T, strict: bool) -> Result<T> {
    let eps = T::from_f64(GUARD_EPS);
    if v >= eps {
        return Ok(v);
    }
    if strict {
        return Err(FlowError::LogGuard { value: v.as_f64() });
    }
    Ok(eps)
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn unflatten(mut flat: usize, strides: &[usize], idx: &mut [usize]) {
    for (i, &s) in strides.iter().enumerate() {
        idx[i] = flat / s;
        flat %= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_mul() {
        let a = Tensor::<f64>::from_f64_slice(&[2], &[1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_f64_slice(&[2], &[3.0, 4.0]).unwrap();
        assert_eq!(a.mul(&b).unwrap().data(), &[3.0, 8.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::<f64>::scalar(0.0);
        assert_eq!(x.sigmoid().data()[0], 0.5);
    }

    #[test]
    fn exp_log_inverse_pair() {
        let x = Tensor::<f64>::from_f64_slice(&[2], &[0.5, 2.0]).unwrap();
        let y = x.ln().unwrap().exp();
        assert!(x.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(&[2]);
        let b = Tensor::<f64>::zeros(&[3]);
        assert!(matches!(a.add(&b), Err(FlowError::ShapeMismatch { .. })));
    }

    #[test]
    fn reduce_sum_full_and_axis() {
        let a = Tensor::<f64>::from_f64_slice(&[3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.reduce_sum(None).unwrap().data(), &[6.0]);

        let m = Tensor::<f64>::from_f64_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let s0 = m.reduce_sum(Some(&[0])).unwrap();
        assert_eq!(s0.shape(), &[2]);
        assert_eq!(s0.data(), &[4.0, 6.0]);

        let z = Tensor::<f64>::zeros(&[3, 4, 5]);
        assert_eq!(z.reduce_sum(None).unwrap().data(), &[0.0]);
    }

    #[test]
    fn reduce_sum_invalid_axis() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(
            a.reduce_sum(Some(&[2])),
            Err(FlowError::InvalidAxis { .. })
        ));
    }

    #[test]
    fn strict_guard_divide() {
        let a = Tensor::<f64>::scalar(1.0);
        let b = Tensor::<f64>::scalar(1e-15);
        // default mode clamps
        assert!(a.div(&b).is_ok());
        set_strict_guards(true);
        assert!(matches!(a.div(&b), Err(FlowError::DivisionGuard { .. })));
        set_strict_guards(false);
    }
}
