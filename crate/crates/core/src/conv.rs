//! 2-D cross-correlation (stride 1, "same" padding) via im2col + GEMM, and
//! the per-pixel channel mixing used by the invertible 1x1 convolution.

use crate::error::{FlowError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_conv_shapes<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    let (c_in, h, w) = match *input.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(FlowError::ShapeMismatch {
                context: "conv2d input (want [C,H,W])".into(),
                expected: vec![3],
                got: input.shape().to_vec(),
            })
        }
    };
    let (c_out, kc, k) = match *kernel.shape() {
        [o, kc, kh, kw] if kh == kw => (o, kc, kh),
        _ => {
            return Err(FlowError::ShapeMismatch {
                context: "conv2d kernel (want [O,C,k,k])".into(),
                expected: vec![4],
                got: kernel.shape().to_vec(),
            })
        }
    };
    if kc != c_in {
        return Err(FlowError::ShapeMismatch {
            context: "conv2d input channels vs kernel".into(),
            expected: kernel.shape().to_vec(),
            got: input.shape().to_vec(),
        });
    }
    if !(k == 1 || k == 3) {
        return Err(FlowError::ShapeMismatch {
            context: "conv2d kernel size (want 1 or 3)".into(),
            expected: vec![c_out, c_in, 3, 3],
            got: kernel.shape().to_vec(),
        });
    }
    if bias.shape() != [c_out] {
        return Err(FlowError::ShapeMismatch {
            context: "conv2d bias".into(),
            expected: vec![c_out],
            got: bias.shape().to_vec(),
        });
    }
    Ok((c_in, h, w, c_out, k))
}

fn im2col<T: Scalar>(input: &[T], c_in: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![T::zero(); c_in * k * k * hw];
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k * k + ky * k + kx) * hw;
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy >= h + pad {
                        continue;
                    }
                    let sy = sy - pad;
                    let dst = row + y * w;
                    let src = c * hw + sy * w;
                    // valid x range: pad <= x + kx < w + pad
                    let x0 = pad.saturating_sub(kx);
                    let x1 = (w + pad - kx).min(w);
                    for x in x0..x1 {
                        cols[dst + x] = input[src + x + kx - pad];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], c_in: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut out = vec![T::zero(); c_in * hw];
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k * k + ky * k + kx) * hw;
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy >= h + pad {
                        continue;
                    }
                    let sy = sy - pad;
                    let src = row + y * w;
                    let dst = c * hw + sy * w;
                    let x0 = pad.saturating_sub(kx);
                    let x1 = (w + pad - kx).min(w);
                    for x in x0..x1 {
                        out[dst + x + kx - pad] = out[dst + x + kx - pad] + cols[src + x];
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation with zero padding k/2; output spatial size equals input.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (c_in, h, w, c_out, k) = check_conv_shapes(input, kernel, bias)?;
    let hw = h * w;
    let cols = im2col(input.data(), c_in, h, w, k);
    let mut out = vec![T::zero(); c_out * hw];
    T::gemm(c_out, c_in * k * k, hw, T::one(), kernel.data(), &cols, T::zero(), &mut out);
    for o in 0..c_out {
        let b = bias.data()[o];
        for v in &mut out[o * hw..(o + 1) * hw] {
            *v = *v + b;
        }
    }
    Tensor::new(vec![c_out, h, w], out)
}

/// Gradients of conv2d: returns (d_input, d_kernel, d_bias).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c_in, h, w, c_out, k) = check_conv_shapes(input, kernel, bias)?;
    let hw = h * w;
    let ckk = c_in * k * k;
    let g = grad_out.data();

    // d_kernel = dY (O x HW) @ cols^T (HW x CKK)
    let cols = im2col(input.data(), c_in, h, w, k);
    let mut cols_t = vec![T::zero(); cols.len()];
    transpose(&cols, ckk, hw, &mut cols_t);
    let mut d_kernel = vec![T::zero(); c_out * ckk];
    T::gemm(c_out, hw, ckk, T::one(), g, &cols_t, T::zero(), &mut d_kernel);

    // d_bias = row sums of dY
    let mut d_bias = vec![T::zero(); c_out];
    for o in 0..c_out {
        d_bias[o] = g[o * hw..(o + 1) * hw].iter().fold(T::zero(), |acc, &v| acc + v);
    }

    // d_cols = K^T (CKK x O) @ dY (O x HW), then scatter back
    let mut k_t = vec![T::zero(); c_out * ckk];
    transpose(kernel.data(), c_out, ckk, &mut k_t);
    let mut d_cols = vec![T::zero(); ckk * hw];
    T::gemm(ckk, c_out, hw, T::one(), &k_t, g, T::zero(), &mut d_cols);
    let d_input = col2im(&d_cols, c_in, h, w, k);

    Ok((
        Tensor::new(vec![c_in, h, w], d_input)?,
        Tensor::new(kernel.shape().to_vec(), d_kernel)?,
        Tensor::new(vec![c_out], d_bias)?,
    ))
}

fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize, out: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
}

/// y[:, p] = W x[:, p] for every spatial position p.
pub fn channel_matmul<T: Scalar>(w: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, width) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(FlowError::ShapeMismatch {
                context: "channel_matmul input".into(),
                expected: vec![3],
                got: x.shape().to_vec(),
            })
        }
    };
    if w.shape() != [c, c] {
        return Err(FlowError::ShapeMismatch {
            context: "channel_matmul weight".into(),
            expected: vec![c, c],
            got: w.shape().to_vec(),
        });
    }
    let hw = h * width;
    let mut out = vec![T::zero(); c * hw];
    T::gemm(c, c, hw, T::one(), w.data(), x.data(), T::zero(), &mut out);
    Tensor::new(vec![c, h, width], out)
}

/// Gradients of channel_matmul: (d_w, d_x).
pub fn channel_matmul_backward<T: Scalar>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = w.shape()[0];
    let hw: usize = x.shape()[1..].iter().product();
    // dW = dY (C x HW) @ X^T (HW x C)
    let mut x_t = vec![T::zero(); c * hw];
    transpose(x.data(), c, hw, &mut x_t);
    let mut d_w = vec![T::zero(); c * c];
    T::gemm(c, hw, c, T::one(), grad_out.data(), &x_t, T::zero(), &mut d_w);
    // dX = W^T @ dY
    let mut w_t = vec![T::zero(); c * c];
    transpose(w.data(), c, c, &mut w_t);
    let mut d_x = vec![T::zero(); c * hw];
    T::gemm(c, c, hw, T::one(), &w_t, grad_out.data(), T::zero(), &mut d_x);
    Ok((
        Tensor::new(vec![c, c], d_w)?,
        Tensor::new(x.shape().to_vec(), d_x)?,
    ))
}
