//! Volume-preserving shape permutations: space-to-channel squeeze and
//! channel split/concat. All of these have log-det 0 exactly.

use crate::error::{FlowError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// [C,H,W] -> [4C,H/2,W/2]. Each 2x2 spatial block becomes four channels in
/// the fixed order top-left, top-right, bottom-left, bottom-right; output
/// channel 4c+b comes from input channel c.
pub fn squeeze<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(x, "squeeze")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(FlowError::OddSpatial {
            context: "squeeze".into(),
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); x.elems()];
    let data = x.data();
    for ci in 0..c {
        for b in 0..4 {
            let (dy, dx) = (b / 2, b % 2);
            let oc = ci * 4 + b;
            for y in 0..oh {
                for xx in 0..ow {
                    out[(oc * oh + y) * ow + xx] = data[(ci * h + 2 * y + dy) * w + 2 * xx + dx];
                }
            }
        }
    }
    Tensor::new(vec![c * 4, oh, ow], out)
}

/// Exact inverse of [`squeeze`].
pub fn unsqueeze<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(x, "unsqueeze")?;
    if c % 4 != 0 {
        return Err(FlowError::OddChannels {
            context: "unsqueeze".into(),
            channels: c,
        });
    }
    let oc = c / 4;
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![T::zero(); x.elems()];
    let data = x.data();
    for ci in 0..oc {
        for b in 0..4 {
            let (dy, dx) = (b / 2, b % 2);
            let ic = ci * 4 + b;
            for y in 0..h {
                for xx in 0..w {
                    out[(ci * oh + 2 * y + dy) * ow + 2 * xx + dx] = data[(ic * h + y) * w + xx];
                }
            }
        }
    }
    Tensor::new(vec![oc, oh, ow], out)
}

/// Channel-wise halving: (first C/2 channels, remaining C/2 channels).
pub fn split_channels<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, _, _) = dims3(x, "split")?;
    if c % 2 != 0 {
        return Err(FlowError::OddChannels {
            context: "split".into(),
            channels: c,
        });
    }
    Ok((slice_channels(x, 0, c / 2)?, slice_channels(x, c / 2, c)?))
}

pub fn slice_channels<T: Scalar>(x: &Tensor<T>, from: usize, to: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(x, "slice_channels")?;
    if from >= to || to > c {
        return Err(FlowError::ShapeMismatch {
            context: "slice_channels range".into(),
            expected: vec![from, to],
            got: vec![c],
        });
    }
    let hw = h * w;
    Tensor::new(vec![to - from, h, w], x.data()[from * hw..to * hw].to_vec())
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, h, w) = dims3(a, "concat")?;
    let (cb, hb, wb) = dims3(b, "concat")?;
    if (h, w) != (hb, wb) {
        return Err(FlowError::ShapeMismatch {
            context: "concat spatial".into(),
            expected: vec![ca, h, w],
            got: vec![cb, hb, wb],
        });
    }
    let mut data = Vec::with_capacity(a.elems() + b.elems());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, h, w], data)
}

pub fn dims3<T: Scalar>(x: &Tensor<T>, context: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(FlowError::ShapeMismatch {
            context: format!("{context} (want [C,H,W])"),
            expected: vec![3],
            got: x.shape().to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squeeze_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        assert_eq!(squeeze(&x).unwrap().shape(), &[4, 2, 2]);
        let x = Tensor::<f64>::zeros(&[3, 2, 2]);
        assert_eq!(squeeze(&x).unwrap().shape(), &[12, 1, 1]);
    }

    #[test]
    fn squeeze_preserves_multiset_and_inverts() {
        let x = Tensor::<f64>::new(vec![1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let y = squeeze(&x).unwrap();
        let mut vals: Vec<f64> = y.data().to_vec();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, (0..16).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(unsqueeze(&y).unwrap(), x);
    }

    #[test]
    fn squeeze_block_order() {
        // 2x2 image [[a,b],[c,d]] -> channels [a,b,c,d] (TL,TR,BL,BR)
        let x = Tensor::<f64>::from_f64_slice(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = squeeze(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn odd_spatial_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4]);
        assert!(matches!(squeeze(&x), Err(FlowError::OddSpatial { .. })));
    }

    #[test]
    fn split_concat_round_trip() {
        let x = Tensor::<f64>::new(vec![4, 2, 2], (0..16).map(|v| v as f64).collect()).unwrap();
        let (a, b) = split_channels(&x).unwrap();
        assert_eq!(a.shape(), &[2, 2, 2]);
        // first half is channels 0..C/2
        assert_eq!(a.data(), &x.data()[..8]);
        assert_eq!(concat_channels(&a, &b).unwrap(), x);
    }

    #[test]
    fn split_odd_channels_rejected() {
        let x = Tensor::<f64>::zeros(&[3, 2, 2]);
        assert!(matches!(split_channels(&x), Err(FlowError::OddChannels { .. })));
    }
}
