//! Pixel ↔ model-space mapping: [0,255] bytes to [-1,1) floats and back.

use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// Map raw pixels to model space. Training mode adds uniform dequantization
/// noise u ~ U[0,1); eval mode uses the deterministic bin center (+0.5).
pub fn to_model_input<R: Rng>(pixels: &Tensor<f32>, train: bool, rng: &mut R) -> Tensor<f32> {
    pixels.map(|p| {
        let u = if train { rng.random_range(0.0..1.0f32) } else { 0.5 };
        (p + u - 128.0) / 128.0
    })
}

fn round_half_away(v: f32) -> f32 {
    if v >= 0.0 { (v + 0.5).floor() } else { (v - 0.5).ceil() }
}

/// Map model-space values back to 8-bit pixels:
/// clamp(round(x·128 + 128 − 0.5), 0, 255), round half away from zero.
pub fn to_image(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(x.map(|v| round_half_away(v * 128.0 + 128.0 - 0.5).clamp(0.0, 255.0)))
}

pub fn to_bytes(x: &Tensor<f32>) -> Result<Vec<u8>> {
    Ok(to_image(x)?.data().iter().map(|&v| v as u8).collect())
}
