//! Preprocessing chain: grayscale → center-crop → bilinear resize →
//! optional dedupe → optional per-image truncated SVD → manifest + store.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::manifest::{emotion_classes, write_dataset, DatasetManifest};
use super::{LabeledImage, SourceImage};
use crate::error::{FlowError, Result};
use crate::svd::{svd_truncate, SvdConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PreprocessConfig {
    pub side: usize,
    pub svd: SvdConfig,
    pub dedupe: bool,
    pub classes: Vec<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            side: 32,
            svd: SvdConfig::Off,
            dedupe: false,
            classes: emotion_classes(),
        }
    }
}

/// Average channels down to one. Single-channel input passes through.
pub fn grayscale(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let shape = t.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if c == 1 {
        return Ok(t.clone());
    }
    let data = t.data();
    let mut out = vec![0.0f32; h * w];
    for ch in 0..c {
        for i in 0..h * w {
            out[i] += data[ch * h * w + i];
        }
    }
    for v in &mut out {
        *v /= c as f32;
    }
    Tensor::new(vec![1, h, w], out)
}

/// Crop the centered largest square. On odd excess the extra row/column
/// is dropped from the bottom/right.
pub fn center_crop_square(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let shape = t.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let side = h.min(w);
    let top = (h - side) / 2;
    let left = (w - side) / 2;
    let data = t.data();
    let mut out = Vec::with_capacity(c * side * side);
    for ch in 0..c {
        for y in 0..side {
            let row = ch * h * w + (top + y) * w + left;
            out.extend_from_slice(&data[row..row + side]);
        }
    }
    Tensor::new(vec![c, side, side], out)
}

/// Bilinear resize with edge-aligned sample centers.
pub fn bilinear_resize(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let shape = t.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let data = t.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let sy = if out_h > 1 { (h - 1) as f32 / (out_h - 1) as f32 } else { 0.0 };
    let sx = if out_w > 1 { (w - 1) as f32 / (out_w - 1) as f32 } else { 0.0 };
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let fy = oy as f32 * sy;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let dy = fy - y0 as f32;
            for ox in 0..out_w {
                let fx = ox as f32 * sx;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let dx = fx - x0 as f32;
                let v = plane[y0 * w + x0] * (1.0 - dy) * (1.0 - dx)
                    + plane[y0 * w + x1] * (1.0 - dy) * dx
                    + plane[y1 * w + x0] * dy * (1.0 - dx)
                    + plane[y1 * w + x1] * dy * dx;
                out.push(v);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

fn quantized_bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().map(|&v| v.clamp(0.0, 255.0).round() as u8).collect()
}

fn process_one(src: &SourceImage, cfg: &PreprocessConfig) -> Result<SourceImage> {
    let shape = src.image.pixels.shape();
    if shape[1] < 8 || shape[2] < 8 {
        return Err(FlowError::ImageTooSmall {
            locator: src.image.locator.clone(),
            height: shape[1],
            width: shape[2],
        });
    }
    let t = grayscale(&src.image.pixels)?;
    let t = center_crop_square(&t)?;
    let t = bilinear_resize(&t, cfg.side, cfg.side)?;
    let t = match cfg.svd {
        SvdConfig::Off => t,
        _ => {
            let f64_in = Tensor::new(shape_to(&t), t.data().iter().map(|&v| v as f64).collect())?;
            let trunc = svd_truncate(&f64_in, &cfg.svd)?;
            Tensor::new(shape_to(&trunc), trunc.data().iter().map(|&v| v.clamp(0.0, 255.0) as f32).collect())?
        }
    };
    // re-quantize so the stored bytes reproduce the processed image exactly
    let t = Tensor::new(shape_to(&t), quantized_bytes(&t).iter().map(|&b| b as f32).collect())?;
    Ok(SourceImage {
        image: LabeledImage {
            pixels: t,
            label: src.image.label,
            source: src.image.source.clone(),
            locator: src.image.locator.clone(),
        },
        split: src.split,
    })
}

fn shape_to<T>(t: &Tensor<T>) -> Vec<usize>
where
    T: crate::scalar::Scalar,
{
    t.shape().to_vec()
}

/// Run the full chain over `images` and materialize a dataset under `dir`.
pub fn preprocess(dir: &Path, images: &[SourceImage], cfg: &PreprocessConfig) -> Result<DatasetManifest> {
    let processed: Result<Vec<SourceImage>> =
        images.par_iter().map(|src| process_one(src, cfg)).collect();
    let mut processed = processed?;

    if cfg.dedupe {
        let mut seen = HashSet::new();
        processed.retain(|src| {
            let digest = Sha256::digest(quantized_bytes(&src.image.pixels));
            seen.insert(digest)
        });
    }

    write_dataset(dir, &processed, &cfg.classes)
}

/// Table-style per-label count lines for reporting, in label order.
pub fn count_table(manifest: &DatasetManifest) -> Vec<String> {
    manifest
        .classes
        .iter()
        .map(|e| format!("{e}: {}", manifest.count_for(e)))
        .collect()
}
