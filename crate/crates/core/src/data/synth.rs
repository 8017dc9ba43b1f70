//! Deterministic synthetic datasets for fixtures and desk-scale runs:
//! digit-like glyph images in MNIST layout, and a two-class bright/dark set
//! for conditional-sampling checks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::idx::{write_idx_images, write_idx_labels};
use super::{LabeledImage, SourceImage};
use crate::error::Result;
use crate::tensor::Tensor;

/// Render one glyph image: a class-specific constellation of Gaussian
/// blobs around the image center, with per-sample position/intensity
/// jitter. Smooth, dark-background images that a small flow can model.
pub fn glyph_image(class: usize, side: usize, rng: &mut ChaCha12Rng) -> Vec<u8> {
    let n_blobs = 3 + class % 4;
    let base_angle = class as f32 * 0.7;
    let center = side as f32 / 2.0;
    let radius = side as f32 * 0.28;
    let sigma = side as f32 * 0.085;

    let mut blobs = Vec::with_capacity(n_blobs);
    for b in 0..n_blobs {
        let angle = base_angle + b as f32 * std::f32::consts::TAU / n_blobs as f32;
        let jx: f32 = rng.random_range(-1.5..1.5);
        let jy: f32 = rng.random_range(-1.5..1.5);
        let amp: f32 = rng.random_range(120.0..200.0);
        blobs.push((center + radius * angle.cos() + jx, center + radius * angle.sin() + jy, amp));
    }

    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let mut v = 0.0f32;
            for &(bx, by, amp) in &blobs {
                let dx = x as f32 - bx;
                let dy = y as f32 - by;
                v += amp * (-(dx * dx + dy * dy) * inv_two_sigma2).exp();
            }
            out.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Generate an MNIST-layout digit-like dataset: `n` images of `side`×`side`,
/// labels cycling through 0..9, written as images.idx + labels.idx.
pub fn write_glyph_dataset(dir: &Path, n: usize, side: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        images.push(glyph_image(class, side, &mut rng));
        labels.push(class as u8);
    }
    write_idx_images(&dir.join("images.idx"), &images, side, side)?;
    write_idx_labels(&dir.join("labels.idx"), &labels)
}

/// In-memory glyph dataset as labeled images (values 0..255).
pub fn glyph_images(n: usize, side: usize, seed: u64) -> Result<Vec<SourceImage>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = i % 10;
            let bytes = glyph_image(class, side, &mut rng);
            Ok(SourceImage::train(LabeledImage::from_bytes(
                &bytes,
                1,
                side,
                side,
                class,
                "synth",
                &format!("glyph-{i}"),
            )?))
        })
        .collect()
}

/// Two-class set: label 0 = dark images (mean around 40), label 1 = bright
/// (mean around 215), with mild per-pixel noise.
pub fn bright_dark_images(n_per_class: usize, side: usize, seed: u64) -> Result<Vec<SourceImage>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let label = i % 2;
        let base = if label == 0 { 40.0 } else { 215.0 };
        let bytes: Vec<u8> = (0..side * side)
            .map(|_| (base + rng.random_range(-15.0..15.0f32)).clamp(0.0, 255.0) as u8)
            .collect();
        out.push(SourceImage::train(LabeledImage::from_bytes(
            &bytes,
            1,
            side,
            side,
            label,
            "synth",
            &format!("bd-{i}"),
        )?));
    }
    Ok(out)
}

/// Mean pixel value of an image tensor — used to check conditional samples.
pub fn mean_pixel(t: &Tensor<f32>) -> f32 {
    t.data().iter().sum::<f32>() / t.data().len() as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::idx::{read_idx_images, read_idx_labels};

    #[test]
    fn glyph_dataset_round_trips_through_idx() {
        let dir = tempfile::tempdir().unwrap();
        write_glyph_dataset(dir.path(), 20, 32, 5).unwrap();
        let imgs = read_idx_images(&dir.path().join("images.idx")).unwrap();
        let labels = read_idx_labels(&dir.path().join("labels.idx")).unwrap();
        assert_eq!(imgs.len(), 20);
        assert_eq!(labels.len(), 20);
        assert_eq!(labels[13], 3);
        assert_eq!(imgs[0].shape(), &[1, 32, 32]);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = glyph_images(10, 32, 9).unwrap();
        let b = glyph_images(10, 32, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.pixels, y.image.pixels);
        }
        let c = glyph_images(10, 32, 10).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.image.pixels != y.image.pixels));
    }

    #[test]
    fn glyphs_are_dark_background_with_structure() {
        let imgs = glyph_images(50, 32, 1).unwrap();
        for s in &imgs {
            let mean = mean_pixel(&s.image.pixels);
            assert!(mean > 2.0 && mean < 80.0, "mean {mean} out of expected band");
            let max = s.image.pixels.data().iter().cloned().fold(0.0f32, f32::max);
            assert!(max > 100.0, "no bright structure");
        }
    }

    #[test]
    fn bright_and_dark_classes_separate() {
        let imgs = bright_dark_images(20, 16, 3).unwrap();
        for s in &imgs {
            let mean = mean_pixel(&s.image.pixels);
            if s.image.label == 0 {
                assert!(mean < 100.0);
            } else {
                assert!(mean > 155.0);
            }
        }
    }
}
