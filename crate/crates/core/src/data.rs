//! Dataset ingestion and preprocessing: format readers (IDX, pixel CSV,
//! PGM folders), the grayscale/crop/resize/dedupe/SVD chain, the canonical
//! 7-class emotion taxonomy, and manifest + pixel-store assembly.

pub mod folder;
pub mod idx;
pub mod manifest;
pub mod pgm;
pub mod pixel_csv;
pub mod preprocess;
pub mod quantize;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::tensor::Tensor;

/// Canonical 7-class emotion taxonomy, in fixed index order.
pub const EMOTIONS: [&str; 7] = ["anger", "disgust", "fear", "happy", "neutral", "sad", "surprise"];

pub fn emotion_index(name: &str) -> Result<usize> {
    let lower = name.to_ascii_lowercase();
    EMOTIONS
        .iter()
        .position(|&e| e == lower)
        .ok_or_else(|| FlowError::UnknownLabelName { name: name.into() })
}

/// FER2013 source order (angry, disgust, fear, happy, sad, surprise,
/// neutral) translated to the canonical taxonomy.
pub const FER_TO_CANONICAL: [usize; 7] = [0, 1, 2, 3, 5, 6, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (want train|val|test)")),
        }
    }
}

/// An image with raw 8-bit pixel values held as floats in [0, 255].
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub pixels: Tensor<f32>,
    pub label: usize,
    pub source: String,
    pub locator: String,
}

impl LabeledImage {
    pub fn from_bytes(bytes: &[u8], c: usize, h: usize, w: usize, label: usize, source: &str, locator: &str) -> Result<Self> {
        let pixels = Tensor::new(vec![c, h, w], bytes.iter().map(|&b| b as f32).collect())?;
        Ok(LabeledImage {
            pixels,
            label,
            source: source.into(),
            locator: locator.into(),
        })
    }
}

/// A labeled image together with its destination split.
#[derive(Clone, Debug)]
pub struct SourceImage {
    pub image: LabeledImage,
    pub split: Split,
}

impl SourceImage {
    pub fn train(image: LabeledImage) -> Self {
        SourceImage {
            image,
            split: Split::Train,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order() {
        assert_eq!(emotion_index("Anger").unwrap(), 0);
        assert_eq!(emotion_index("surprise").unwrap(), 6);
        assert!(emotion_index("boredom").is_err());
    }

    #[test]
    fn fer_translation_sends_3_to_happy() {
        assert_eq!(EMOTIONS[FER_TO_CANONICAL[3]], "happy");
        assert_eq!(EMOTIONS[FER_TO_CANONICAL[4]], "sad");
        assert_eq!(EMOTIONS[FER_TO_CANONICAL[6]], "neutral");
    }
}
