//! Dataset manifest (JSON) plus a flat binary pixel store. Records carry
//! byte offsets into the store; the manifest checksums the whole payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LabeledImage, SourceImage, Split, EMOTIONS};
use crate::error::{FlowError, Result};

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "dataset.json";
pub const PIXEL_STORE_FILE: &str = "pixels.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub locator: String,
    pub label: usize,
    pub source: String,
    pub split: Split,
    pub offset: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// Class names in label-index order (the emotion taxonomy, digit
    /// classes, or any other label set the sources used).
    pub classes: Vec<String>,
    pub records: Vec<ManifestRecord>,
    pub counts: BTreeMap<String, usize>,
    pub checksum: String,
}

/// The canonical emotion taxonomy as owned class names.
pub fn emotion_classes() -> Vec<String> {
    EMOTIONS.iter().map(|s| s.to_string()).collect()
}

impl DatasetManifest {
    pub fn count_for(&self, emotion: &str) -> usize {
        self.counts.get(emotion).copied().unwrap_or(0)
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    fn validate(&self) -> Result<()> {
        let mut tallies: BTreeMap<String, usize> = BTreeMap::new();
        for r in &self.records {
            if r.label >= self.classes.len() {
                return Err(FlowError::Manifest(format!(
                    "record {:?} has label {} out of range",
                    r.locator, r.label
                )));
            }
            *tallies.entry(self.classes[r.label].clone()).or_default() += 1;
        }
        if tallies != self.counts {
            return Err(FlowError::Manifest("counts do not match record tallies".into()));
        }
        Ok(())
    }
}

/// Write a manifest + pixel store for the given images, in input order.
pub fn write_dataset(dir: &Path, images: &[SourceImage], classes: &[String]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| FlowError::io(dir.display().to_string(), e))?;
    let mut store: Vec<u8> = Vec::new();
    let mut records = Vec::with_capacity(images.len());
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();

    for src in images {
        let img = &src.image;
        let shape = img.pixels.shape();
        let (h, w) = (shape[1], shape[2]);
        if img.label >= classes.len() {
            return Err(FlowError::Manifest(format!(
                "image {:?} has label {} but only {} classes",
                img.locator,
                img.label,
                classes.len()
            )));
        }
        let offset = store.len();
        store.extend(img.pixels.data().iter().map(|&v| v as u8));
        records.push(ManifestRecord {
            locator: img.locator.clone(),
            label: img.label,
            source: img.source.clone(),
            split: src.split,
            offset,
            height: h,
            width: w,
        });
        *counts.entry(classes[img.label].clone()).or_default() += 1;
    }

    let checksum = hex_string(&Sha256::digest(&store));
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        classes: classes.to_vec(),
        records,
        counts,
        checksum,
    };

    let store_path = dir.join(PIXEL_STORE_FILE);
    fs::write(&store_path, &store).map_err(|e| FlowError::io(store_path.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, json).map_err(|e| FlowError::io(manifest_path.display().to_string(), e))?;
    Ok(manifest)
}

/// Accept either the dataset directory or the manifest JSON path itself.
fn resolve_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let dir = resolve_dir(path);
    let manifest_path = dir.join(MANIFEST_FILE);
    let p = manifest_path.display().to_string();
    let json = fs::read_to_string(&manifest_path).map_err(|e| FlowError::io(&p, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(FlowError::Manifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    manifest.validate()?;
    Ok(manifest)
}

/// Load a split back into memory, verifying the pixel-store checksum.
pub fn load_split(path: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let dir = resolve_dir(path);
    let manifest = read_manifest(&dir)?;
    let store_path = dir.join(PIXEL_STORE_FILE);
    let store = fs::read(&store_path).map_err(|e| FlowError::io(store_path.display().to_string(), e))?;
    let checksum = hex_string(&Sha256::digest(&store));
    if checksum != manifest.checksum {
        return Err(FlowError::Manifest("pixel store checksum mismatch".into()));
    }
    let mut out = Vec::new();
    for r in manifest.split_records(split) {
        let len = r.height * r.width;
        if r.offset + len > store.len() {
            return Err(FlowError::Manifest(format!(
                "record {:?} offset {} exceeds store size {}",
                r.locator,
                r.offset,
                store.len()
            )));
        }
        out.push(LabeledImage::from_bytes(
            &store[r.offset..r.offset + len],
            1,
            r.height,
            r.width,
            r.label,
            &r.source,
            &r.locator,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn img(label: usize, fill: f32, locator: &str) -> SourceImage {
        SourceImage::train(LabeledImage {
            pixels: Tensor::full(&[1, 4, 4], fill),
            label,
            source: "test".into(),
            locator: locator.into(),
        })
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![img(0, 10.0, "a"), img(0, 20.0, "b"), img(3, 30.0, "c")];
        let written = write_dataset(dir.path(), &images, &emotion_classes()).unwrap();
        assert_eq!(written.count_for("anger"), 2);
        assert_eq!(written.count_for("happy"), 1);

        let loaded = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[2].pixels.data()[0], 30.0);
        assert_eq!(loaded[2].label, 3);
    }

    #[test]
    fn determinism_same_inputs_same_checksum() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let images = vec![img(1, 5.0, "x"), img(2, 6.0, "y")];
        let m1 = write_dataset(d1.path(), &images, &emotion_classes()).unwrap();
        let m2 = write_dataset(d2.path(), &images, &emotion_classes()).unwrap();
        assert_eq!(m1.checksum, m2.checksum);
    }

    #[test]
    fn tampered_store_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[img(0, 1.0, "a")], &emotion_classes()).unwrap();
        let store = dir.path().join(PIXEL_STORE_FILE);
        let mut bytes = std::fs::read(&store).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&store, bytes).unwrap();
        assert!(matches!(
            load_split(dir.path(), Split::Train),
            Err(FlowError::Manifest(_))
        ));
    }

    #[test]
    fn corrupt_counts_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[img(0, 1.0, "a")], &emotion_classes()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let json = std::fs::read_to_string(&mpath).unwrap();
        let json = json.replace("\"anger\": 1", "\"anger\": 2");
        std::fs::write(&mpath, json).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(FlowError::Manifest(_))));
    }
}
