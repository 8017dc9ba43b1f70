//! Folder-of-PGMs ingestion: subdirectories named by canonical emotion,
//! 8-bit grayscale P5 files inside.

use std::fs;
use std::path::Path;

use super::pgm::read_pgm;
use super::{emotion_index, LabeledImage};
use crate::error::{FlowError, Result};
use crate::tensor::Tensor;

pub fn read_image_folder(root: &Path) -> Result<Vec<LabeledImage>> {
    let root_str = root.display().to_string();
    let mut entries: Vec<_> = fs::read_dir(root)
        .map_err(|e| FlowError::io(&root_str, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| FlowError::io(&root_str, e))?;
    entries.sort_by_key(|e| e.file_name());

    let mut out = Vec::new();
    for entry in entries {
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let dir_name = entry.file_name().to_string_lossy().to_string();
        let label = emotion_index(&dir_name)?;
        let mut files: Vec<_> = fs::read_dir(&path)
            .map_err(|e| FlowError::io(path.display().to_string(), e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| FlowError::io(path.display().to_string(), e))?;
        files.sort_by_key(|e| e.file_name());
        for file in files {
            let fp = file.path();
            if fp.extension().map(|e| e != "pgm").unwrap_or(true) {
                continue;
            }
            let img = read_pgm(&fp)?;
            out.push(LabeledImage {
                pixels: Tensor::new(
                    vec![1, img.height, img.width],
                    img.pixels.iter().map(|&b| b as f32).collect(),
                )?,
                label,
                source: "folder".into(),
                locator: fp.display().to_string(),
            });
        }
    }
    Ok(out)
}
