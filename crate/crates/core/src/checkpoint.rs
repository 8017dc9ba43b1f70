//! Checkpoints: a JSON manifest (architecture, class names, tensor index,
//! seed, epoch) next to a weights blob of little-endian f32 values in
//! parameter-registration order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::model::{ArchitectureConfig, FlowModel};
use crate::scalar::Scalar;
use crate::svd::SvdConfig;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorIndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub architecture: ArchitectureConfig,
    pub svd: SvdConfig,
    pub class_names: Vec<String>,
    pub tensors: Vec<TensorIndexEntry>,
    pub seed: u64,
    pub epoch: usize,
}

fn resolve_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    }
}

pub fn save<T: Scalar>(
    dir: &Path,
    model: &FlowModel<T>,
    svd: &SvdConfig,
    class_names: &[String],
    epoch: usize,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FlowError::io(dir.display().to_string(), e))?;
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for p in model.store().params() {
        tensors.push(TensorIndexEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f32".into(),
            offset: blob.len(),
        });
        for v in p.value.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        architecture: model.config().clone(),
        svd: svd.clone(),
        class_names: class_names.to_vec(),
        tensors,
        seed: model.seed(),
        epoch,
    };
    let weights_path = dir.join(WEIGHTS_FILE);
    fs::write(&weights_path, &blob).map_err(|e| FlowError::io(weights_path.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, json).map_err(|e| FlowError::io(manifest_path.display().to_string(), e))
}

pub fn read_checkpoint_manifest(path: &Path) -> Result<CheckpointManifest> {
    let dir = resolve_dir(path);
    let manifest_path = dir.join(MANIFEST_FILE);
    let p = manifest_path.display().to_string();
    let json = fs::read_to_string(&manifest_path).map_err(|e| FlowError::io(&p, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&json)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(FlowError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Rebuild a model (any precision) from a checkpoint directory.
pub fn load<T: Scalar>(path: &Path) -> Result<(FlowModel<T>, CheckpointManifest)> {
    let dir = resolve_dir(path);
    let manifest = read_checkpoint_manifest(&dir)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&weights_path).map_err(|e| FlowError::io(weights_path.display().to_string(), e))?;

    let mut model = FlowModel::<T>::new(manifest.architecture.clone(), manifest.seed)?;
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(FlowError::Checkpoint(format!(
                "tensor {:?} has unsupported dtype {:?}",
                entry.name, entry.dtype
            )));
        }
        let elems: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * elems;
        if end > blob.len() {
            return Err(FlowError::Checkpoint(format!(
                "tensor {:?} extends past weights blob ({} > {})",
                entry.name,
                end,
                blob.len()
            )));
        }
        let data: Vec<T> = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|b| T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        let id = model
            .store()
            .id_by_name(&entry.name)
            .ok_or_else(|| FlowError::Checkpoint(format!("unknown parameter {:?}", entry.name)))?;
        let current_shape = model.store().value(id).shape().to_vec();
        if current_shape != entry.shape {
            return Err(FlowError::Checkpoint(format!(
                "tensor {:?}: shape {:?} does not match model shape {:?}",
                entry.name, entry.shape, current_shape
            )));
        }
        model.store_mut().set_value(id, Tensor::new(entry.shape.clone(), data)?);
    }
    if manifest.tensors.len() != model.store().params().len() {
        return Err(FlowError::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            manifest.tensors.len(),
            model.store().params().len()
        )));
    }
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{ConvKind, CouplingKind};

    fn tiny_cfg() -> ArchitectureConfig {
        ArchitectureConfig {
            levels: 1,
            depth: 1,
            coupling: CouplingKind::Bplf,
            conv: ConvKind::ThreeByThree,
            hidden: 4,
            num_classes: None,
            input: [1, 4, 4],
        }
    }

    #[test]
    fn save_load_resave_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let model = FlowModel::<f32>::new(tiny_cfg(), 7).unwrap();
        save(&a, &model, &SvdConfig::Off, &[], 3).unwrap();
        let (loaded, manifest) = load::<f32>(&a).unwrap();
        assert_eq!(manifest.epoch, 3);
        save(&b, &loaded, &manifest.svd, &manifest.class_names, manifest.epoch).unwrap();
        let wa = std::fs::read(a.join(WEIGHTS_FILE)).unwrap();
        let wb = std::fs::read(b.join(WEIGHTS_FILE)).unwrap();
        assert_eq!(wa, wb);
        let ma = std::fs::read(a.join(MANIFEST_FILE)).unwrap();
        let mb = std::fs::read(b.join(MANIFEST_FILE)).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn probe_likelihood_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let model = FlowModel::<f32>::new(tiny_cfg(), 11).unwrap();
        let x = Tensor::<f32>::full(&[1, 4, 4], 0.25);
        let ll = model.log_likelihood(&x, None).unwrap();
        save(dir.path(), &model, &SvdConfig::Off, &[], 0).unwrap();
        let (loaded, _) = load::<f32>(dir.path()).unwrap();
        let ll2 = loaded.log_likelihood(&x, None).unwrap();
        assert!((ll - ll2).abs() < 1e-6, "{ll} vs {ll2}");
    }

    #[test]
    fn load_into_f64() {
        let dir = tempfile::tempdir().unwrap();
        let model = FlowModel::<f32>::new(tiny_cfg(), 2).unwrap();
        save(dir.path(), &model, &SvdConfig::Off, &[], 0).unwrap();
        let (loaded, _) = load::<f64>(dir.path()).unwrap();
        let x32 = Tensor::<f32>::full(&[1, 4, 4], 0.1);
        let x64 = Tensor::<f64>::new(vec![1, 4, 4], vec![0.1f32 as f64; 16]).unwrap();
        let ll32 = model.log_likelihood(&x32, None).unwrap() as f64;
        let ll64 = loaded.log_likelihood(&x64, None).unwrap();
        assert!((ll32 - ll64).abs() < 1e-3);
    }

    #[test]
    fn corrupt_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = FlowModel::<f32>::new(tiny_cfg(), 2).unwrap();
        save(dir.path(), &model, &SvdConfig::Off, &[], 0).unwrap();
        let weights = dir.path().join(WEIGHTS_FILE);
        let bytes = std::fs::read(&weights).unwrap();
        std::fs::write(&weights, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load::<f32>(dir.path()), Err(FlowError::Checkpoint(_))));
    }
}
