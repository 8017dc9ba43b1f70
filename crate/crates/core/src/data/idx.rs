//! IDX (big-endian MNIST layout) reader and writer. The writer exists so
//! fixtures and synthetic datasets can be produced in the same format.

use std::fs;
use std::path::Path;

use crate::error::{FlowError, Result};
use crate::tensor::Tensor;

const MAGIC_U8: u8 = 0x08;

fn be_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32> {
    if at + 4 > bytes.len() {
        return Err(FlowError::IdxFormat {
            path: path.into(),
            offset: at,
            detail: "truncated header".into(),
        });
    }
    Ok(u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]))
}

fn read_header(bytes: &[u8], path: &str, want_dims: usize) -> Result<Vec<usize>> {
    if bytes.len() < 4 {
        return Err(FlowError::IdxFormat {
            path: path.into(),
            offset: 0,
            detail: "file shorter than magic".into(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(FlowError::IdxFormat {
            path: path.into(),
            offset: 0,
            detail: format!("bad magic bytes {:02x}{:02x}", bytes[0], bytes[1]),
        });
    }
    if bytes[2] != MAGIC_U8 {
        return Err(FlowError::IdxFormat {
            path: path.into(),
            offset: 2,
            detail: format!("unsupported element type 0x{:02x} (want 0x08 unsigned byte)", bytes[2]),
        });
    }
    let ndims = bytes[3] as usize;
    if ndims != want_dims {
        return Err(FlowError::IdxFormat {
            path: path.into(),
            offset: 3,
            detail: format!("expected {want_dims} dims, got {ndims}"),
        });
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(be_u32(bytes, 4 + 4 * d, path)? as usize);
    }
    Ok(dims)
}

/// Read an IDX image file into [1,H,W] tensors with values 0..255.
pub fn read_idx_images(path: &Path) -> Result<Vec<Tensor<f32>>> {
    let p = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| FlowError::io(&p, e))?;
    let dims = read_header(&bytes, &p, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let header = 4 + 4 * 3;
    let expected = header + n * h * w;
    if bytes.len() != expected {
        return Err(FlowError::IdxFormat {
            path: p,
            offset: bytes.len().min(expected),
            detail: format!("payload length {} does not match header ({expected} bytes expected)", bytes.len()),
        });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let at = header + i * h * w;
        let data: Vec<f32> = bytes[at..at + h * w].iter().map(|&b| b as f32).collect();
        out.push(Tensor::new(vec![1, h, w], data)?);
    }
    Ok(out)
}

/// Read an IDX label file (one unsigned byte per item).
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let p = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| FlowError::io(&p, e))?;
    let dims = read_header(&bytes, &p, 1)?;
    let n = dims[0];
    let header = 4 + 4;
    if bytes.len() != header + n {
        return Err(FlowError::IdxFormat {
            path: p,
            offset: bytes.len().min(header + n),
            detail: format!("label payload length {} does not match header", bytes.len() - header.min(bytes.len())),
        });
    }
    Ok(bytes[header..].to_vec())
}

/// Raw body bytes (payload after the header) of an IDX image file.
pub fn idx_payload(path: &Path) -> Result<Vec<u8>> {
    let p = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| FlowError::io(&p, e))?;
    read_header(&bytes, &p, 3)?;
    Ok(bytes[16..].to_vec())
}

pub fn write_idx_images(path: &Path, images: &[Vec<u8>], h: usize, w: usize) -> Result<()> {
    let mut bytes = vec![0u8, 0, MAGIC_U8, 3];
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(h as u32).to_be_bytes());
    bytes.extend_from_slice(&(w as u32).to_be_bytes());
    for img in images {
        assert_eq!(img.len(), h * w, "image payload must be H*W bytes");
        bytes.extend_from_slice(img);
    }
    fs::write(path, bytes).map_err(|e| FlowError::io(path.display().to_string(), e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = vec![0u8, 0, MAGIC_U8, 1];
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).map_err(|e| FlowError::io(path.display().to_string(), e))
}
