//! Binary PGM (P5) images, 8-bit grayscale.

use std::fs;
use std::path::Path;

use crate::error::{FlowError, Result};

pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let p = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| FlowError::io(&p, e))?;
    let err = |detail: &str| FlowError::PgmFormat {
        path: p.clone(),
        detail: detail.into(),
    };
    if !bytes.starts_with(b"P5") {
        return Err(err("missing P5 magic"));
    }
    // header tokens: width, height, maxval; '#' comments allowed
    let mut at = 2;
    let mut tokens = Vec::with_capacity(3);
    while tokens.len() < 3 {
        while at < bytes.len() && (bytes[at].is_ascii_whitespace() || bytes[at] == b'#') {
            if bytes[at] == b'#' {
                while at < bytes.len() && bytes[at] != b'\n' {
                    at += 1;
                }
            } else {
                at += 1;
            }
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(err("truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..at]).map_err(|_| err("non-ascii header"))?;
        tokens.push(tok.parse::<usize>().map_err(|_| err("non-numeric header field"))?);
    }
    if at >= bytes.len() {
        return Err(err("missing pixel data"));
    }
    at += 1; // single whitespace after maxval
    let (width, height, maxval) = (tokens[0], tokens[1], tokens[2]);
    if maxval != 255 {
        return Err(err("only maxval 255 supported"));
    }
    if bytes.len() - at < width * height {
        return Err(err("truncated pixel data"));
    }
    Ok(Pgm {
        width,
        height,
        pixels: bytes[at..at + width * height].to_vec(),
    })
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| FlowError::io(path.display().to_string(), e))
}
