//! FER2013-style pixel CSV: rows of "label,space-separated pixels[,usage]",
//! optional header, 48×48 single-channel images.

use std::fs;
use std::path::Path;

use super::{LabeledImage, SourceImage, Split, FER_TO_CANONICAL};
use crate::error::{FlowError, Result};
use crate::tensor::Tensor;

const SIDE: usize = 48;

fn usage_split(usage: &str) -> Result<Split> {
    match usage.trim() {
        "" | "Training" | "training" => Ok(Split::Train),
        "PublicTest" | "publictest" | "val" => Ok(Split::Val),
        "PrivateTest" | "privatetest" | "test" => Ok(Split::Test),
        other => Err(FlowError::CsvFormat {
            path: String::new(),
            row: 0,
            detail: format!("unknown usage value {other:?}"),
        }),
    }
}

pub fn read_pixel_csv(path: &Path) -> Result<Vec<SourceImage>> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| FlowError::io(&p, e))?;
    let err = |row: usize, detail: String| FlowError::CsvFormat {
        path: p.clone(),
        row,
        detail,
    };

    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        // header detection: first field non-numeric on the first row
        if idx == 0 && line.split(',').next().unwrap_or("").trim().parse::<usize>().is_err() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(err(row, format!("expected 2 or 3 fields, got {}", fields.len())));
        }
        let raw_label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| err(row, format!("non-numeric label {:?}", fields[0])))?;
        if raw_label >= FER_TO_CANONICAL.len() {
            return Err(err(row, format!("source label {raw_label} out of range 0..6")));
        }
        let label = FER_TO_CANONICAL[raw_label];

        let mut pixels = Vec::with_capacity(SIDE * SIDE);
        for tok in fields[1].split_ascii_whitespace() {
            let v: u16 = tok
                .parse()
                .map_err(|_| err(row, format!("non-numeric pixel {tok:?}")))?;
            if v > 255 {
                return Err(err(row, format!("pixel value {v} exceeds 255")));
            }
            pixels.push(v as f32);
        }
        if pixels.len() != SIDE * SIDE {
            return Err(err(
                row,
                format!("expected {} pixels, got {}", SIDE * SIDE, pixels.len()),
            ));
        }

        let split = match fields.get(2) {
            Some(u) => usage_split(u).map_err(|e| match e {
                FlowError::CsvFormat { detail, .. } => err(row, detail),
                other => other,
            })?,
            None => Split::Train,
        };

        out.push(SourceImage {
            image: LabeledImage {
                pixels: Tensor::new(vec![1, SIDE, SIDE], pixels)?,
                label,
                source: "csv".into(),
                locator: format!("{p}:{row}"),
            },
            split,
        });
    }
    Ok(out)
}
