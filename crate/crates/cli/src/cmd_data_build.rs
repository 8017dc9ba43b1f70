//! `bplf data-build`: merge raw sources (IDX pairs, pixel CSV, emotion
//! folders) through the preprocessing chain into a dataset manifest +
//! pixel store, then print the per-label count table.

use std::path::{Path, PathBuf};

use clap::Args;

use bplf_core::data::folder::read_image_folder;
use bplf_core::data::idx::{read_idx_images, read_idx_labels};
use bplf_core::data::manifest::emotion_classes;
use bplf_core::data::pixel_csv::read_pixel_csv;
use bplf_core::data::preprocess::{count_table, preprocess, PreprocessConfig};
use bplf_core::data::{LabeledImage, SourceImage};
use bplf_core::SvdConfig;

use crate::util::{CliError, CliResult};

#[derive(Args)]
pub struct DataBuildArgs {
    /// Raw source as <kind>:<path>; kind is idx (directory holding
    /// images.idx + labels.idx), csv (pixel CSV) or folder (per-class
    /// subdirectories of PGM files). Repeatable.
    #[arg(long, required = true)]
    pub source: Vec<String>,
    /// Output image side length after crop + resize.
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    /// Drop byte-identical duplicates after preprocessing.
    #[arg(long)]
    pub dedupe: bool,
    /// Truncated-SVD energy fraction applied per image, or "off".
    #[arg(long, default_value = "off")]
    pub svd_energy: SvdConfig,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

enum SourceKind {
    Idx,
    Csv,
    Folder,
}

fn parse_source(spec: &str) -> Result<(SourceKind, PathBuf), CliError> {
    let (kind, path) = spec.split_once(':').ok_or_else(|| {
        CliError::Usage(format!("source {spec:?} must be <kind>:<path>"))
    })?;
    let kind = match kind {
        "idx" => SourceKind::Idx,
        "csv" => SourceKind::Csv,
        "folder" => SourceKind::Folder,
        other => {
            return Err(CliError::Usage(format!(
                "unknown source kind {other:?} (want idx|csv|folder)"
            )))
        }
    };
    Ok((kind, PathBuf::from(path)))
}

fn read_idx_source(dir: &Path) -> Result<Vec<SourceImage>, CliError> {
    let images = read_idx_images(&dir.join("images.idx"))?;
    let labels = read_idx_labels(&dir.join("labels.idx"))?;
    if images.len() != labels.len() {
        return Err(CliError::Runtime(format!(
            "{}: {} images but {} labels",
            dir.display(),
            images.len(),
            labels.len()
        )));
    }
    images
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (pixels, label))| {
            Ok(SourceImage::train(LabeledImage {
                pixels,
                label: label as usize,
                source: "idx".into(),
                locator: format!("{}#{i}", dir.display()),
            }))
        })
        .collect()
}

pub fn run(args: DataBuildArgs) -> CliResult {
    let sources: Result<Vec<_>, CliError> =
        args.source.iter().map(|s| parse_source(s)).collect();
    let sources = sources?;

    let all_idx = sources.iter().all(|(k, _)| matches!(k, SourceKind::Idx));
    let any_idx = sources.iter().any(|(k, _)| matches!(k, SourceKind::Idx));
    if any_idx && !all_idx {
        return Err(CliError::Usage(
            "idx sources carry digit labels and cannot be mixed with \
             emotion-labeled csv/folder sources"
                .into(),
        ));
    }
    let classes: Vec<String> = if all_idx {
        (0..10).map(|d| d.to_string()).collect()
    } else {
        emotion_classes()
    };

    let mut images: Vec<SourceImage> = Vec::new();
    for (kind, path) in &sources {
        match kind {
            SourceKind::Idx => images.extend(read_idx_source(path)?),
            SourceKind::Csv => images.extend(read_pixel_csv(path)?),
            SourceKind::Folder => images.extend(
                read_image_folder(path)?.into_iter().map(SourceImage::train),
            ),
        }
    }
    if images.is_empty() {
        return Err(CliError::Usage("sources contain no images".into()));
    }

    args.svd_energy
        .validate(args.size, args.size)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = PreprocessConfig {
        side: args.size,
        svd: args.svd_energy,
        dedupe: args.dedupe,
        classes,
    };
    let manifest = preprocess(&args.out, &images, &cfg)?;

    for line in count_table(&manifest) {
        println!("{line}");
    }
    println!("total: {}", manifest.records.len());
    println!("checksum: {}", manifest.checksum);
    Ok(())
}
