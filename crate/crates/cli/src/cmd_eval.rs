//! `bplf eval`: deterministic mean NLL + bits/dim of a checkpoint on one
//! dataset split, with the checkpoint's SVD preprocessing re-applied.

use std::path::PathBuf;

use clap::Args;

use bplf_core::checkpoint;
use bplf_core::data::manifest::load_split;
use bplf_core::data::Split;
use bplf_core::train::{evaluate, svd_images};
use bplf_core::FlowModel;

use crate::util::{CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory (holding dataset.json + pixels.bin).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: Split,
}

pub fn run(args: EvalArgs) -> CliResult {
    let (model, manifest): (FlowModel<f32>, _) = checkpoint::load(&args.checkpoint)?;
    let images = load_split(&args.dataset, args.split)?;
    if images.is_empty() {
        return Err(CliError::Usage(format!(
            "dataset {} has no images in split {}",
            args.dataset.display(),
            args.split.as_str()
        )));
    }
    let want = model.config().input;
    for img in &images {
        if img.pixels.shape() != want {
            return Err(CliError::Runtime(format!(
                "image {} has shape {:?} but the checkpoint expects {:?}",
                img.locator,
                img.pixels.shape(),
                want
            )));
        }
    }
    let images = if manifest.svd.is_off() {
        images
    } else {
        svd_images(&images, &manifest.svd)?
    };
    let (nll, bpd) = evaluate(&model, &images)?;
    println!("nll_nats: {nll}");
    println!("bits_per_dim: {bpd}");
    Ok(())
}
