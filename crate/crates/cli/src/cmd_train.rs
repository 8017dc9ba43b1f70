//! `bplf train`: fit a flow on a built dataset and write checkpoint +
//! per-epoch metrics CSV under the output directory.

use std::path::PathBuf;

use clap::Args;

use bplf_core::data::manifest::read_manifest;
use bplf_core::data::manifest::load_split;
use bplf_core::data::Split;
use bplf_core::train::{svd_images, train, write_metrics_csv, TrainConfig};
use bplf_core::{checkpoint, ArchitectureConfig, ConvKind, CouplingKind, FlowModel, SvdConfig};

use crate::util::{CliError, CliResult};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (holding dataset.json + pixels.bin).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "bplf")]
    pub coupling: CouplingKind,
    /// Coupling-net convolution mix: 3x3 or 3x3+1x1.
    #[arg(long, default_value = "3x3")]
    pub conv: ConvKind,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Truncated-SVD energy fraction applied to inputs, or "off".
    #[arg(long, default_value = "off")]
    pub svd_energy: SvdConfig,
    /// Condition the model on the dataset's class labels.
    #[arg(long)]
    pub conditional: bool,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Linear learning-rate warmup, in optimizer steps.
    #[arg(long, default_value_t = 500)]
    pub warmup: usize,
    /// Gradient clipping threshold (global L2 norm).
    #[arg(long, default_value_t = 50.0)]
    pub clip_norm: f64,
    /// Output directory for manifest.json, weights.bin and metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: TrainArgs) -> CliResult {
    let manifest = read_manifest(&args.dataset)?;
    let images = load_split(&args.dataset, Split::Train)?;
    if images.is_empty() {
        return Err(CliError::Usage(format!(
            "dataset {} has no training images",
            args.dataset.display()
        )));
    }

    let shape = images[0].pixels.shape().to_vec();
    for img in &images {
        if img.pixels.shape() != shape.as_slice() {
            return Err(CliError::Runtime(format!(
                "dataset images disagree on shape: {:?} vs {:?} ({})",
                shape,
                img.pixels.shape(),
                img.locator
            )));
        }
    }
    let (h, w) = (shape[1], shape[2]);

    let div = 1usize << args.levels;
    if h % div != 0 || w % div != 0 {
        return Err(CliError::Usage(format!(
            "input sides {h}x{w} must be divisible by 2^levels = {div}; \
             lower --levels or rebuild the dataset at a compatible --size"
        )));
    }

    args.svd_energy
        .validate(h, w)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let cfg = ArchitectureConfig {
        levels: args.levels,
        depth: args.depth,
        coupling: args.coupling,
        conv: args.conv,
        hidden: args.hidden,
        num_classes: args.conditional.then_some(manifest.classes.len()),
        input: [1, h, w],
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let images = if args.svd_energy.is_off() {
        images
    } else {
        svd_images(&images, &args.svd_energy)?
    };

    let mut model = FlowModel::<f32>::new(cfg, args.seed)?;
    let tcfg = TrainConfig {
        epochs: args.epochs,
        batch: args.batch,
        lr: args.lr,
        seed: args.seed,
        warmup_steps: args.warmup,
        clip_norm: args.clip_norm,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &images, &tcfg)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out.display())))?;
    write_metrics_csv(&args.out.join("metrics.csv"), &report.metrics)?;
    checkpoint::save(&args.out, &model, &args.svd_energy, &manifest.classes, args.epochs)?;

    println!("trained {} epochs on {} images", args.epochs, images.len());
    println!("final_bits_per_dim: {}", report.final_bits_per_dim());
    Ok(())
}
