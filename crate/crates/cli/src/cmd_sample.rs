//! `bplf sample`: decode prior draws from a checkpoint into PGM files,
//! optionally tiling them into one grid image.

use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use bplf_core::checkpoint;
use bplf_core::data::pgm::write_pgm;
use bplf_core::data::quantize::to_bytes;
use bplf_core::FlowModel;

use crate::util::{CliError, CliResult};

#[derive(Args)]
pub struct SampleArgs {
    /// Checkpoint directory (holding manifest.json + weights.bin).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub count: usize,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
    /// Class name to condition on, or "none" for unconditional sampling.
    #[arg(long, default_value = "none")]
    pub label: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for sample_<label>_<i>.pgm files.
    #[arg(long)]
    pub out: PathBuf,
    /// Additionally write one tiled PGM of all samples.
    #[arg(long)]
    pub grid: bool,
}

pub fn run(args: SampleArgs) -> CliResult {
    let (model, manifest): (FlowModel<f32>, _) = checkpoint::load(&args.checkpoint)?;

    let want_label = !args.label.eq_ignore_ascii_case("none");
    let label_idx = match (model.config().num_classes, want_label) {
        (None, true) => {
            return Err(CliError::Usage(format!(
                "--label {:?} given, but the checkpoint is unconditional",
                args.label
            )));
        }
        (Some(_), false) => {
            return Err(CliError::Usage(
                "the checkpoint is conditional; pass --label <class name>".into(),
            ));
        }
        (Some(_), true) => {
            let idx = manifest
                .class_names
                .iter()
                .position(|c| c.eq_ignore_ascii_case(&args.label))
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "unknown label {:?}; checkpoint classes are {:?}",
                        args.label, manifest.class_names
                    ))
                })?;
            Some(idx)
        }
        (None, false) => None,
    };

    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let samples = model.sample(args.count, label_idx, args.temperature, &mut rng)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out.display())))?;

    let label_tag = if want_label {
        args.label.to_ascii_lowercase()
    } else {
        "none".into()
    };
    let [_, h, w] = model.config().input;
    let mut pixel_sets = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let bytes = to_bytes(s)?;
        let path = args.out.join(format!("sample_{label_tag}_{i}.pgm"));
        write_pgm(&path, w, h, &bytes)?;
        pixel_sets.push(bytes);
    }

    if args.grid && !pixel_sets.is_empty() {
        let cols = (args.count as f64).sqrt().ceil() as usize;
        let rows = args.count.div_ceil(cols);
        let (gw, gh) = (cols * w, rows * h);
        let mut grid = vec![0u8; gw * gh];
        for (i, bytes) in pixel_sets.iter().enumerate() {
            let (r, c) = (i / cols, i % cols);
            for y in 0..h {
                let dst = (r * h + y) * gw + c * w;
                grid[dst..dst + w].copy_from_slice(&bytes[y * w..(y + 1) * w]);
            }
        }
        write_pgm(&args.out.join(format!("grid_{label_tag}.pgm")), gw, gh, &grid)?;
    }

    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}
