//! NLL training: Adam with warmup and gradient clipping, deterministic
//! chunked data-parallel gradient accumulation, the bits/dim metric, epoch
//! metrics CSV, and the coupling/conv/SVD ablation harness.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::data::quantize::to_model_input;
use crate::data::LabeledImage;
use crate::error::{FlowError, Result};
use crate::model::{ArchitectureConfig, FlowModel};
use crate::svd::{svd_truncate, SvdConfig};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape};
use crate::tensor::Tensor;

pub const LN_128: f64 = 7.0 * std::f64::consts::LN_2;

/// Negative log-likelihood in nats converted to bits per dimension,
/// adjusted for the 1/128 pixel rescaling.
pub fn bits_per_dim(ll_nats: f64, dims: usize) -> f64 {
    -(ll_nats / dims as f64 - LN_128) / std::f64::consts::LN_2
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub clip_norm: f64,
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            clip_norm: 50.0,
            warmup_steps: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub nll_nats: f64,
    pub bits_per_dim: f64,
    pub seconds: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
}

impl TrainReport {
    pub fn final_bits_per_dim(&self) -> f64 {
        self.metrics.last().map(|m| m.bits_per_dim).unwrap_or(f64::NAN)
    }
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from("epoch,nll_nats,bits_per_dim,seconds,lr\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.nll_nats, m.bits_per_dim, m.seconds, m.lr
        ));
    }
    std::fs::write(path, out).map_err(|e| FlowError::io(path.display().to_string(), e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| FlowError::io(&p, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| FlowError::CsvFormat {
            path: p.clone(),
            row: idx + 1,
            detail,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", f.len())));
        }
        out.push(EpochMetrics {
            epoch: f[0].parse().map_err(|_| err("bad epoch".into()))?,
            nll_nats: f[1].parse().map_err(|_| err("bad nll".into()))?,
            bits_per_dim: f[2].parse().map_err(|_| err("bad bits/dim".into()))?,
            seconds: f[3].parse().map_err(|_| err("bad seconds".into()))?,
            lr: f[4].parse().map_err(|_| err("bad lr".into()))?,
        });
    }
    Ok(out)
}

fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(
        seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03),
    )
}

fn sample_label(model: &FlowModel<f32>, img: &LabeledImage) -> Option<usize> {
    model.config().num_classes.map(|_| img.label)
}

/// One sample's (log-likelihood, gradients of -ll).
fn sample_gradient(
    model: &FlowModel<f32>,
    img: &LabeledImage,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, Gradients<f32>)> {
    let x = to_model_input(&img.pixels, true, rng);
    let mut tape = Tape::new(model.store());
    let xv = tape.leaf(x);
    let ll = model.log_likelihood_taped(&mut tape, xv, sample_label(model, img))?;
    // minimize -ll
    let loss = tape.affine_const(ll, -1.0, 0.0);
    let grads = tape.backward(loss)?;
    let ll_val = tape.value(ll).scalar_value()?.as_f64();
    Ok((ll_val, grads))
}

/// Mean gradient of -ll over a batch. Chunked with a fixed chunk size and
/// reduced in order so results do not depend on worker count.
fn batch_gradient(
    model: &FlowModel<f32>,
    batch: &[(usize, &LabeledImage)],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, Gradients<f32>)> {
    const CHUNK: usize = 4;
    let chunks: Result<Vec<(f64, Gradients<f32>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ll_sum = 0.0;
            let mut grads = Gradients::none(model.store().len());
            for &(global_idx, img) in chunk {
                let mut rng = sample_rng(cfg.seed, epoch as u64, global_idx as u64);
                let (ll, g) = sample_gradient(model, img, &mut rng)?;
                if !ll.is_finite() {
                    return Err(FlowError::NonFiniteLoss { batch_index: global_idx });
                }
                ll_sum += ll;
                grads.merge(&g)?;
            }
            Ok((ll_sum, grads))
        })
        .collect();
    let mut ll_sum = 0.0;
    let mut grads = Gradients::none(model.store().len());
    for (ll, g) in chunks? {
        ll_sum += ll;
        grads.merge(&g)?;
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok((ll_sum / batch.len() as f64, grads))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    fn new(model: &FlowModel<f32>) -> Self {
        let sizes: Vec<usize> = model.store().params().iter().map(|p| p.value.elems()).collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// Candidate post-step state; committed only if the step is accepted.
    fn candidate(
        &self,
        model: &FlowModel<f32>,
        grads: &Gradients<f32>,
        lr: f64,
        cfg: &TrainConfig,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Option<Tensor<f32>>>) {
        let t = (self.t + 1) as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let mut new_m = self.m.clone();
        let mut new_v = self.v.clone();
        let mut new_params = vec![None; model.store().len()];
        for (i, p) in model.store().params().iter().enumerate() {
            let Some(g) = grads.get(crate::tape::ParamId(i)) else {
                continue;
            };
            let gd = g.data();
            let old = p.value.data();
            let mut updated = Vec::with_capacity(old.len());
            for j in 0..old.len() {
                let gj = gd[j] as f64;
                new_m[i][j] = cfg.beta1 * new_m[i][j] + (1.0 - cfg.beta1) * gj;
                new_v[i][j] = cfg.beta2 * new_v[i][j] + (1.0 - cfg.beta2) * gj * gj;
                let m_hat = new_m[i][j] / bc1;
                let v_hat = new_v[i][j] / bc2;
                updated.push((old[j] as f64 - lr * m_hat / (v_hat.sqrt() + cfg.eps)) as f32);
            }
            new_params[i] = Some(Tensor::new(p.value.shape().to_vec(), updated).expect("same shape"));
        }
        (new_m, new_v, new_params)
    }
}

const MIN_INVCONV_DET: f64 = 1e-12;
const MAX_REJECTED_STEPS: usize = 50;

/// Evaluate mean log-likelihood (nats) in eval mode (deterministic
/// dequantization) and its bits/dim.
pub fn evaluate(model: &FlowModel<f32>, images: &[LabeledImage]) -> Result<(f64, f64)> {
    let [c, h, w] = model.config().input;
    let dims = c * h * w;
    let lls: Result<Vec<f64>> = images
        .par_iter()
        .map(|img| {
            let mut rng = ChaCha12Rng::seed_from_u64(0);
            let x = to_model_input(&img.pixels, false, &mut rng);
            Ok(model.log_likelihood(&x, sample_label(model, img))?.as_f64())
        })
        .collect();
    let lls = lls?;
    let mean_ll = lls.iter().sum::<f64>() / lls.len() as f64;
    if !mean_ll.is_finite() {
        let idx = lls.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(FlowError::NonFiniteLoss { batch_index: idx });
    }
    Ok((-mean_ll, bits_per_dim(mean_ll, dims)))
}

/// Train in place. Emits one metrics row for the untrained model (epoch 0)
/// followed by one per epoch, each evaluated in eval mode over `images`.
pub fn train(model: &mut FlowModel<f32>, images: &[LabeledImage], cfg: &TrainConfig) -> Result<TrainReport> {
    if images.is_empty() {
        return Err(FlowError::Manifest("training set is empty".into()));
    }
    let [c, h, w] = model.config().input;
    for img in images {
        let shape = img.pixels.shape();
        if shape != [c, h, w] {
            return Err(FlowError::ShapeMismatch {
                context: format!("training image {}", img.locator),
                expected: vec![c, h, w],
                got: shape.to_vec(),
            });
        }
    }

    let mut adam = Adam::new(model);
    let mut lr_scale = 1.0f64;
    let mut global_step = 0u64;
    let mut rejected = 0usize;
    let mut metrics = Vec::with_capacity(cfg.epochs + 1);

    let (nll0, bpd0) = evaluate(model, images)?;
    metrics.push(EpochMetrics {
        epoch: 0,
        nll_nats: nll0,
        bits_per_dim: bpd0,
        seconds: 0.0,
        lr: 0.0,
    });

    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_lr = 0.0;
        for batch_idx in (0..order.len()).step_by(cfg.batch) {
            let batch: Vec<(usize, &LabeledImage)> = order[batch_idx..(batch_idx + cfg.batch).min(order.len())]
                .iter()
                .map(|&i| (i, &images[i]))
                .collect();
            let (_, mut grads) = batch_gradient(model, &batch, cfg, epoch)?;

            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(FlowError::Diverged {
                    step: global_step as usize,
                    detail: "non-finite gradient norm".into(),
                });
            }
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }

            let warm = ((global_step + 1) as f64 / cfg.warmup_steps.max(1) as f64).min(1.0);
            let lr = cfg.lr * lr_scale * warm;
            epoch_lr = lr;

            let (new_m, new_v, new_params) = adam.candidate(model, &grads, lr, cfg);
            // trial-apply, then verify every 1x1 convolution stays invertible
            let old_params: Vec<Tensor<f32>> = model.store().params().iter().map(|p| p.value.clone()).collect();
            for (i, np) in new_params.into_iter().enumerate() {
                if let Some(np) = np {
                    model.store_mut().set_value(crate::tape::ParamId(i), np);
                }
            }
            if model.store().params().iter().any(|p| !p.value.all_finite())
                || model.invconv_dets().iter().any(|d| *d < MIN_INVCONV_DET)
            {
                for (i, old) in old_params.into_iter().enumerate() {
                    model.store_mut().set_value(crate::tape::ParamId(i), old);
                }
                lr_scale *= 0.5;
                rejected += 1;
                if rejected > MAX_REJECTED_STEPS {
                    return Err(FlowError::Diverged {
                        step: global_step as usize,
                        detail: format!("{rejected} rejected steps"),
                    });
                }
            } else {
                adam.m = new_m;
                adam.v = new_v;
                adam.t += 1;
            }
            global_step += 1;
        }

        let (nll, bpd) = evaluate(model, images)?;
        if std::env::var_os("BPLF_PROGRESS").is_some() {
            eprintln!(
                "epoch {epoch}/{}: nll {nll:.3} nats, {bpd:.4} bits/dim, {:.1}s",
                cfg.epochs,
                start.elapsed().as_secs_f64()
            );
        }
        metrics.push(EpochMetrics {
            epoch,
            nll_nats: nll,
            bits_per_dim: bpd,
            seconds: start.elapsed().as_secs_f64(),
            lr: epoch_lr,
        });
    }

    Ok(TrainReport { metrics })
}

/// Moving average of the bits/dim column with the given window.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if values.is_empty() || window == 0 {
        return Vec::new();
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(window - 1);
            values[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub coupling: String,
    pub conv: String,
    pub svd: bool,
    pub final_bits_per_dim: Option<f64>,
    pub epochs: usize,
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut out = String::from("coupling,conv,svd,final_bits_per_dim,epochs\n");
    for r in rows {
        let bpd = r
            .final_bits_per_dim
            .map(|v| v.to_string())
            .unwrap_or_else(|| "failed".into());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.coupling,
            r.conv,
            if r.svd { "on" } else { "off" },
            bpd,
            r.epochs
        ));
    }
    std::fs::write(path, out).map_err(|e| FlowError::io(path.display().to_string(), e))
}

pub fn read_ablation_csv(path: &Path) -> Result<Vec<AblationRow>> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| FlowError::io(&p, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| FlowError::CsvFormat {
            path: p.clone(),
            row: idx + 1,
            detail,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", f.len())));
        }
        out.push(AblationRow {
            coupling: f[0].into(),
            conv: f[1].into(),
            svd: f[2] == "on",
            final_bits_per_dim: if f[3] == "failed" {
                None
            } else {
                Some(f[3].parse().map_err(|_| err("bad bits/dim".into()))?)
            },
            epochs: f[4].parse().map_err(|_| err("bad epochs".into()))?,
        });
    }
    Ok(out)
}

/// Apply per-image truncated SVD to raw pixel images (in f64, clamped back
/// to the 8-bit range).
pub fn svd_images(images: &[LabeledImage], cfg: &SvdConfig) -> Result<Vec<LabeledImage>> {
    images
        .par_iter()
        .map(|img| {
            let f64_in = Tensor::new(
                img.pixels.shape().to_vec(),
                img.pixels.data().iter().map(|&v| v as f64).collect(),
            )?;
            let trunc = svd_truncate(&f64_in, cfg)?;
            Ok(LabeledImage {
                pixels: Tensor::new(
                    trunc.shape().to_vec(),
                    trunc.data().iter().map(|&v| v.clamp(0.0, 255.0) as f32).collect(),
                )?,
                ..img.clone()
            })
        })
        .collect()
}

/// Train every cell of a {conv kind} × {SVD on/off} grid from the same
/// initial conditions. A failing cell is recorded, not fatal.
pub fn run_ablation(
    images: &[LabeledImage],
    arch: &ArchitectureConfig,
    convs: &[crate::layers::ConvKind],
    svd_energy: f64,
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let svd_cfg = SvdConfig::Energy(svd_energy);
    let svd_set = svd_images(images, &svd_cfg)?;
    let mut rows = Vec::new();
    for &conv in convs {
        for svd_on in [false, true] {
            let mut cell_arch = arch.clone();
            cell_arch.conv = conv;
            let data = if svd_on { &svd_set } else { images };
            let result = FlowModel::<f32>::new(cell_arch.clone(), cfg.seed)
                .and_then(|mut model| train(&mut model, data, cfg));
            rows.push(AblationRow {
                coupling: cell_arch.coupling.to_string(),
                conv: conv.to_string(),
                svd: svd_on,
                final_bits_per_dim: result.ok().map(|r| r.final_bits_per_dim()),
                epochs: cfg.epochs,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::glyph_images;
    use crate::layers::{ConvKind, CouplingKind};

    fn tiny_arch(side: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            levels: 1,
            depth: 1,
            coupling: CouplingKind::Bplf,
            conv: ConvKind::ThreeByThree,
            hidden: 4,
            num_classes: None,
            input: [1, side, side],
        }
    }

    fn tiny_images(n: usize, side: usize) -> Vec<LabeledImage> {
        glyph_images(n, side, 42)
            .unwrap()
            .into_iter()
            .map(|s| s.image)
            .collect()
    }

    #[test]
    fn metric_algebra() {
        for d in [1usize, 16, 3072] {
            assert_eq!(bits_per_dim(LN_128 * d as f64, d), 0.0);
        }
        assert_eq!(bits_per_dim(0.0, 1), 7.0);
        // one extra nat per dim costs 1/ln2 bits
        let extra = bits_per_dim(-1.0 * 16.0, 16) - bits_per_dim(0.0, 16);
        assert!((extra - 1.0 / std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            EpochMetrics {
                epoch: 0,
                nll_nats: 123.456789,
                bits_per_dim: 8.25,
                seconds: 0.0,
                lr: 0.0,
            },
            EpochMetrics {
                epoch: 1,
                nll_nats: 100.0,
                bits_per_dim: 7.5,
                seconds: 1.25,
                lr: 1e-3,
            },
        ];
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,nll_nats,bits_per_dim,seconds,lr\n"));
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }

    #[test]
    fn ablation_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let rows = vec![
            AblationRow {
                coupling: "bplf".into(),
                conv: "3x3".into(),
                svd: true,
                final_bits_per_dim: Some(2.125),
                epochs: 30,
            },
            AblationRow {
                coupling: "bplf".into(),
                conv: "3x3&1x1".into(),
                svd: false,
                final_bits_per_dim: None,
                epochs: 30,
            },
        ];
        write_ablation_csv(&path, &rows).unwrap();
        let back = read_ablation_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].final_bits_per_dim, Some(2.125));
        assert_eq!(back[1].final_bits_per_dim, None);
        assert!(back[0].svd && !back[1].svd);
    }

    #[test]
    fn moving_average_windows() {
        let v = [4.0, 2.0, 6.0, 2.0];
        assert_eq!(moving_average(&v, 2), vec![4.0, 3.0, 4.0, 4.0]);
        assert_eq!(moving_average(&v, 1), v.to_vec());
    }

    #[test]
    fn short_training_reduces_loss() {
        let images = tiny_images(32, 8);
        let mut model = FlowModel::<f32>::new(tiny_arch(8), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch: 8,
            warmup_steps: 4,
            seed: 1,
            ..Default::default()
        };
        let report = train(&mut model, &images, &cfg).unwrap();
        assert_eq!(report.metrics.len(), 4);
        assert_eq!(report.metrics[0].epoch, 0);
        let first = report.metrics.first().unwrap().nll_nats;
        let last = report.metrics.last().unwrap().nll_nats;
        assert!(last < first, "nll {first} -> {last} should decrease");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let images = tiny_images(16, 8);
        let cfg = TrainConfig {
            epochs: 2,
            batch: 8,
            warmup_steps: 2,
            seed: 5,
            ..Default::default()
        };
        let run = || {
            let mut model = FlowModel::<f32>::new(tiny_arch(8), 3).unwrap();
            train(&mut model, &images, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(x.nll_nats, y.nll_nats);
            assert_eq!(x.bits_per_dim, y.bits_per_dim);
            assert_eq!(x.lr, y.lr);
        }
    }

    #[test]
    fn conditional_training_runs() {
        let mut arch = tiny_arch(8);
        arch.num_classes = Some(10);
        let images = tiny_images(16, 8);
        let mut model = FlowModel::<f32>::new(arch, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch: 8,
            warmup_steps: 2,
            ..Default::default()
        };
        let report = train(&mut model, &images, &cfg).unwrap();
        assert!(report.final_bits_per_dim().is_finite());
    }

    #[test]
    fn wrong_shape_rejected() {
        let images = tiny_images(4, 16);
        let mut model = FlowModel::<f32>::new(tiny_arch(8), 1).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut model, &images, &cfg),
            Err(FlowError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ablation_grid_shape() {
        let images = tiny_images(8, 8);
        let arch = tiny_arch(8);
        let cfg = TrainConfig {
            epochs: 1,
            batch: 8,
            warmup_steps: 1,
            ..Default::default()
        };
        let rows = run_ablation(
            &images,
            &arch,
            &[ConvKind::ThreeByThree, ConvKind::Mixed1x1],
            0.95,
            &cfg,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.final_bits_per_dim.is_some()));
        let svd_on = rows.iter().filter(|r| r.svd).count();
        assert_eq!(svd_on, 2);
    }
}
