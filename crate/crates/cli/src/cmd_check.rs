//! `bplf check`: self-verification suites. Round-trip inversion, log-det
//! against a numerical Jacobian oracle, parameter gradients against finite
//! differences, and the quantization identity. Exit 3 on any failure.

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use bplf_core::data::quantize::{to_image, to_model_input};
use bplf_core::oracle::numerical_logdet;
use bplf_core::tensor::set_strict_guards;
use bplf_core::{ArchitectureConfig, ConvKind, CouplingKind, FlowModel, Scalar, Tape, Tensor};

use crate::util::{CliError, CliResult};

const SEED: u64 = 20260826;
const FD_EPS: f64 = 1e-5;

#[derive(Args)]
pub struct CheckArgs {
    /// Additionally run the D = 16 numerical Jacobian suite.
    #[arg(long)]
    pub deep: bool,
}

/// The final coupling-net stages are zero-initialized; give them random
/// weights so the suites exercise non-trivial transforms.
fn randomize_final_stages<T: Scalar>(model: &mut FlowModel<T>, rng: &mut impl Rng) {
    let targets: Vec<_> = model
        .store()
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.name.contains("stage2"))
        .map(|(i, p)| (bplf_core::tape::ParamId(i), p.value.shape().to_vec()))
        .collect();
    for (id, shape) in targets {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::from_f64(rng.random_range(-0.3..0.3))).collect();
        model.store_mut().set_value(id, Tensor::new(shape, data).expect("same shape"));
    }
}

fn random_input<T: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

fn all_kinds() -> Vec<(CouplingKind, ConvKind)> {
    let mut out = Vec::new();
    for coupling in [CouplingKind::Additive, CouplingKind::Affine, CouplingKind::Bplf] {
        for conv in [ConvKind::ThreeByThree, ConvKind::Mixed1x1] {
            out.push((coupling, conv));
        }
    }
    out
}

fn round_trip_suite() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(SEED);
    for (coupling, conv) in all_kinds() {
        for classes in [None, Some(7)] {
            let cfg = ArchitectureConfig {
                levels: 2,
                depth: 2,
                coupling,
                conv,
                hidden: 8,
                num_classes: classes,
                input: [1, 8, 8],
            };
            let label = classes.map(|_| 2);

            let mut m64 = FlowModel::<f64>::new(cfg.clone(), SEED).map_err(|e| e.to_string())?;
            randomize_final_stages(&mut m64, &mut rng);
            let mut m32 = FlowModel::<f32>::new(cfg, SEED).map_err(|e| e.to_string())?;
            randomize_final_stages(&mut m32, &mut rng);

            for trial in 0..10 {
                let ctx = format!("{coupling}/{conv}/cond={}/trial {trial}", classes.is_some());
                let x64: Tensor<f64> = random_input(&[1, 8, 8], &mut rng);
                let (z, _) = m64.encode(&x64, label).map_err(|e| format!("{ctx}: {e}"))?;
                let back = m64.decode(&z, label).map_err(|e| format!("{ctx}: {e}"))?;
                let diff = back.max_abs_diff(&x64);
                if diff >= 1e-10 {
                    return Err(format!("{ctx}: 64-bit round-trip error {diff:e}"));
                }

                let x32: Tensor<f32> = random_input(&[1, 8, 8], &mut rng);
                let (z, _) = m32.encode(&x32, label).map_err(|e| format!("{ctx}: {e}"))?;
                let back = m32.decode(&z, label).map_err(|e| format!("{ctx}: {e}"))?;
                let diff = back.max_abs_diff(&x32);
                if diff >= 1e-4 {
                    return Err(format!("{ctx}: 32-bit round-trip error {diff:e}"));
                }
            }
        }
    }
    Ok(())
}

fn logdet_suite(input: [usize; 3], tag: &str) -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(SEED ^ 0x10de7);
    for (coupling, conv) in all_kinds() {
        let cfg = ArchitectureConfig {
            levels: 1,
            depth: 2,
            coupling,
            conv,
            hidden: 4,
            num_classes: None,
            input,
        };
        let mut model = FlowModel::<f64>::new(cfg, SEED).map_err(|e| e.to_string())?;
        randomize_final_stages(&mut model, &mut rng);
        for trial in 0..3 {
            let ctx = format!("{tag} {coupling}/{conv}/trial {trial}");
            let x: Tensor<f64> = random_input(&input, &mut rng);
            let (_, analytic) = model.encode(&x, None).map_err(|e| format!("{ctx}: {e}"))?;
            let numeric = numerical_logdet(&|v| model.encode_flat(v, None), &x, FD_EPS)
                .map_err(|e| format!("{ctx}: {e}"))?;
            let diff = (analytic - numeric).abs();
            if diff >= 1e-6 {
                return Err(format!(
                    "{ctx}: analytic log-det {analytic} vs numerical {numeric} (|diff| {diff:e})"
                ));
            }
        }
    }
    Ok(())
}

fn gradient_suite() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(SEED ^ 0x96ad);
    let cfg = ArchitectureConfig {
        levels: 1,
        depth: 1,
        coupling: CouplingKind::Bplf,
        conv: ConvKind::ThreeByThree,
        hidden: 8,
        num_classes: None,
        input: [1, 4, 4],
    };
    let mut model = FlowModel::<f64>::new(cfg, SEED).map_err(|e| e.to_string())?;
    randomize_final_stages(&mut model, &mut rng);
    let x: Tensor<f64> = random_input(&[1, 4, 4], &mut rng);

    let mut tape = Tape::new(model.store());
    let xv = tape.leaf(x.clone());
    let ll = model.log_likelihood_taped(&mut tape, xv, None).map_err(|e| e.to_string())?;
    let grads = tape.backward(ll).map_err(|e| e.to_string())?;
    let analytic: Vec<(String, Vec<f64>)> = model
        .store()
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = grads
                .get(bplf_core::tape::ParamId(i))
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; p.value.elems()]);
            (p.name.clone(), g)
        })
        .collect();

    let n_params = model.store().params().len();
    for i in 0..n_params {
        let id = bplf_core::tape::ParamId(i);
        let (name, ga) = &analytic[i];
        let base = model.store().value(id).clone();
        for e in 0..base.elems() {
            let mut probe = |delta: f64| -> Result<f64, String> {
                let mut t = base.clone();
                t.data_mut()[e] += delta;
                model.store_mut().set_value(id, t);
                model.log_likelihood(&x, None).map_err(|err| err.to_string())
            };
            let f_plus = probe(FD_EPS)?;
            let f_minus = probe(-FD_EPS)?;
            model.store_mut().set_value(id, base.clone());
            let numeric = (f_plus - f_minus) / (2.0 * FD_EPS);
            let a = ga[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel >= 1e-4 {
                return Err(format!(
                    "{name}[{e}]: analytic {a} vs finite-difference {numeric} (rel {rel:e})"
                ));
            }
        }
    }
    Ok(())
}

fn quantization_suite() -> Result<(), String> {
    let pixels: Vec<f32> = (0..=255).map(|p| p as f32).collect();
    let t = Tensor::new(vec![1, 16, 16], pixels).expect("256 values");
    let mut rng = ChaCha12Rng::seed_from_u64(SEED);
    let x = to_model_input(&t, false, &mut rng);
    let back = to_image(&x).map_err(|e| e.to_string())?;
    for (i, (&a, &b)) in t.data().iter().zip(back.data().iter()).enumerate() {
        if a != b {
            return Err(format!("pixel value {i}: {a} became {b}"));
        }
    }
    Ok(())
}

pub fn run(args: CheckArgs) -> CliResult {
    set_strict_guards(true);
    let mut suites: Vec<(&str, Box<dyn Fn() -> Result<(), String>>)> = vec![
        ("round-trip", Box::new(round_trip_suite)),
        ("logdet-oracle", Box::new(|| logdet_suite([2, 2, 2], "D=8"))),
        ("gradient", Box::new(gradient_suite)),
        ("quantization", Box::new(quantization_suite)),
    ];
    if args.deep {
        suites.push(("jacobian-deep", Box::new(|| logdet_suite([1, 4, 4], "D=16"))));
    }

    let mut failed: Option<(&str, String)> = None;
    for (name, suite) in &suites {
        match suite() {
            Ok(()) => println!("{name}: pass"),
            Err(detail) => {
                println!("{name}: fail ({detail})");
                if failed.is_none() {
                    failed = Some((name, detail));
                }
            }
        }
    }
    set_strict_guards(false);
    match failed {
        None => Ok(()),
        Some((name, detail)) => Err(CliError::Verification(format!(
            "suite {name} failed with seed {SEED}: {detail}"
        ))),
    }
}
