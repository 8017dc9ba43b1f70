//! Invertible transforms: additive / affine / bi-parallel linear couplings,
//! the invertible 1x1 convolution, and their exact log-det contributions.
//! Squeeze and split live in [`crate::reshape`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::linalg;
use crate::reshape::{concat_channels, dims3, split_channels};
use crate::scalar::Scalar;
use crate::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::{guard_divisor, sigmoid, strict_guards, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    Additive,
    Affine,
    Bplf,
}

/// Convolution stage mix inside a coupling net: three 3x3 stages, or a 1x1
/// stage followed by two 3x3 stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    ThreeByThree,
    Mixed1x1,
}

impl ConvKind {
    fn kernel_sizes(self) -> [usize; 3] {
        match self {
            ConvKind::ThreeByThree => [3, 3, 3],
            ConvKind::Mixed1x1 => [1, 3, 3],
        }
    }
}

impl std::str::FromStr for CouplingKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "additive" => Ok(CouplingKind::Additive),
            "affine" => Ok(CouplingKind::Affine),
            "bplf" => Ok(CouplingKind::Bplf),
            other => Err(format!("unknown coupling kind {other:?} (want additive|affine|bplf)")),
        }
    }
}

impl std::str::FromStr for ConvKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "3x3" => Ok(ConvKind::ThreeByThree),
            "3x3+1x1" | "3x3&1x1" => Ok(ConvKind::Mixed1x1),
            other => Err(format!("unknown conv kind {other:?} (want 3x3|3x3+1x1)")),
        }
    }
}

impl std::fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CouplingKind::Additive => "additive",
            CouplingKind::Affine => "affine",
            CouplingKind::Bplf => "bplf",
        })
    }
}

impl std::fmt::Display for ConvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvKind::ThreeByThree => "3x3",
            ConvKind::Mixed1x1 => "3x3+1x1",
        })
    }
}

#[derive(Clone, Debug)]
pub struct LayerOutput<T> {
    pub y: Tensor<T>,
    pub log_det: T,
}

/// Constant spatial map carrying a one-hot label, appended to coupling-net
/// inputs when the model is conditional.
pub fn one_hot_map<T: Scalar>(label: usize, classes: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    if label >= classes {
        return Err(FlowError::InvalidLabel {
            index: label,
            classes,
        });
    }
    let mut data = vec![T::zero(); classes * h * w];
    for v in &mut data[label * h * w..(label + 1) * h * w] {
        *v = T::one();
    }
    Tensor::new(vec![classes, h, w], data)
}

struct ConvStage {
    weight: ParamId,
    bias: ParamId,
}

/// Three-stage convolutional network computing coupling parameters.
/// The final stage is zero-initialized so every coupling starts at the
/// fixed contraction s = sigmoid(2), mu = 0.
pub struct CouplingNet {
    stages: Vec<ConvStage>,
    cond_channels: usize,
}

impl CouplingNet {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        hidden: usize,
        conv: ConvKind,
        cond_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let ks = conv.kernel_sizes();
        let dims = [
            (in_channels + cond_channels, hidden),
            (hidden, hidden),
            (hidden, out_channels),
        ];
        let mut stages = Vec::with_capacity(3);
        for (i, ((cin, cout), k)) in dims.iter().zip(ks.iter()).enumerate() {
            let n = cout * cin * k * k;
            let data: Vec<T> = if i == 2 {
                vec![T::zero(); n]
            } else {
                let std = (2.0 / (*cin as f64 * (*k * *k) as f64)).sqrt();
                (0..n)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(rng);
                        T::from_f64(g * std)
                    })
                    .collect()
            };
            let weight = store.register(
                format!("{prefix}.stage{i}.weight"),
                Tensor::new(vec![*cout, *cin, *k, *k], data).expect("kernel shape"),
            );
            let bias = store.register(format!("{prefix}.stage{i}.bias"), Tensor::zeros(&[*cout]));
            stages.push(ConvStage { weight, bias });
        }
        CouplingNet {
            stages,
            cond_channels,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.stages
            .iter()
            .flat_map(|s| [s.weight, s.bias])
            .collect()
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, cond: Option<&Tensor<T>>) -> Result<Var> {
        let mut h = match (self.cond_channels, cond) {
            (0, None) => x,
            (0, Some(_)) => {
                return Err(FlowError::ConditionMismatch {
                    model: "un",
                    given: "given",
                })
            }
            (_, None) => {
                return Err(FlowError::ConditionMismatch {
                    model: "",
                    given: "missing",
                })
            }
            (_, Some(c)) => {
                let cv = tape.leaf(c.clone());
                tape.concat_channels(x, cv)?
            }
        };
        for (i, stage) in self.stages.iter().enumerate() {
            let w = tape.param(stage.weight);
            let b = tape.param(stage.bias);
            h = tape.conv2d(h, w, b)?;
            if i + 1 < self.stages.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Plain (non-taped) evaluation, used by the inverse passes.
    pub fn eval<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, cond: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new(store);
        let xv = tape.leaf(x.clone());
        let out = self.apply(&mut tape, xv, cond)?;
        Ok(tape.value(out).clone())
    }
}

/// Bounded positive scale from the raw net output: s = sigmoid(a + 2).
fn taped_scale<T: Scalar>(tape: &mut Tape<T>, raw: Var) -> Var {
    let shifted = tape.affine_const(raw, 1.0, 2.0);
    tape.sigmoid(shifted)
}

/// Plain scale-and-shift y2 = s (.) x2 + t with log-det = sum(ln s).
pub fn scale_shift<T: Scalar>(s: &Tensor<T>, t: &Tensor<T>, x2: &Tensor<T>) -> Result<(Tensor<T>, T)> {
    let y2 = s.mul(x2)?.add(t)?;
    let log_det = s.ln()?.sum_all();
    Ok((y2, log_det))
}

/// Inverse of [`scale_shift`]: x2 = (y2 - t) / s.
pub fn scale_shift_inverse<T: Scalar>(s: &Tensor<T>, t: &Tensor<T>, y2: &Tensor<T>) -> Result<Tensor<T>> {
    y2.sub(t)?.div(s)
}

/// One coupling layer of any kind. Input channels are split into halves
/// x1 (first C/2) and x2 (rest); C must be even.
pub struct Coupling {
    pub kind: CouplingKind,
    g1: CouplingNet,
    g2: Option<CouplingNet>,
}

impl Coupling {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        hidden: usize,
        conv: ConvKind,
        cond_channels: usize,
        kind: CouplingKind,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels % 2 != 0 {
            return Err(FlowError::OddChannels {
                context: format!("coupling {prefix}"),
                channels,
            });
        }
        let half = channels / 2;
        let (g1_out, needs_g2) = match kind {
            CouplingKind::Additive => (half, false),
            CouplingKind::Affine => (channels, false),
            CouplingKind::Bplf => (channels, true),
        };
        let g1 = CouplingNet::new(store, &format!("{prefix}.g1"), half, g1_out, hidden, conv, cond_channels, rng);
        let g2 = needs_g2.then(|| {
            CouplingNet::new(store, &format!("{prefix}.g2"), half, channels, hidden, conv, cond_channels, rng)
        });
        Ok(Coupling { kind, g1, g2 })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.g1.param_ids();
        if let Some(g2) = &self.g2 {
            ids.extend(g2.param_ids());
        }
        ids
    }

    pub fn forward_taped<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        cond: Option<&Tensor<T>>,
    ) -> Result<(Var, Var)> {
        let (c, _, _) = dims3(tape.value(x), "coupling forward")?;
        if c % 2 != 0 {
            return Err(FlowError::OddChannels {
                context: "coupling forward".into(),
                channels: c,
            });
        }
        let half = c / 2;
        let x1 = tape.slice_channels(x, 0, half)?;
        let x2 = tape.slice_channels(x, half, c)?;
        match self.kind {
            CouplingKind::Additive => {
                let m = self.g1.apply(tape, x1, cond)?;
                let h2 = tape.add(x2, m)?;
                let y = tape.concat_channels(x1, h2)?;
                let zero = tape.constant(0.0);
                Ok((y, zero))
            }
            CouplingKind::Affine => {
                let out = self.g1.apply(tape, x1, cond)?;
                let raw = tape.slice_channels(out, 0, half)?;
                let t = tape.slice_channels(out, half, c)?;
                let s = taped_scale(tape, raw);
                let sx = tape.mul(s, x2)?;
                let h2 = tape.add(sx, t)?;
                let y = tape.concat_channels(x1, h2)?;
                let log_s = tape.log(s)?;
                let mut log_det = tape.sum(log_s, None)?;
                if fault_affine_logdet_sign() {
                    log_det = tape.affine_const(log_det, -1.0, 0.0);
                }
                Ok((y, log_det))
            }
            CouplingKind::Bplf => {
                let g2 = self.g2.as_ref().expect("bplf has g2");
                // (s1, mu1) from x2, transform x1; then (s2, mu2) from y1,
                // transform x2. Both halves change; the inverse unwinds in
                // the opposite order.
                let o1 = self.g1.apply(tape, x2, cond)?;
                let raw1 = tape.slice_channels(o1, 0, half)?;
                let mu1 = tape.slice_channels(o1, half, c)?;
                let s1 = taped_scale(tape, raw1);
                let s1x = tape.mul(s1, x1)?;
                let y1 = tape.add(s1x, mu1)?;

                let o2 = g2.apply(tape, y1, cond)?;
                let raw2 = tape.slice_channels(o2, 0, half)?;
                let mu2 = tape.slice_channels(o2, half, c)?;
                let s2 = taped_scale(tape, raw2);
                let s2x = tape.mul(s2, x2)?;
                let y2 = tape.add(s2x, mu2)?;

                let y = tape.concat_channels(y1, y2)?;
                let ls1 = tape.log(s1)?;
                let ls2 = tape.log(s2)?;
                let sum1 = tape.sum(ls1, None)?;
                let sum2 = tape.sum(ls2, None)?;
                let log_det = tape.add(sum1, sum2)?;
                Ok((y, log_det))
            }
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, cond: Option<&Tensor<T>>) -> Result<LayerOutput<T>> {
        let mut tape = Tape::new(store);
        let xv = tape.leaf(x.clone());
        let (y, ld) = self.forward_taped(&mut tape, xv, cond)?;
        Ok(LayerOutput {
            y: tape.value(y).clone(),
            log_det: tape.value(ld).scalar_value()?,
        })
    }

    pub fn inverse<T: Scalar>(&self, store: &ParamStore<T>, y: &Tensor<T>, cond: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (c, _, _) = dims3(y, "coupling inverse")?;
        if c % 2 != 0 {
            return Err(FlowError::OddChannels {
                context: "coupling inverse".into(),
                channels: c,
            });
        }
        let (y1, y2) = split_channels(y)?;
        match self.kind {
            CouplingKind::Additive => {
                let m = self.g1.eval(store, &y1, cond)?;
                let x2 = y2.sub(&m)?;
                concat_channels(&y1, &x2)
            }
            CouplingKind::Affine => {
                let out = self.g1.eval(store, &y1, cond)?;
                let (raw, t) = split_channels(&out)?;
                let s = raw.affine(1.0, 2.0).sigmoid();
                let x2 = scale_shift_inverse(&s, &t, &y2)?;
                concat_channels(&y1, &x2)
            }
            CouplingKind::Bplf => {
                let g2 = self.g2.as_ref().expect("bplf has g2");
                let o2 = g2.eval(store, &y1, cond)?;
                let (raw2, mu2) = split_channels(&o2)?;
                let s2 = raw2.affine(1.0, 2.0).sigmoid();
                let x2 = scale_shift_inverse(&s2, &mu2, &y2)?;
                let o1 = self.g1.eval(store, &x2, cond)?;
                let (raw1, mu1) = split_channels(&o1)?;
                let s1 = raw1.affine(1.0, 2.0).sigmoid();
                let x1 = scale_shift_inverse(&s1, &mu1, &y1)?;
                concat_channels(&x1, &x2)
            }
        }
    }
}

/// Test hook: flips the sign of the affine log-det so the verification
/// suites can prove they detect a planted fault.
fn fault_affine_logdet_sign() -> bool {
    std::env::var("BPLF_FAULT").map(|v| v == "affine-logdet-sign").unwrap_or(false)
}

/// Invertible 1x1 convolution: per-pixel channel mixing by a shared square
/// matrix, initialized random orthogonal.
pub struct InvConv1x1 {
    pub w: ParamId,
    channels: usize,
}

impl InvConv1x1 {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let w = store.register(
            format!("{prefix}.w"),
            Tensor::new(vec![channels, channels], linalg::random_orthogonal(channels, rng)).expect("square"),
        );
        InvConv1x1 { w, channels }
    }

    /// Wrap an existing parameter (tests).
    pub fn from_param(w: ParamId, channels: usize) -> Self {
        InvConv1x1 { w, channels }
    }

    pub fn det<T: Scalar>(&self, store: &ParamStore<T>) -> f64 {
        linalg::det(store.value(self.w).data(), self.channels)
    }

    pub fn forward_taped<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Var)> {
        let (_, h, w) = dims3(tape.value(x), "invconv forward")?;
        let wv = tape.param(self.w);
        let y = tape.channel_matmul(wv, x)?;
        let ld = tape.log_abs_det(wv)?;
        let scaled = tape.affine_const(ld, (h * w) as f64, 0.0);
        Ok((y, scaled))
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<LayerOutput<T>> {
        let mut tape = Tape::new(store);
        let xv = tape.leaf(x.clone());
        let (y, ld) = self.forward_taped(&mut tape, xv)?;
        Ok(LayerOutput {
            y: tape.value(y).clone(),
            log_det: tape.value(ld).scalar_value()?,
        })
    }

    pub fn inverse<T: Scalar>(&self, store: &ParamStore<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = dims3(y, "invconv inverse")?;
        if c != self.channels {
            return Err(FlowError::ShapeMismatch {
                context: "invconv inverse".into(),
                expected: vec![self.channels],
                got: vec![c],
            });
        }
        let x = linalg::solve(store.value(self.w).data(), c, y.data(), h * w, "invconv inverse")?;
        Tensor::new(vec![c, h, w], x)
    }
}

/// Sanity guard used by couplings' inverses: a produced scale must stay far
/// enough from zero that the division guard never fires.
pub fn check_scale_positive<T: Scalar>(s: &Tensor<T>) -> Result<()> {
    let strict = strict_guards();
    for &v in s.data() {
        guard_divisor(v, strict)?;
        if v <= T::zero() || v >= T::one() {
            return Err(FlowError::ShapeMismatch {
                context: format!("scale out of (0,1): {}", v.as_f64()),
                expected: vec![],
                got: vec![],
            });
        }
    }
    Ok(())
}

/// sigmoid(2), the uniform zero-init contraction factor.
pub fn zero_init_scale<T: Scalar>() -> T {
    sigmoid(T::from_f64(2.0))
}
