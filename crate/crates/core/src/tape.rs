//! Reverse-mode autodiff: named parameters and a linear tape of executed
//! ops. Values are computed eagerly as ops are recorded; `backward` replays
//! the tape once in reverse and accumulates adjoints for every reachable
//! parameter.

use std::collections::HashMap;

use crate::conv;
use crate::error::{FlowError, Result};
use crate::linalg;
use crate::reshape;
use crate::scalar::Scalar;
use crate::tensor::{guard_log, strict_guards, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub gradient: Tensor<T>,
}

/// All trainable tensors of a model, keyed by unique name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.params.len());
        let gradient = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            gradient,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.params[id.0].value.shape(), value.shape());
        self.params[id.0].value = value;
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn zero_gradients(&mut self) {
        for p in &mut self.params {
            p.gradient = Tensor::zeros(p.value.shape());
        }
    }

    /// Single-writer gradient accumulation step.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (i, g) in grads.by_param.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].gradient = self.params[i].gradient.add(g)?;
            }
        }
        Ok(())
    }

    /// Cast every parameter value to another scalar type (gradients reset).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            let data: Vec<U> = p.value.data().iter().map(|&v| U::from_f64(v.as_f64())).collect();
            let value = Tensor::new(p.value.shape().to_vec(), data).expect("same shape");
            out.register(p.name.clone(), value);
        }
        out
    }
}

/// Per-parameter adjoints produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn none(n_params: usize) -> Self {
        Gradients {
            by_param: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param[id.0].as_ref()
    }

    pub fn merge(&mut self, other: &Gradients<T>) -> Result<()> {
        for (a, b) in self.by_param.iter_mut().zip(other.by_param.iter()) {
            if let Some(b) = b {
                *a = Some(match a.take() {
                    Some(t) => t.add(b)?,
                    None => b.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_param.iter_mut().flatten() {
            *g = g.affine(factor, 0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
pub enum UnaryKind {
    Exp,
    Log,
    Sigmoid,
    Relu,
    Neg,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Binary { kind: BinaryKind, a: usize, b: usize },
    Unary { kind: UnaryKind, a: usize },
    AffineConst { a: usize, mul: f64 },
    Sum { a: usize, axes: Option<Vec<usize>> },
    Conv2d { input: usize, kernel: usize, bias: usize },
    ChannelMatmul { w: usize, x: usize },
    LogAbsDet { w: usize },
    ConcatCh { a: usize, b: usize },
    SliceCh { a: usize, from: usize, to: usize },
    Squeeze { a: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Linear record of executed ops over a parameter store.
pub struct Tape<'s, T> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).clone();
        self.push(value, Op::Param(id))
    }

    pub fn constant(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(T::from_f64(v)))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = match kind {
            BinaryKind::Add => va.add(vb)?,
            BinaryKind::Sub => va.sub(vb)?,
            BinaryKind::Mul => va.mul(vb)?,
            BinaryKind::Div => va.div(vb)?,
        };
        Ok(self.push(value, Op::Binary { kind, a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        let value = match kind {
            UnaryKind::Exp => va.exp(),
            UnaryKind::Log => va.ln()?,
            UnaryKind::Sigmoid => va.sigmoid(),
            UnaryKind::Relu => va.relu(),
            UnaryKind::Neg => va.affine(-1.0, 0.0),
        };
        Ok(self.push(value, Op::Unary { kind, a: a.0 }))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a).expect("relu is total")
    }

    /// x * mul + add with scalar constants.
    pub fn affine_const(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let value = self.nodes[a.0].value.affine(mul, add);
        self.push(value, Op::AffineConst { a: a.0, mul })
    }

    pub fn sum(&mut self, a: Var, axes: Option<&[usize]>) -> Result<Var> {
        let value = self.nodes[a.0].value.reduce_sum(axes)?;
        Ok(self.push(
            value,
            Op::Sum {
                a: a.0,
                axes: axes.map(|s| s.to_vec()),
            },
        ))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let value = conv::conv2d(
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            &self.nodes[bias.0].value,
        )?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
            },
        ))
    }

    pub fn channel_matmul(&mut self, w: Var, x: Var) -> Result<Var> {
        let value = conv::channel_matmul(&self.nodes[w.0].value, &self.nodes[x.0].value)?;
        Ok(self.push(value, Op::ChannelMatmul { w: w.0, x: x.0 }))
    }

    /// log|det W| of a square matrix variable, differentiable w.r.t. W.
    pub fn log_abs_det(&mut self, w: Var) -> Result<Var> {
        let m = &self.nodes[w.0].value;
        let n = m.shape()[0];
        let (log, _) = linalg::log_abs_det(m.data(), n, "log_abs_det")?;
        let det = linalg::det(m.data(), n);
        if det.abs() < 1e-12 {
            return Err(FlowError::SingularMatrix {
                context: "log_abs_det".into(),
                det,
            });
        }
        Ok(self.push(Tensor::scalar(T::from_f64(log)), Op::LogAbsDet { w: w.0 }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = reshape::concat_channels(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(value, Op::ConcatCh { a: a.0, b: b.0 }))
    }

    pub fn slice_channels(&mut self, a: Var, from: usize, to: usize) -> Result<Var> {
        let value = reshape::slice_channels(&self.nodes[a.0].value, from, to)?;
        Ok(self.push(value, Op::SliceCh { a: a.0, from, to }))
    }

    pub fn squeeze(&mut self, a: Var) -> Result<Var> {
        let value = reshape::squeeze(&self.nodes[a.0].value)?;
        Ok(self.push(value, Op::Squeeze { a: a.0 }))
    }

    /// Reverse pass from a scalar loss. Visits each recorded op exactly once
    /// in reverse execution order and returns per-parameter adjoints.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_val = &self.nodes[loss.0].value;
        if !loss_val.is_scalar() {
            return Err(FlowError::NonScalarLoss {
                shape: loss_val.shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(Tensor::scalar(T::one()));
        let mut grads = Gradients::none(self.store.len());
        let strict = strict_guards();

        for i in (0..=loss.0).rev() {
            let g = match adjoints[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let slot = &mut grads.by_param[id.0];
                    *slot = Some(match slot.take() {
                        Some(acc) => acc.add(&g)?,
                        None => g,
                    });
                }
                Op::Binary { kind, a, b } => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    match kind {
                        BinaryKind::Add => {
                            accumulate(&mut adjoints, *a, g.clone())?;
                            accumulate(&mut adjoints, *b, g)?;
                        }
                        BinaryKind::Sub => {
                            accumulate(&mut adjoints, *a, g.clone())?;
                            accumulate(&mut adjoints, *b, g.affine(-1.0, 0.0))?;
                        }
                        BinaryKind::Mul => {
                            accumulate(&mut adjoints, *a, g.mul(vb)?)?;
                            accumulate(&mut adjoints, *b, g.mul(va)?)?;
                        }
                        BinaryKind::Div => {
                            let da = g.div(vb)?;
                            let y = &self.nodes[i].value;
                            let db = g.mul(y)?.div(vb)?.affine(-1.0, 0.0);
                            accumulate(&mut adjoints, *a, da)?;
                            accumulate(&mut adjoints, *b, db)?;
                        }
                    }
                }
                Op::Unary { kind, a } => {
                    let va = &self.nodes[*a].value;
                    let y = &self.nodes[i].value;
                    let da = match kind {
                        UnaryKind::Exp => g.mul(y)?,
                        UnaryKind::Log => {
                            let mut out = Vec::with_capacity(g.elems());
                            for (&gv, &xv) in g.data().iter().zip(va.data().iter()) {
                                out.push(gv / guard_log(xv, strict)?);
                            }
                            Tensor::new(va.shape().to_vec(), out)?
                        }
                        UnaryKind::Sigmoid => {
                            let one_minus = y.affine(-1.0, 1.0);
                            g.mul(y)?.mul(&one_minus)?
                        }
                        UnaryKind::Relu => g.zip_map(va, "relu'", |gv, xv| if xv > T::zero() { gv } else { T::zero() })?,
                        UnaryKind::Neg => g.affine(-1.0, 0.0),
                    };
                    accumulate(&mut adjoints, *a, da)?;
                }
                Op::AffineConst { a, mul, .. } => {
                    accumulate(&mut adjoints, *a, g.affine(*mul, 0.0))?;
                }
                Op::Sum { a, axes } => {
                    let va = &self.nodes[*a].value;
                    let da = broadcast_sum_grad(&g, va.shape(), axes.as_deref())?;
                    accumulate(&mut adjoints, *a, da)?;
                }
                Op::Conv2d { input, kernel, bias } => {
                    let (di, dk, db) = conv::conv2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*kernel].value,
                        &self.nodes[*bias].value,
                        &g,
                    )?;
                    accumulate(&mut adjoints, *input, di)?;
                    accumulate(&mut adjoints, *kernel, dk)?;
                    accumulate(&mut adjoints, *bias, db)?;
                }
                Op::ChannelMatmul { w, x } => {
                    let (dw, dx) =
                        conv::channel_matmul_backward(&self.nodes[*w].value, &self.nodes[*x].value, &g)?;
                    accumulate(&mut adjoints, *w, dw)?;
                    accumulate(&mut adjoints, *x, dx)?;
                }
                Op::LogAbsDet { w } => {
                    // d log|det W| / dW = (W^-1)^T
                    let m = &self.nodes[*w].value;
                    let n = m.shape()[0];
                    let inv = linalg::inverse(m.data(), n, "log_abs_det backward")?;
                    let gs = g.scalar_value()?;
                    let mut dw = vec![T::zero(); n * n];
                    for r in 0..n {
                        for c in 0..n {
                            dw[r * n + c] = gs * inv[c * n + r];
                        }
                    }
                    accumulate(&mut adjoints, *w, Tensor::new(vec![n, n], dw)?)?;
                }
                Op::ConcatCh { a, b } => {
                    let ca = self.nodes[*a].value.shape()[0];
                    let ct = self.nodes[i].value.shape()[0];
                    accumulate(&mut adjoints, *a, reshape::slice_channels(&g, 0, ca)?)?;
                    accumulate(&mut adjoints, *b, reshape::slice_channels(&g, ca, ct)?)?;
                }
                Op::SliceCh { a, from, to } => {
                    let va = &self.nodes[*a].value;
                    let (c, h, w) = reshape::dims3(va, "slice backward")?;
                    let hw = h * w;
                    let mut dv = vec![T::zero(); c * hw];
                    dv[from * hw..to * hw].copy_from_slice(g.data());
                    accumulate(&mut adjoints, *a, Tensor::new(vec![c, h, w], dv)?)?;
                }
                Op::Squeeze { a } => {
                    accumulate(&mut adjoints, *a, reshape::unsqueeze(&g)?)?;
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate<T: Scalar>(adjoints: &mut [Option<Tensor<T>>], idx: usize, g: Tensor<T>) -> Result<()> {
    adjoints[idx] = Some(match adjoints[idx].take() {
        Some(acc) => acc.add(&g)?,
        None => g,
    });
    Ok(())
}

/// Adjoint of reduce_sum: broadcast the (possibly scalar) upstream gradient
/// back over the reduced axes.
fn broadcast_sum_grad<T: Scalar>(g: &Tensor<T>, in_shape: &[usize], axes: Option<&[usize]>) -> Result<Tensor<T>> {
    match axes {
        None => Ok(Tensor::full(in_shape, g.scalar_value()?)),
        Some(axes) if axes.is_empty() => Ok(Tensor::full(in_shape, g.scalar_value()?)),
        Some(axes) => {
            let rank = in_shape.len();
            let keep: Vec<bool> = (0..rank).map(|i| !axes.contains(&i)).collect();
            let out_shape: Vec<usize> = (0..rank).filter(|&i| keep[i]).map(|i| in_shape[i]).collect();
            let in_strides = crate::tensor::row_major_strides(in_shape);
            let out_strides = crate::tensor::row_major_strides(&out_shape);
            let elems: usize = in_shape.iter().product();
            let mut out = vec![T::zero(); elems];
            for (flat, slot) in out.iter_mut().enumerate() {
                let mut rem = flat;
                let mut out_flat = 0;
                let mut oi = 0;
                for d in 0..rank {
                    let idx = rem / in_strides[d];
                    rem %= in_strides[d];
                    if keep[d] {
                        out_flat += idx * out_strides[oi];
                        oi += 1;
                    }
                }
                *slot = g.data()[out_flat];
            }
            Tensor::new(in_shape.to_vec(), out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn store_with<T: Scalar>(pairs: &[(&str, Tensor<T>)]) -> ParamStore<T> {
        let mut s = ParamStore::new();
        for (n, v) in pairs {
            s.register(*n, v.clone());
        }
        s
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let p = Tensor::<f64>::from_f64_slice(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let store = store_with(&[("p", p)]);
        let mut tape = Tape::new(&store);
        let v = tape.param(ParamId(0));
        let loss = tape.sum(v, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[1.0; 6][..]);
    }

    #[test]
    fn gradient_of_quadratic() {
        let p = Tensor::<f64>::from_f64_slice(&[2], &[1.0, 2.0]).unwrap();
        let store = store_with(&[("p", p)]);
        let mut tape = Tape::new(&store);
        let v = tape.param(ParamId(0));
        let sq = tape.mul(v, v).unwrap();
        let loss = tape.sum(sq, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let p = Tensor::<f64>::zeros(&[2]);
        let store = store_with(&[("p", p)]);
        let mut tape = Tape::new(&store);
        let v = tape.param(ParamId(0));
        assert!(matches!(tape.backward(v), Err(FlowError::NonScalarLoss { .. })));
    }

    #[test]
    fn unreachable_parameter_untouched() {
        let store = store_with(&[
            ("a", Tensor::<f64>::from_f64_slice(&[1], &[3.0]).unwrap()),
            ("b", Tensor::<f64>::from_f64_slice(&[1], &[4.0]).unwrap()),
        ]);
        let mut tape = Tape::new(&store);
        let a = tape.param(ParamId(0));
        let loss = tape.sum(a, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(ParamId(0)).is_some());
        assert!(grads.get(ParamId(1)).is_none());
    }

    /// Central finite differences over every parameter element.
    fn finite_diff_check(
        store: &mut ParamStore<f64>,
        f: &dyn Fn(&ParamStore<f64>) -> f64,
        analytic: &Gradients<f64>,
        eps: f64,
        tol: f64,
    ) {
        for pi in 0..store.len() {
            let id = ParamId(pi);
            let n = store.value(id).elems();
            for e in 0..n {
                let orig = store.value(id).clone();
                let mut plus = orig.clone();
                plus.data_mut()[e] += eps;
                store.set_value(id, plus);
                let fp = f(store);
                let mut minus = orig.clone();
                minus.data_mut()[e] -= eps;
                store.set_value(id, minus);
                let fm = f(store);
                store.set_value(id, orig);
                let numeric = (fp - fm) / (2.0 * eps);
                let a = analytic.get(id).map(|g| g.data()[e]).unwrap_or(0.0);
                let denom = numeric.abs().max(a.abs()).max(1e-6);
                assert!(
                    ((a - numeric) / denom).abs() < tol,
                    "param {pi} elem {e}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn two_layer_conv_net_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let x = Tensor::<f64>::new(vec![2, 3, 3], (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut store = ParamStore::new();
        store.register(
            "k1",
            Tensor::new(vec![3, 2, 3, 3], (0..54).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap(),
        );
        store.register("b1", Tensor::new(vec![3], (0..3).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap());
        store.register(
            "k2",
            Tensor::new(vec![1, 3, 1, 1], (0..3).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap(),
        );
        store.register("b2", Tensor::new(vec![1], (0..1).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap());

        let run = |s: &ParamStore<f64>| -> (f64, Option<Gradients<f64>>) {
            let mut tape = Tape::new(s);
            let xv = tape.leaf(x.clone());
            let k1 = tape.param(ParamId(0));
            let b1 = tape.param(ParamId(1));
            let h = tape.conv2d(xv, k1, b1).unwrap();
            let h = tape.sigmoid(h);
            let k2 = tape.param(ParamId(2));
            let b2 = tape.param(ParamId(3));
            let y = tape.conv2d(h, k2, b2).unwrap();
            let sq = tape.mul(y, y).unwrap();
            let loss = tape.sum(sq, None).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss).scalar_value().unwrap(), Some(grads))
        };

        let (_, grads) = run(&store);
        let grads = grads.unwrap();
        finite_diff_check(&mut store, &|s| run(s).0, &grads, 1e-5, 1e-4);
    }

    #[test]
    fn logabsdet_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let w = Tensor::<f64>::new(
            vec![3, 3],
            (0..9).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(),
        )
        .unwrap()
        .add(&Tensor::from_f64_slice(&[3, 3], &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]).unwrap())
        .unwrap();
        let mut store = store_with(&[("w", w)]);
        let run = |s: &ParamStore<f64>| {
            let mut tape = Tape::new(s);
            let wv = tape.param(ParamId(0));
            let ld = tape.log_abs_det(wv).unwrap();
            let grads = tape.backward(ld).unwrap();
            (tape.value(ld).scalar_value().unwrap(), grads)
        };
        let (_, grads) = run(&store);
        finite_diff_check(&mut store, &|s| run(s).0, &grads, 1e-6, 1e-5);
    }

    #[test]
    fn tape_is_linear_in_ops() {
        let store = store_with(&[("p", Tensor::<f64>::scalar(1.0))]);
        let mut tape = Tape::new(&store);
        let mut v = tape.param(ParamId(0));
        for _ in 0..100 {
            v = tape.affine_const(v, 1.0, 1.0);
        }
        assert_eq!(tape.len(), 101);
    }
}
