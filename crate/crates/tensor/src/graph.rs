//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse. Parameter gradients are accumulated into the
//! [`ParamStore`]; gradients of leaf inputs created with
//! [`Graph::input_with_grad`] are returned in [`Gradients`].

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::kernels::conv::{conv2d_backward, conv2d_forward, Padding, Window};
use crate::kernels::norm::{
    batch_norm_inference, batch_norm_train, batch_norm_train_backward, BatchNormCache, BatchStats,
};
use crate::kernels::pool::{avg_pool_backward, avg_pool_forward, max_pool_backward, max_pool_forward};
use crate::kernels::{gemm, MatRef};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` inside the loss.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d { input: Var, kernel: Var, stride: (usize, usize), padding: Padding },
    MaxPool { input: Var, argmax: Vec<usize> },
    AvgPool { input: Var, window: Window },
    MatMul { input: Var, weights: Var },
    AddBias { input: Var, bias: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    BatchNorm { input: Var, scale: Var, shift: Var, cache: BatchNormCache<T> },
    BatchNormFrozen { input: Var, scale: Var, shift: Var, cache: BatchNormCache<T> },
    Reshape { input: Var },
    Add { a: Var, b: Var },
    Concat { inputs: Vec<Var> },
    Dot { input: Var, weights: Tensor<T> },
    Bce { scores: Var, targets: Tensor<T> },
    SigmoidBce { logits: Var, targets: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of leaf inputs that were created with [`Graph::input_with_grad`].
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_targets<T: Scalar>(scores: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    if scores.shape() != targets.shape() || scores.shape().is_empty() {
        return Err(TensorError::ShapeMismatch(format!(
            "loss scores {:?} vs targets {:?}",
            scores.shape(),
            targets.shape()
        )));
    }
    if let Some(bad) = targets.data().iter().find(|&&y| y != T::zero() && y != T::one()) {
        return Err(TensorError::InvalidTarget(bad.as_f64()));
    }
    Ok(())
}

/// Mean over the leading axis of the summed per-class cross-entropy.
fn bce_value<T: Scalar>(scores: impl Iterator<Item = f64>, targets: &[T], batch: usize) -> f64 {
    let mut total = 0.0;
    for (s, &y) in scores.zip(targets) {
        let s = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        total -= if y == T::one() { s.ln() } else { (1.0 - s).ln() };
    }
    total / batch as f64
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: (usize, usize), padding: Padding) -> Result<Var> {
        let value = conv2d_forward(self.value(input), self.value(kernel), stride, padding)?;
        let needs = self.needs(&[input, kernel]);
        Ok(self.push(value, Op::Conv2d { input, kernel, stride, padding }, needs))
    }

    pub fn max_pool(&mut self, input: Var, window: Window) -> Result<Var> {
        let (value, argmax) = max_pool_forward(self.value(input), window)?;
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, needs))
    }

    pub fn avg_pool(&mut self, input: Var, window: Window) -> Result<Var> {
        let value = avg_pool_forward(self.value(input), window)?;
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::AvgPool { input, window }, needs))
    }

    /// `[N, D] x [D, U] -> [N, U]`.
    pub fn matmul(&mut self, input: Var, weights: Var) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weights));
        let (&[n, d], &[d2, u]) = (x.shape(), w.shape()) else {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul expects [N, D] x [D, U], got {:?} x {:?}",
                x.shape(),
                w.shape()
            )));
        };
        if d != d2 {
            return Err(TensorError::ShapeMismatch(format!("matmul inner dims {d} vs {d2}")));
        }
        let mut out = vec![T::zero(); n * u];
        gemm(MatRef::row_major(x.data(), n, d), MatRef::row_major(w.data(), d, u), &mut out, false);
        let needs = self.needs(&[input, weights]);
        Ok(self.push(Tensor::new(vec![n, u], out)?, Op::MatMul { input, weights }, needs))
    }

    /// Adds a per-channel bias along the trailing axis.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(input), self.value(bias));
        if b.len() != x.last_dim() || x.shape().is_empty() {
            return Err(TensorError::ShapeMismatch(format!(
                "bias {:?} does not match trailing axis of {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let mut value = x.clone();
        for row in value.data_mut().chunks_exact_mut(b.len()) {
            for (v, &bb) in row.iter_mut().zip(b.data()) {
                *v = *v + bb;
            }
        }
        let needs = self.needs(&[input, bias]);
        Ok(self.push(value, Op::AddBias { input, bias }, needs))
    }

    /// Affine map `input * weights + bias`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let z = self.matmul(input, weights)?;
        self.add_bias(z, bias)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(T::zero()));
        let needs = self.needs(&[input]);
        self.push(value, Op::Relu { input }, needs)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        let needs = self.needs(&[input]);
        self.push(value, Op::Sigmoid { input }, needs)
    }

    /// Training-mode batch normalization; also returns the batch statistics
    /// so the caller can update its moving averages.
    pub fn batch_norm(&mut self, input: Var, scale: Var, shift: Var, epsilon: f64) -> Result<(Var, BatchStats)> {
        let (value, cache, stats) =
            batch_norm_train(self.value(input), self.value(scale), self.value(shift), epsilon)?;
        let needs = self.needs(&[input, scale, shift]);
        Ok((self.push(value, Op::BatchNorm { input, scale, shift, cache }, needs), stats))
    }

    /// Inference-mode batch normalization using stored statistics.
    pub fn batch_norm_frozen(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        mean: &[T],
        variance: &[T],
        epsilon: f64,
    ) -> Result<Var> {
        let (value, normalized, inv_std) =
            batch_norm_inference(self.value(input), self.value(scale), self.value(shift), mean, variance, epsilon)?;
        let needs = self.needs(&[input, scale, shift]);
        let cache = BatchNormCache { normalized, inv_std };
        Ok(self.push(value, Op::BatchNormFrozen { input, scale, shift, cache }, needs))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Reshape { input }, needs))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let Some(&n) = shape.first() else {
            return Err(TensorError::ShapeMismatch("cannot flatten a scalar".into()));
        };
        let rest = shape[1..].iter().product();
        self.reshape(input, vec![n, rest])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(TensorError::ShapeMismatch(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let mut value = x.clone();
        value.add_assign(y);
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Concatenates along the trailing (channel) axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(first) = inputs.first() else {
            return Err(TensorError::ShapeMismatch("concat of nothing".into()));
        };
        let lead = self.value(*first).shape().split_last().map(|(_, l)| l.to_vec()).unwrap_or_default();
        let mut widths = Vec::with_capacity(inputs.len());
        for v in inputs {
            let s = self.value(*v).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch(format!("concat leading dims {lead:?} vs {s:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = self.needs(inputs);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec() }, needs))
    }

    /// Scalar `sum(input * weights)`.
    pub fn dot(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(TensorError::ShapeMismatch(format!("dot {:?} vs {:?}", x.shape(), weights.shape())));
        }
        let s: f64 = x.data().iter().zip(weights.data()).map(|(a, b)| (*a * *b).as_f64()).sum();
        let needs = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(T::from_f64(s)), Op::Dot { input, weights }, needs))
    }

    /// Multi-label binary cross-entropy on probabilities `[N, C]`:
    /// mean over examples of the per-class sum.
    pub fn bce(&mut self, scores: Var, targets: Tensor<T>) -> Result<Var> {
        let s = self.value(scores);
        check_targets(s, &targets)?;
        let loss = bce_value(s.data().iter().map(|v| v.as_f64()), targets.data(), s.shape()[0]);
        let needs = self.needs(&[scores]);
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::Bce { scores, targets }, needs))
    }

    /// Sigmoid followed by [`Graph::bce`], fused so the gradient reaching the
    /// logits is `(sigmoid(z) - y) / N` even where the score saturates.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        check_targets(z, &targets)?;
        let loss = bce_value(z.data().iter().map(|&v| sigmoid(v.as_f64())), targets.data(), z.shape()[0]);
        let needs = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::SigmoidBce { logits, targets }, needs))
    }

    /// Back-propagates from the one-element node `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(TensorError::NoRecordedGraph("backward called before any forward pass".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NoRecordedGraph(format!(
                "loss must be a single value, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    leaves.insert(Var(i), dy);
                }
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&dy),
                Op::Conv2d { input, kernel, stride, padding } => {
                    let need_input = self.nodes[input.0].needs_grad;
                    let (dx, dk) = conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        *stride,
                        *padding,
                        &dy,
                        need_input,
                    )?;
                    if let Some(dx) = dx {
                        self.accumulate(&mut grads, *input, dx);
                    }
                    self.accumulate(&mut grads, *kernel, dk);
                }
                Op::MaxPool { input, argmax } => {
                    let dx = max_pool_backward(self.value(*input).shape(), argmax, &dy);
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::AvgPool { input, window } => {
                    let dx = avg_pool_backward(self.value(*input).shape(), *window, &dy)?;
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::MatMul { input, weights } => {
                    let (x, w) = (self.value(*input), self.value(*weights));
                    let (n, d, u) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                    let dym = MatRef::row_major(dy.data(), n, u);
                    if self.nodes[input.0].needs_grad {
                        let mut dx = vec![T::zero(); n * d];
                        gemm(dym, MatRef::row_major(w.data(), d, u).t(), &mut dx, false);
                        self.accumulate(&mut grads, *input, Tensor::new(vec![n, d], dx)?);
                    }
                    if self.nodes[weights.0].needs_grad {
                        let mut dw = vec![T::zero(); d * u];
                        gemm(MatRef::row_major(x.data(), n, d).t(), dym, &mut dw, false);
                        self.accumulate(&mut grads, *weights, Tensor::new(vec![d, u], dw)?);
                    }
                }
                Op::AddBias { input, bias } => {
                    let c = self.value(*bias).len();
                    if self.nodes[bias.0].needs_grad {
                        let mut db = vec![0.0f64; c];
                        for row in dy.data().chunks_exact(c) {
                            for (acc, &g) in db.iter_mut().zip(row) {
                                *acc += g.as_f64();
                            }
                        }
                        let db = db.into_iter().map(T::from_f64).collect();
                        self.accumulate(&mut grads, *bias, Tensor::new(self.value(*bias).shape().to_vec(), db)?);
                    }
                    self.accumulate(&mut grads, *input, dy);
                }
                Op::Relu { input } => {
                    let mut dx = dy;
                    for (g, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::Sigmoid { input } => {
                    let mut dx = dy;
                    for (g, &s) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *g = *g * s * (T::one() - s);
                    }
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::BatchNorm { input, scale, shift, cache } => {
                    let (dx, dscale, dshift) = batch_norm_train_backward(cache, self.value(*scale), &dy);
                    self.accumulate(&mut grads, *input, dx);
                    self.accumulate(&mut grads, *scale, dscale);
                    self.accumulate(&mut grads, *shift, dshift);
                }
                Op::BatchNormFrozen { input, scale, shift, cache } => {
                    let gamma = self.value(*scale).data();
                    let c = gamma.len();
                    let mut dscale = vec![T::zero(); c];
                    let mut dshift = vec![T::zero(); c];
                    let mut dx = dy.clone();
                    for (row, (g_row, xh_row)) in dx
                        .data_mut()
                        .chunks_exact_mut(c)
                        .zip(dy.data().chunks_exact(c).zip(cache.normalized.chunks_exact(c)))
                    {
                        for ch in 0..c {
                            dscale[ch] = dscale[ch] + g_row[ch] * xh_row[ch];
                            dshift[ch] = dshift[ch] + g_row[ch];
                            row[ch] = g_row[ch] * gamma[ch] * cache.inv_std[ch];
                        }
                    }
                    let pshape = self.value(*scale).shape().to_vec();
                    self.accumulate(&mut grads, *input, dx);
                    self.accumulate(&mut grads, *scale, Tensor::new(pshape.clone(), dscale)?);
                    self.accumulate(&mut grads, *shift, Tensor::new(pshape, dshift)?);
                }
                Op::Reshape { input } => {
                    let dx = dy.reshape(self.value(*input).shape().to_vec())?;
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, *a, dy.clone());
                    self.accumulate(&mut grads, *b, dy);
                }
                Op::Concat { inputs } => {
                    let total = node.value.last_dim();
                    let rows = node.value.len() / total;
                    let mut offset = 0;
                    for v in inputs {
                        let w = self.value(*v).last_dim();
                        if self.nodes[v.0].needs_grad {
                            let mut part = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                part.extend_from_slice(&dy.data()[r * total + offset..r * total + offset + w]);
                            }
                            self.accumulate(&mut grads, *v, Tensor::new(self.value(*v).shape().to_vec(), part)?);
                        }
                        offset += w;
                    }
                }
                Op::Dot { input, weights } => {
                    let g = dy.item();
                    self.accumulate(&mut grads, *input, weights.map(|w| w * g));
                }
                Op::Bce { scores, targets } => {
                    let s = self.value(*scores);
                    let g = dy.item().as_f64() / s.shape()[0] as f64;
                    let (lo, hi) = (SCORE_CLAMP, 1.0 - SCORE_CLAMP);
                    let dx = s
                        .data()
                        .iter()
                        .zip(targets.data())
                        .map(|(&s, &y)| {
                            let s = s.as_f64();
                            if s < lo || s > hi {
                                return T::zero();
                            }
                            let d = if y == T::one() { -1.0 / s } else { 1.0 / (1.0 - s) };
                            T::from_f64(d * g)
                        })
                        .collect();
                    self.accumulate(&mut grads, *scores, Tensor::new(s.shape().to_vec(), dx)?);
                }
                Op::SigmoidBce { logits, targets } => {
                    let z = self.value(*logits);
                    let g = dy.item() / T::from_f64(z.shape()[0] as f64);
                    let dx = z.data().iter().zip(targets.data()).map(|(&z, &y)| (sigmoid(z) - y) * g).collect();
                    self.accumulate(&mut grads, *logits, Tensor::new(z.shape().to_vec(), dx)?);
                }
            }
        }
        Ok(Gradients { leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let hi = sigmoid(20.0f64);
        let lo = sigmoid(-20.0f64);
        assert!(hi < 1.0 - 1e-9 && hi > 0.5);
        assert!(lo > 1e-9 && lo < 0.5);
        assert!((hi - 1.0 / (1.0 + (-20.0f64).exp())).abs() < 1e-16);
        assert!(sigmoid(-1000.0f32).is_finite() && sigmoid(1000.0f32) == 1.0);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input_with_grad(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        let grads = g.backward(y, &mut ParamStore::new()).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn backward_without_forward_fails() {
        let g = Graph::<f32>::new();
        let r = g.backward(Var(0), &mut ParamStore::new());
        assert!(matches!(r, Err(TensorError::NoRecordedGraph(_))));
    }

    #[test]
    fn relu_clips_negative() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(vec![2], vec![-3.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn bce_reference_values() {
        let mut g = Graph::<f64>::new();
        let s = g.input(Tensor::new(vec![1, 1], vec![0.25]).unwrap());
        let l = g.bce(s, Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);

        let c = 5;
        let s = g.input(Tensor::full(&[3, c], 0.5));
        let l = g.bce(s, Tensor::from_fn(&[3, c], |i| (i % 2) as f64)).unwrap();
        assert!((g.value(l).item() - c as f64 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_at_clamp_bounds_is_tiny() {
        let c = 4;
        let mut g = Graph::<f32>::new();
        let targets = Tensor::from_fn(&[2, c], |i| (i % 2) as f32);
        let perfect = targets.map(|y| if y == 1.0 { 1.0 } else { 0.0 });
        let s = g.input(perfect);
        let l = g.bce(s, targets).unwrap();
        let v = g.value(l).item();
        assert!(v >= 0.0 && v <= c as f32 * 1.7e-6, "loss {v}");
    }

    #[test]
    fn bce_rejects_non_binary_target() {
        let mut g = Graph::<f32>::new();
        let s = g.input(Tensor::full(&[1, 2], 0.5));
        let r = g.bce(s, Tensor::new(vec![1, 2], vec![1.0, 0.5]).unwrap());
        assert!(matches!(r, Err(TensorError::InvalidTarget(_))));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let used = store.insert("used", Tensor::full(&[2], 1.5), true).unwrap();
        let unused = store.insert("unused", Tensor::full(&[2], 3.0), true).unwrap();
        let frozen = store.insert("frozen", Tensor::full(&[2], 3.0), false).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, used);
        let _b = g.param(&store, unused);
        let f = g.param(&store, frozen);
        let s = g.add(a, f).unwrap();
        let l = g.dot(s, Tensor::full(&[2], 2.0)).unwrap();
        g.backward(l, &mut store).unwrap();
        assert_eq!(store.get(used).grad.data(), &[2.0, 2.0]);
        assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0]);
        assert_eq!(store.get(frozen).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut store = ParamStore::<f32>::new();
        let w = store.insert("w", Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }), true).unwrap();
        let b = store.insert("b", Tensor::zeros(&[3]), true).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[2, 3], |i| i as f32 - 1.0));
        let (wv, bv) = (g.param(&store, w), g.param(&store, b));
        let y = g.dense(x, wv, bv).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        let z = g.input(Tensor::zeros(&[2, 3]));
        let y0 = g.dense(z, wv, bv).unwrap();
        assert!(g.value(y0).data().iter().all(|&v| v == 0.0));
    }
}
