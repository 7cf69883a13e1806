//! Trainable instances of an [`ArchitectureSpec`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use weakaudio_tensor::{BatchStats, Graph, ParamId, ParamStore, Scalar, Tensor, Var, Window};

use super::spec::{join, walk, ArchitectureSpec, FeatureShape, LayerSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self { momentum: 0.99, epsilon: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; moving averages are returned for update.
    Train,
    /// Moving statistics.
    Inference,
}

/// Result of a forward pass that stops before the output sigmoid.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Activations entering the output layer.
    pub embedding: Var,
    pub bn_updates: Vec<(ParamId, ParamId, BatchStats)>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    spec: ArchitectureSpec,
    params: ParamStore<T>,
    pub batch_norm: BatchNormConfig,
}

fn shape_vec(s: FeatureShape) -> Vec<usize> {
    match s {
        FeatureShape::Spatial { h, w, c } => vec![h, w, c],
        FeatureShape::Flat(d) => vec![d],
    }
}

/// Parameter names and shapes in creation order, with He fan-in where
/// the tensor is a weight matrix.
fn declare(layers: &[LayerSpec], prefix: &str, mut shape: FeatureShape, out: &mut Vec<(String, Vec<usize>, Init)>) -> Result<FeatureShape> {
    let mut records = Vec::new();
    for layer in layers {
        let path = join(prefix, layer.name());
        match layer {
            LayerSpec::Conv { kernel, filters, bias, .. } => {
                let c = shape.channels();
                out.push((format!("{path}/kernel"), vec![kernel.0, kernel.1, c, *filters], Init::He(kernel.0 * kernel.1 * c)));
                if *bias {
                    out.push((format!("{path}/bias"), vec![*filters], Init::Zero));
                }
            }
            LayerSpec::Dense { units, .. } => {
                let d = shape.numel();
                out.push((format!("{path}/weights"), vec![d, *units], Init::He(d)));
                out.push((format!("{path}/bias"), vec![*units], Init::Zero));
            }
            LayerSpec::Batchnorm { .. } => {
                let c = shape.channels();
                out.push((format!("{path}/scale"), vec![c], Init::One));
                out.push((format!("{path}/shift"), vec![c], Init::Zero));
                out.push((format!("{path}/moving_mean"), vec![c], Init::Zero));
                out.push((format!("{path}/moving_variance"), vec![c], Init::One));
            }
            LayerSpec::ResidualBlock { main, shortcut, .. } => {
                declare(main, &path, shape, out)?;
                declare(shortcut, &join(&path, "shortcut"), shape, out)?;
            }
            LayerSpec::InceptionBlock { branches, .. } | LayerSpec::Concat { branches, .. } => {
                for (i, b) in branches.iter().enumerate() {
                    declare(b, &join(&path, &format!("branch{i}")), shape, out)?;
                }
            }
            _ => {}
        }
        records.clear();
        shape = walk(std::slice::from_ref(layer), prefix, shape, &mut records)?;
    }
    Ok(shape)
}

#[derive(Clone, Copy, Debug)]
enum Init {
    He(usize),
    Zero,
    One,
}

fn is_trainable(name: &str) -> bool {
    !(name.ends_with("/moving_mean") || name.ends_with("/moving_variance"))
}

impl<T: Scalar> Model<T> {
    /// He-normal weights, zero biases and shifts, unit scales, seeded.
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.records()?;
        let mut decls = Vec::new();
        declare(&spec.layers, "", spec.input(), &mut decls)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in decls {
            let len: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::He(fan_in) => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..len).map(|_| T::from_f64(normal.sample(&mut rng))).collect()
                }
                Init::Zero => vec![T::zero(); len],
                Init::One => vec![T::one(); len],
            };
            let trainable = is_trainable(&name);
            params.insert(name, Tensor::new(shape, data)?, trainable)?;
        }
        Ok(Self { spec, params, batch_norm: BatchNormConfig::default() })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(spec: ArchitectureSpec, stored: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        if stored.len() != model.params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, architecture needs {}",
                stored.len(),
                model.params.len()
            )));
        }
        for p in stored.iter() {
            let id = model.params.id(&p.name).map_err(|_| Error::Data(format!("unexpected parameter `{}`", p.name)))?;
            let slot = model.params.get_mut(id);
            if slot.value.shape() != p.value.shape() {
                return Err(Error::Data(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    p.value.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = p.value.clone();
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn param(&self, g: &mut Graph<T>, name: String) -> Result<Var> {
        Ok(g.param(&self.params, self.params.id(&name)?))
    }

    fn run(&self, g: &mut Graph<T>, layers: &[LayerSpec], prefix: &str, mut x: Var, mode: Mode, updates: &mut Vec<(ParamId, ParamId, BatchStats)>) -> Result<Var> {
        for layer in layers {
            let path = join(prefix, layer.name());
            x = match layer {
                LayerSpec::Conv { stride, padding, bias, .. } => {
                    let k = self.param(g, format!("{path}/kernel"))?;
                    let y = g.conv2d(x, k, *stride, *padding)?;
                    if *bias {
                        let b = self.param(g, format!("{path}/bias"))?;
                        g.add_bias(y, b)?
                    } else {
                        y
                    }
                }
                LayerSpec::Maxpool { window, stride, padding, .. } => g.max_pool(x, Window::new(*window, *stride, *padding))?,
                LayerSpec::Avgpool { window, stride, padding, .. } => g.avg_pool(x, Window::new(*window, *stride, *padding))?,
                LayerSpec::Dense { .. } => {
                    let w = self.param(g, format!("{path}/weights"))?;
                    let b = self.param(g, format!("{path}/bias"))?;
                    g.dense(x, w, b)?
                }
                LayerSpec::Relu { .. } => g.relu(x),
                LayerSpec::Sigmoid { .. } => g.sigmoid(x),
                LayerSpec::Flatten { .. } => g.flatten(x)?,
                LayerSpec::Batchnorm { .. } => {
                    let scale = self.param(g, format!("{path}/scale"))?;
                    let shift = self.param(g, format!("{path}/shift"))?;
                    let mean_id = self.params.id(&format!("{path}/moving_mean"))?;
                    let var_id = self.params.id(&format!("{path}/moving_variance"))?;
                    match mode {
                        Mode::Train => {
                            let (y, stats) = g.batch_norm(x, scale, shift, self.batch_norm.epsilon)?;
                            updates.push((mean_id, var_id, stats));
                            y
                        }
                        Mode::Inference => g.batch_norm_frozen(
                            x,
                            scale,
                            shift,
                            self.params.get(mean_id).value.data(),
                            self.params.get(var_id).value.data(),
                            self.batch_norm.epsilon,
                        )?,
                    }
                }
                LayerSpec::ResidualBlock { main, shortcut, .. } => {
                    let a = self.run(g, main, &path, x, mode, updates)?;
                    let b = self.run(g, shortcut, &join(&path, "shortcut"), x, mode, updates)?;
                    g.add(a, b)?
                }
                LayerSpec::InceptionBlock { branches, .. } | LayerSpec::Concat { branches, .. } => {
                    let mut outs = Vec::with_capacity(branches.len());
                    for (i, b) in branches.iter().enumerate() {
                        outs.push(self.run(g, b, &join(&path, &format!("branch{i}")), x, mode, updates)?);
                    }
                    g.concat(&outs)?
                }
            };
        }
        Ok(x)
    }

    /// Records the forward pass of `input` (`[N, H, W, C]`) up to the logits.
    pub fn forward(&self, g: &mut Graph<T>, input: Var, mode: Mode) -> Result<ForwardOutput> {
        let expected = shape_vec(self.spec.input());
        let got = g.value(input).shape();
        if got.len() != 4 || got[1..] != expected[..] {
            return Err(Error::Data(format!("model `{}` expects [N, {expected:?}], got {got:?}", self.spec.name)));
        }
        let head = self.spec.head_index()?;
        let mut updates = Vec::new();
        let embedding = self.run(g, &self.spec.layers[..head], "", input, mode, &mut updates)?;
        let logits = self.run(g, &self.spec.layers[head..head + 1], "", embedding, mode, &mut updates)?;
        Ok(ForwardOutput { logits, embedding, bn_updates: updates })
    }

    /// Folds training-batch statistics into the moving averages.
    pub fn apply_bn_updates(&mut self, updates: &[(ParamId, ParamId, BatchStats)]) {
        let m = self.batch_norm.momentum;
        for (mean_id, var_id, stats) in updates {
            for (v, s) in self.params.get_mut(*mean_id).value.data_mut().iter_mut().zip(&stats.mean) {
                *v = T::from_f64(m * v.as_f64() + (1.0 - m) * s);
            }
            for (v, s) in self.params.get_mut(*var_id).value.data_mut().iter_mut().zip(&stats.unbiased_variance) {
                *v = T::from_f64(m * v.as_f64() + (1.0 - m) * s);
            }
        }
    }

    /// Inference-mode scores in `[0, 1]`, shape `[N, num_labels]`.
    pub fn predict(&self, inputs: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(inputs);
        let out = self.forward(&mut g, x, Mode::Inference)?;
        let s = g.sigmoid(out.logits);
        Ok(g.value(s).clone())
    }

    /// Inference-mode scores together with the embedding activations.
    pub fn predict_with_embedding(&self, inputs: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let x = g.input(inputs);
        let out = self.forward(&mut g, x, Mode::Inference)?;
        let s = g.sigmoid(out.logits);
        Ok((g.value(s).clone(), g.value(out.embedding).clone()))
    }
}
