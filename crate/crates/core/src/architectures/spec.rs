//! Declarative layer graphs and shape inference.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use weakaudio_tensor::kernels::conv::output_extent;
use weakaudio_tensor::Padding;

use crate::error::{Error, Result};

/// Activation shape of one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureShape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn numel(&self) -> usize {
        match *self {
            FeatureShape::Spatial { h, w, c } => h * w * c,
            FeatureShape::Flat(d) => d,
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            FeatureShape::Spatial { c, .. } => c,
            FeatureShape::Flat(d) => d,
        }
    }
}

impl fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureShape::Spatial { h, w, c } => write!(f, "{h}x{w}x{c}"),
            FeatureShape::Flat(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        name: String,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        filters: usize,
        bias: bool,
    },
    Maxpool { name: String, window: (usize, usize), stride: (usize, usize), padding: Padding },
    Avgpool { name: String, window: (usize, usize), stride: (usize, usize), padding: Padding },
    Dense { name: String, units: usize },
    Relu { name: String },
    Sigmoid { name: String },
    Batchnorm { name: String },
    Flatten { name: String },
    /// `main(x) + shortcut(x)`; an empty shortcut is the identity.
    ResidualBlock { name: String, main: Vec<LayerSpec>, shortcut: Vec<LayerSpec> },
    /// Branches applied to the same input, concatenated along channels.
    InceptionBlock { name: String, branches: Vec<Vec<LayerSpec>> },
    Concat { name: String, branches: Vec<Vec<LayerSpec>> },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv { name, .. }
            | LayerSpec::Maxpool { name, .. }
            | LayerSpec::Avgpool { name, .. }
            | LayerSpec::Dense { name, .. }
            | LayerSpec::Relu { name }
            | LayerSpec::Sigmoid { name }
            | LayerSpec::Batchnorm { name }
            | LayerSpec::Flatten { name }
            | LayerSpec::ResidualBlock { name, .. }
            | LayerSpec::InceptionBlock { name, .. }
            | LayerSpec::Concat { name, .. } => name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Avgpool { .. } => "avgpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu { .. } => "relu",
            LayerSpec::Sigmoid { .. } => "sigmoid",
            LayerSpec::Batchnorm { .. } => "batchnorm",
            LayerSpec::Flatten { .. } => "flatten",
            LayerSpec::ResidualBlock { .. } => "residual-block",
            LayerSpec::InceptionBlock { .. } => "inception-block",
            LayerSpec::Concat { .. } => "concat",
        }
    }

    pub fn conv(name: impl Into<String>, kernel: (usize, usize), stride: (usize, usize), padding: Padding, filters: usize) -> Self {
        LayerSpec::Conv { name: name.into(), kernel, stride, padding, filters, bias: false }
    }

    pub fn dense(name: impl Into<String>, units: usize) -> Self {
        LayerSpec::Dense { name: name.into(), units }
    }

    pub fn relu(name: impl Into<String>) -> Self {
        LayerSpec::Relu { name: name.into() }
    }

    pub fn batchnorm(name: impl Into<String>) -> Self {
        LayerSpec::Batchnorm { name: name.into() }
    }

    pub fn maxpool(name: impl Into<String>, window: (usize, usize), stride: (usize, usize), padding: Padding) -> Self {
        LayerSpec::Maxpool { name: name.into(), window, stride, padding }
    }

    pub fn avgpool(name: impl Into<String>, window: (usize, usize), stride: (usize, usize), padding: Padding) -> Self {
        LayerSpec::Avgpool { name: name.into(), window, stride, padding }
    }
}

/// Per-leaf-layer result of shape inference with its cost contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    /// Slash-separated path through nested blocks.
    pub path: String,
    pub kind: &'static str,
    pub input: FeatureShape,
    pub output: FeatureShape,
    pub weights: u64,
    pub biases_bn: u64,
    pub multiplies: u64,
    pub padding: Option<Padding>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub num_labels: usize,
    pub bottleneck_units: Option<usize>,
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

fn spatial(shape: FeatureShape, path: &str) -> Result<(usize, usize, usize)> {
    match shape {
        FeatureShape::Spatial { h, w, c } => Ok((h, w, c)),
        FeatureShape::Flat(_) => Err(Error::InvalidArchitecture(format!("`{path}` needs a spatial input, got {shape}"))),
    }
}

fn window_output(
    input: FeatureShape,
    window: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
    path: &str,
) -> Result<(usize, usize, usize)> {
    let (h, w, c) = spatial(input, path)?;
    let wrap = |e| Error::InvalidArchitecture(format!("`{path}`: {e}"));
    let (oh, _) = output_extent(h, window.0, stride.0, padding).map_err(wrap)?;
    let (ow, _) = output_extent(w, window.1, stride.1, padding).map_err(wrap)?;
    Ok((oh, ow, c))
}

pub(crate) fn walk(layers: &[LayerSpec], prefix: &str, mut shape: FeatureShape, out: &mut Vec<LayerRecord>) -> Result<FeatureShape> {
    for layer in layers {
        let path = join(prefix, layer.name());
        let mut record = |output, weights, biases_bn, multiplies, padding| {
            out.push(LayerRecord { path: path.clone(), kind: layer.kind(), input: shape, output, weights, biases_bn, multiplies, padding });
            output
        };
        shape = match layer {
            LayerSpec::Conv { kernel, stride, padding, filters, bias, .. } => {
                let (_, _, c) = spatial(shape, &path)?;
                let (oh, ow, _) = window_output(shape, *kernel, *stride, *padding, &path)?;
                let weights = (kernel.0 * kernel.1 * c * filters) as u64;
                let biases = if *bias { *filters as u64 } else { 0 };
                let mults = (oh * ow) as u64 * weights;
                record(FeatureShape::Spatial { h: oh, w: ow, c: *filters }, weights, biases, mults, Some(*padding))
            }
            LayerSpec::Maxpool { window, stride, padding, .. } | LayerSpec::Avgpool { window, stride, padding, .. } => {
                let (h, w, c) = window_output(shape, *window, *stride, *padding, &path)?;
                record(FeatureShape::Spatial { h, w, c }, 0, 0, 0, Some(*padding))
            }
            LayerSpec::Dense { units, .. } => {
                let FeatureShape::Flat(d) = shape else {
                    return Err(Error::InvalidArchitecture(format!("dense `{path}` needs a flat input, got {shape}")));
                };
                let weights = (d * units) as u64;
                record(FeatureShape::Flat(*units), weights, *units as u64, weights, None)
            }
            LayerSpec::Batchnorm { .. } => record(shape, 0, 2 * shape.channels() as u64, 0, None),
            LayerSpec::Relu { .. } | LayerSpec::Sigmoid { .. } => record(shape, 0, 0, 0, None),
            LayerSpec::Flatten { .. } => record(FeatureShape::Flat(shape.numel()), 0, 0, 0, None),
            LayerSpec::ResidualBlock { main, shortcut, .. } => {
                let a = walk(main, &path, shape, out)?;
                let b = walk(shortcut, &join(&path, "shortcut"), shape, out)?;
                if a != b {
                    return Err(Error::InvalidArchitecture(format!("residual `{path}` adds {a} to {b}")));
                }
                out.push(LayerRecord { path: join(&path, "add"), kind: layer.kind(), input: shape, output: a, weights: 0, biases_bn: 0, multiplies: 0, padding: None });
                a
            }
            LayerSpec::InceptionBlock { branches, .. } | LayerSpec::Concat { branches, .. } => {
                if branches.is_empty() {
                    return Err(Error::InvalidArchitecture(format!("`{path}` has no branches")));
                }
                let mut merged: Option<(usize, usize, usize)> = None;
                for (i, branch) in branches.iter().enumerate() {
                    let s = walk(branch, &join(&path, &format!("branch{i}")), shape, out)?;
                    let (h, w, c) = spatial(s, &path)?;
                    merged = match merged {
                        None => Some((h, w, c)),
                        Some((mh, mw, mc)) if (mh, mw) == (h, w) => Some((mh, mw, mc + c)),
                        Some((mh, mw, _)) => {
                            return Err(Error::InvalidArchitecture(format!(
                                "`{path}` branch {i} is {h}x{w}, expected {mh}x{mw}"
                            )))
                        }
                    };
                }
                let (h, w, c) = merged.expect("non-empty");
                let output = FeatureShape::Spatial { h, w, c };
                out.push(LayerRecord { path: join(&path, "concat"), kind: layer.kind(), input: shape, output, weights: 0, biases_bn: 0, multiplies: 0, padding: None });
                output
            }
        };
    }
    Ok(shape)
}

fn collect_names(layers: &[LayerSpec], prefix: &str, seen: &mut HashSet<String>) -> Result<()> {
    for layer in layers {
        let path = join(prefix, layer.name());
        if layer.name().is_empty() || layer.name().contains('/') || !seen.insert(path.clone()) {
            return Err(Error::InvalidArchitecture(format!("layer name `{path}` is empty, nested or duplicated")));
        }
        match layer {
            LayerSpec::ResidualBlock { main, shortcut, .. } => {
                collect_names(main, &path, seen)?;
                collect_names(shortcut, &join(&path, "shortcut"), seen)?;
            }
            LayerSpec::InceptionBlock { branches, .. } | LayerSpec::Concat { branches, .. } => {
                for (i, b) in branches.iter().enumerate() {
                    collect_names(b, &join(&path, &format!("branch{i}")), seen)?;
                }
            }
            _ => {}
        }
    }
    Ok(())
}

impl ArchitectureSpec {
    pub fn input(&self) -> FeatureShape {
        let (h, w, c) = self.input_shape;
        FeatureShape::Spatial { h, w, c }
    }

    /// Shape inference over every leaf layer, validating the whole spec.
    pub fn records(&self) -> Result<Vec<LayerRecord>> {
        collect_names(&self.layers, "", &mut HashSet::new())?;
        let mut out = Vec::new();
        let last = walk(&self.layers, "", self.input(), &mut out)?;
        if last != FeatureShape::Flat(self.num_labels) {
            return Err(Error::InvalidArchitecture(format!(
                "`{}` ends in {last}, expected {} labels",
                self.name, self.num_labels
            )));
        }
        self.head_index()?;
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<FeatureShape> {
        Ok(self.records()?.last().map(|r| r.output).unwrap_or(self.input()))
    }

    /// Index of the final dense layer; the spec must end with dense + sigmoid.
    pub fn head_index(&self) -> Result<usize> {
        match self.layers.as_slice() {
            [.., LayerSpec::Dense { units, .. }, LayerSpec::Sigmoid { .. }] if *units == self.num_labels => {
                Ok(self.layers.len() - 2)
            }
            _ => Err(Error::NoOutputHead(format!(
                "`{}` must end with dense({}) followed by sigmoid",
                self.name, self.num_labels
            ))),
        }
    }

    /// Width of the activations entering the output layer.
    pub fn embedding_dim(&self) -> Result<usize> {
        let head = self.head_index()?;
        if head == 0 {
            return Err(Error::NoEmbeddingLayer(format!("`{}` feeds its input straight to the output", self.name)));
        }
        let mut records = Vec::new();
        let shape = walk(&self.layers[..head], "", self.input(), &mut records)?;
        match shape {
            FeatureShape::Flat(d) => Ok(d),
            other => Err(Error::NoEmbeddingLayer(format!("penultimate activations are {other}"))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture specs always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.records()?;
        Ok(spec)
    }

    /// SHA-256 of the compact JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("architecture specs always serialize");
        Sha256::digest(&bytes).into()
    }
}
