//! Constructors for the five reference architectures.

use serde::{Deserialize, Serialize};
use weakaudio_tensor::Padding::{self, Same, Valid};

use super::spec::{ArchitectureSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::frontend::{NUM_BANDS, PATCH_FRAMES};

pub const INPUT_SHAPE: (usize, usize, usize) = (PATCH_FRAMES, NUM_BANDS, 1);
pub const HEAD: &str = "logits";
pub const OUTPUT: &str = "output";
pub const BOTTLENECK: &str = "bottleneck";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    Fc,
    Alexnet,
    Vgg,
    Inception,
    Resnet,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 5] =
        [ArchitectureKind::Fc, ArchitectureKind::Alexnet, ArchitectureKind::Vgg, ArchitectureKind::Inception, ArchitectureKind::Resnet];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchitectureKind::Fc => "fc",
            ArchitectureKind::Alexnet => "alexnet",
            ArchitectureKind::Vgg => "vgg",
            ArchitectureKind::Inception => "inception",
            ArchitectureKind::Resnet => "resnet",
        }
    }

    /// Reference configuration; the fully connected baseline is 3x1000.
    pub fn build(&self, num_labels: usize) -> Result<ArchitectureSpec> {
        match self {
            ArchitectureKind::Fc => build_fully_connected(3, 1000, num_labels),
            ArchitectureKind::Alexnet => build_alexnet(num_labels),
            ArchitectureKind::Vgg => build_vgg(num_labels),
            ArchitectureKind::Inception => build_inception_v3(num_labels),
            ArchitectureKind::Resnet => build_resnet50(num_labels),
        }
    }
}

impl std::str::FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}` (fc, alexnet, vgg, inception, resnet)")))
    }
}

impl std::fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_labels(num_labels: usize) -> Result<()> {
    if num_labels == 0 {
        return Err(Error::InvalidArchitecture("num_labels must be positive".into()));
    }
    Ok(())
}

fn finish(name: &str, mut layers: Vec<LayerSpec>, num_labels: usize) -> Result<ArchitectureSpec> {
    layers.push(LayerSpec::dense(HEAD, num_labels));
    layers.push(LayerSpec::Sigmoid { name: OUTPUT.into() });
    let spec = ArchitectureSpec { name: name.into(), input_shape: INPUT_SHAPE, layers, num_labels, bottleneck_units: None };
    spec.records()?;
    Ok(spec)
}

/// Convolution without bias, then batch norm and ReLU.
fn conv_bn_relu(name: &str, kernel: (usize, usize), stride: (usize, usize), padding: Padding, filters: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(name, kernel, stride, padding, filters),
        LayerSpec::batchnorm(format!("{name}_bn")),
        LayerSpec::relu(format!("{name}_relu")),
    ]
}

fn dense_relu(name: &str, units: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::dense(name, units), LayerSpec::relu(format!("{name}_relu"))]
}

pub fn build_fully_connected(num_layers: usize, units: usize, num_labels: usize) -> Result<ArchitectureSpec> {
    check_labels(num_labels)?;
    if units == 0 {
        return Err(Error::InvalidArchitecture("hidden width must be positive".into()));
    }
    let mut layers = vec![LayerSpec::Flatten { name: "flatten".into() }];
    for i in 1..=num_layers {
        layers.extend(dense_relu(&format!("fc{i}"), units));
    }
    finish(&format!("fc-{num_layers}x{units}"), layers, num_labels)
}

pub fn build_alexnet(num_labels: usize) -> Result<ArchitectureSpec> {
    check_labels(num_labels)?;
    let pool = |name: &str| LayerSpec::maxpool(name, (3, 3), (2, 2), Valid);
    let mut layers = conv_bn_relu("conv1", (11, 11), (2, 1), Same, 96);
    layers.push(pool("pool1"));
    layers.extend(conv_bn_relu("conv2", (5, 5), (1, 1), Same, 256));
    layers.push(pool("pool2"));
    layers.extend(conv_bn_relu("conv3", (3, 3), (1, 1), Same, 384));
    layers.extend(conv_bn_relu("conv4", (3, 3), (1, 1), Same, 384));
    layers.extend(conv_bn_relu("conv5", (3, 3), (1, 1), Same, 256));
    layers.push(pool("pool5"));
    layers.push(LayerSpec::Flatten { name: "flatten".into() });
    layers.extend(dense_relu("fc6", 4096));
    layers.extend(dense_relu("fc7", 4096));
    finish("alexnet", layers, num_labels)
}

/// Configuration E: sixteen 3x3 convolutions in five pooled groups.
pub fn build_vgg(num_labels: usize) -> Result<ArchitectureSpec> {
    check_labels(num_labels)?;
    let groups: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)];
    let mut layers = Vec::new();
    for (g, &(filters, count)) in groups.iter().enumerate() {
        for i in 1..=count {
            layers.extend(conv_bn_relu(&format!("conv{}_{i}", g + 1), (3, 3), (1, 1), Same, filters));
        }
        layers.push(LayerSpec::maxpool(format!("pool{}", g + 1), (2, 2), (2, 2), Valid));
    }
    layers.push(LayerSpec::Flatten { name: "flatten".into() });
    layers.extend(dense_relu("fc6", 4096));
    layers.extend(dense_relu("fc7", 4096));
    finish("vgg", layers, num_labels)
}

fn bottleneck_block(name: &str, width: usize, stride: usize, project: bool) -> Vec<LayerSpec> {
    let mut main = conv_bn_relu("conv1", (1, 1), (1, 1), Same, width);
    main.extend(conv_bn_relu("conv2", (3, 3), (stride, stride), Same, width));
    main.push(LayerSpec::conv("conv3", (1, 1), (1, 1), Same, 4 * width));
    main.push(LayerSpec::batchnorm("conv3_bn"));
    let shortcut = if project {
        vec![LayerSpec::conv("conv", (1, 1), (stride, stride), Same, 4 * width), LayerSpec::batchnorm("conv_bn")]
    } else {
        Vec::new()
    };
    vec![
        LayerSpec::ResidualBlock { name: name.into(), main, shortcut },
        LayerSpec::relu(format!("{name}_relu")),
    ]
}

/// 50-layer bottleneck residual network. Downsampling stages put the stride
/// on the 3x3 convolution of their first block.
pub fn build_resnet50(num_labels: usize) -> Result<ArchitectureSpec> {
    check_labels(num_labels)?;
    let mut layers = conv_bn_relu("conv1", (7, 7), (1, 1), Same, 64);
    layers.push(LayerSpec::maxpool("pool1", (3, 3), (2, 2), Same));
    let stages: [(usize, usize, usize); 4] = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
    for (s, &(width, blocks, stride)) in stages.iter().enumerate() {
        for b in 1..=blocks {
            let first = b == 1;
            layers.extend(bottleneck_block(
                &format!("block{}_{b}", s + 2),
                width,
                if first { stride } else { 1 },
                first,
            ));
        }
    }
    layers.push(LayerSpec::avgpool("avgpool", (6, 4), (1, 1), Valid));
    layers.push(LayerSpec::Flatten { name: "flatten".into() });
    finish("resnet50", layers, num_labels)
}

fn branch(convs: &[(&str, (usize, usize), usize, Padding, usize)]) -> Vec<LayerSpec> {
    convs
        .iter()
        .flat_map(|&(name, kernel, stride, padding, filters)| conv_bn_relu(name, kernel, (stride, stride), padding, filters))
        .collect()
}

fn pool_branch(avg: bool, then: Option<usize>) -> Vec<LayerSpec> {
    let mut b = if avg {
        vec![LayerSpec::avgpool("pool", (3, 3), (1, 1), Same)]
    } else {
        vec![LayerSpec::maxpool("pool", (3, 3), (2, 2), Valid)]
    };
    if let Some(f) = then {
        b.extend(branch(&[("conv", (1, 1), 1, Same, f)]));
    }
    b
}

fn block(name: &str, branches: Vec<Vec<LayerSpec>>) -> LayerSpec {
    LayerSpec::InceptionBlock { name: name.into(), branches }
}

fn mixed_35(name: &str, pool_filters: usize) -> LayerSpec {
    block(
        name,
        vec![
            branch(&[("conv_1x1", (1, 1), 1, Same, 64)]),
            branch(&[("conv_1x1", (1, 1), 1, Same, 48), ("conv_5x5", (5, 5), 1, Same, 64)]),
            branch(&[
                ("conv_1x1", (1, 1), 1, Same, 64),
                ("conv_3x3a", (3, 3), 1, Same, 96),
                ("conv_3x3b", (3, 3), 1, Same, 96),
            ]),
            pool_branch(true, Some(pool_filters)),
        ],
    )
}

fn mixed_17(name: &str, width: usize) -> LayerSpec {
    block(
        name,
        vec![
            branch(&[("conv_1x1", (1, 1), 1, Same, 192)]),
            branch(&[
                ("conv_1x1", (1, 1), 1, Same, width),
                ("conv_1x7", (1, 7), 1, Same, width),
                ("conv_7x1", (7, 1), 1, Same, 192),
            ]),
            branch(&[
                ("conv_1x1", (1, 1), 1, Same, width),
                ("conv_7x1a", (7, 1), 1, Same, width),
                ("conv_1x7a", (1, 7), 1, Same, width),
                ("conv_7x1b", (7, 1), 1, Same, width),
                ("conv_1x7b", (1, 7), 1, Same, 192),
            ]),
            pool_branch(true, Some(192)),
        ],
    )
}

fn split_1x3_3x1(name: &str, filters: usize) -> LayerSpec {
    LayerSpec::Concat {
        name: name.into(),
        branches: vec![
            branch(&[("conv_1x3", (1, 3), 1, Same, filters)]),
            branch(&[("conv_3x1", (3, 1), 1, Same, filters)]),
        ],
    }
}

fn mixed_8(name: &str) -> LayerSpec {
    let mut b1 = branch(&[("conv_1x1", (1, 1), 1, Same, 384)]);
    b1.push(split_1x3_3x1("split", 384));
    let mut b2 = branch(&[("conv_1x1", (1, 1), 1, Same, 448), ("conv_3x3", (3, 3), 1, Same, 384)]);
    b2.push(split_1x3_3x1("split", 384));
    block(name, vec![branch(&[("conv_1x1", (1, 1), 1, Same, 320)]), b1, b2, pool_branch(true, Some(192))])
}

/// Inception V3 body from the 80-channel 1x1 stem onward.
pub fn build_inception_v3(num_labels: usize) -> Result<ArchitectureSpec> {
    check_labels(num_labels)?;
    let mut layers = conv_bn_relu("conv_3b_1x1", (1, 1), (1, 1), Valid, 80);
    layers.extend(conv_bn_relu("conv_4a_3x3", (3, 3), (1, 1), Valid, 192));
    layers.push(LayerSpec::maxpool("pool_5a", (3, 3), (2, 2), Valid));
    layers.push(mixed_35("mixed_5b", 32));
    layers.push(mixed_35("mixed_5c", 64));
    layers.push(mixed_35("mixed_5d", 64));
    layers.push(block(
        "mixed_6a",
        vec![
            branch(&[("conv_3x3", (3, 3), 2, Valid, 384)]),
            branch(&[
                ("conv_1x1", (1, 1), 1, Same, 64),
                ("conv_3x3a", (3, 3), 1, Same, 96),
                ("conv_3x3b", (3, 3), 2, Valid, 96),
            ]),
            pool_branch(false, None),
        ],
    ));
    layers.push(mixed_17("mixed_6b", 128));
    layers.push(mixed_17("mixed_6c", 160));
    layers.push(mixed_17("mixed_6d", 160));
    layers.push(mixed_17("mixed_6e", 192));
    layers.push(block(
        "mixed_7a",
        vec![
            branch(&[("conv_1x1", (1, 1), 1, Same, 192), ("conv_3x3", (3, 3), 2, Valid, 320)]),
            branch(&[
                ("conv_1x1", (1, 1), 1, Same, 192),
                ("conv_1x7", (1, 7), 1, Same, 192),
                ("conv_7x1", (7, 1), 1, Same, 192),
                ("conv_3x3", (3, 3), 2, Valid, 192),
            ]),
            pool_branch(false, None),
        ],
    ));
    layers.push(mixed_8("mixed_7b"));
    layers.push(mixed_8("mixed_7c"));
    layers.push(LayerSpec::avgpool("avgpool", (10, 6), (1, 1), Valid));
    layers.push(LayerSpec::Flatten { name: "flatten".into() });
    finish("inception_v3", layers, num_labels)
}

fn scale(n: usize, factor: f64) -> usize {
    ((n as f64 * factor).ceil() as usize).max(1)
}

fn shrink_layers(layers: &[LayerSpec], factor: f64, keep: Option<usize>) -> Vec<LayerSpec> {
    layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match layer {
            _ if Some(i) == keep => layer.clone(),
            LayerSpec::Conv { name, kernel, stride, padding, filters, bias } => LayerSpec::Conv {
                name: name.clone(),
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
                filters: scale(*filters, factor),
                bias: *bias,
            },
            LayerSpec::Dense { name, units } => LayerSpec::Dense { name: name.clone(), units: scale(*units, factor) },
            LayerSpec::ResidualBlock { name, main, shortcut } => LayerSpec::ResidualBlock {
                name: name.clone(),
                main: shrink_layers(main, factor, None),
                shortcut: shrink_layers(shortcut, factor, None),
            },
            LayerSpec::InceptionBlock { name, branches } => LayerSpec::InceptionBlock {
                name: name.clone(),
                branches: branches.iter().map(|b| shrink_layers(b, factor, None)).collect(),
            },
            LayerSpec::Concat { name, branches } => LayerSpec::Concat {
                name: name.clone(),
                branches: branches.iter().map(|b| shrink_layers(b, factor, None)).collect(),
            },
            other => other.clone(),
        })
        .collect()
}

/// Multiplies every hidden channel and unit count by `factor` (rounded up);
/// the output layer keeps its width.
pub fn shrink(spec: &ArchitectureSpec, factor: f64) -> Result<ArchitectureSpec> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::Config(format!("shrink factor must be in (0, 1], got {factor}")));
    }
    let head = spec.head_index()?;
    let out = ArchitectureSpec {
        name: if factor == 1.0 { spec.name.clone() } else { format!("{}-x{factor}", spec.name) },
        input_shape: spec.input_shape,
        layers: shrink_layers(&spec.layers, factor, Some(head)),
        num_labels: spec.num_labels,
        bottleneck_units: spec.bottleneck_units.map(|u| scale(u, factor)),
    };
    out.records()?;
    Ok(out)
}

/// Inserts a `units`-wide dense + ReLU layer before the output layer.
pub fn with_bottleneck(spec: &ArchitectureSpec, units: usize) -> Result<ArchitectureSpec> {
    let head = spec.head_index()?;
    if units == 0 {
        return Err(Error::InvalidArchitecture("bottleneck width must be positive".into()));
    }
    if spec.bottleneck_units.is_some() {
        return Err(Error::InvalidArchitecture(format!("`{}` already has a bottleneck", spec.name)));
    }
    let mut layers = spec.layers.clone();
    layers.splice(head..head, dense_relu(BOTTLENECK, units));
    let out = ArchitectureSpec {
        name: format!("{}-bottleneck{units}", spec.name),
        input_shape: spec.input_shape,
        layers,
        num_labels: spec.num_labels,
        bottleneck_units: Some(units),
    };
    out.records()?;
    Ok(out)
}
