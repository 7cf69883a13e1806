//! Weight and multiply accounting.
//!
//! Weights are kernel and dense matrix entries only. Biases and the two
//! affine batch-norm vectors are tallied separately. Multiplies count one
//! per multiply-accumulate of convolutions and dense layers; pooling,
//! activations and normalization add none.

use std::fmt;
use std::io::Write;

use serde::Serialize;
use weakaudio_tensor::Padding;

use super::builders::{BOTTLENECK, HEAD};
use super::spec::{ArchitectureSpec, FeatureShape};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost {
    pub layer: String,
    pub kind: String,
    pub output_shape: String,
    pub weights: u64,
    pub biases_bn: u64,
    pub multiplies: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub padding: Option<Padding>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub architecture: String,
    pub layers: Vec<LayerCost>,
    pub total_weights: u64,
    pub total_biases_bn: u64,
    pub total_multiplies: u64,
    pub output_shape: String,
}

pub fn count_costs(spec: &ArchitectureSpec) -> Result<CostReport> {
    let records = spec.records()?;
    let layers: Vec<LayerCost> = records
        .iter()
        .map(|r| LayerCost {
            layer: r.path.clone(),
            kind: r.kind.to_string(),
            output_shape: r.output.to_string(),
            weights: r.weights,
            biases_bn: r.biases_bn,
            multiplies: r.multiplies,
            padding: r.padding,
        })
        .collect();
    let output = records.last().map(|r| r.output).unwrap_or(FeatureShape::Flat(spec.num_labels));
    Ok(CostReport {
        architecture: spec.name.clone(),
        total_weights: layers.iter().map(|l| l.weights).sum(),
        total_biases_bn: layers.iter().map(|l| l.biases_bn).sum(),
        total_multiplies: layers.iter().map(|l| l.multiplies).sum(),
        output_shape: output.to_string(),
        layers,
    })
}

impl CostReport {
    /// Trainable parameter total: weights plus biases and batch-norm affines.
    pub fn trainable(&self) -> u64 {
        self.total_weights + self.total_biases_bn
    }

    /// Weights of the output layer plus the bottleneck feeding it, if any.
    pub fn output_head_weights(&self) -> u64 {
        self.layers.iter().filter(|l| l.layer == HEAD || l.layer == BOTTLENECK).map(|l| l.weights).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "output_shape", "weights", "biases_bn", "multiplies"])?;
        for l in &self.layers {
            w.write_record([
                l.layer.as_str(),
                l.output_shape.as_str(),
                &l.weights.to_string(),
                &l.biases_bn.to_string(),
                &l.multiplies.to_string(),
            ])?;
        }
        w.write_record([
            "total",
            self.output_shape.as_str(),
            &self.total_weights.to_string(),
            &self.total_biases_bn.to_string(),
            &self.total_multiplies.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (weights exclude biases and batch-norm parameters)", self.architecture)?;
        writeln!(f, "{:<40} {:<16} {:>8} {:>12} {:>10} {:>14}", "layer", "output", "padding", "weights", "biases_bn", "multiplies")?;
        for l in self.layers.iter().filter(|l| l.weights + l.biases_bn > 0 || l.padding.is_some()) {
            let pad = match l.padding {
                Some(Padding::Same) => "same",
                Some(Padding::Valid) => "valid",
                None => "",
            };
            writeln!(
                f,
                "{:<40} {:<16} {:>8} {:>12} {:>10} {:>14}",
                l.layer, l.output_shape, pad, l.weights, l.biases_bn, l.multiplies
            )?;
        }
        write!(
            f,
            "total: {:.2}M weights, {:.2}M biases/bn, {:.3}B multiplies",
            self.total_weights as f64 / 1e6,
            self.total_biases_bn as f64 / 1e6,
            self.total_multiplies as f64 / 1e9
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architectures::builders::*;
    use crate::architectures::spec::LayerSpec;

    #[test]
    fn single_conv_counts() {
        let spec = ArchitectureSpec {
            name: "one".into(),
            input_shape: (96, 64, 1),
            layers: vec![
                LayerSpec::conv("conv", (3, 3), (1, 1), Padding::Same, 64),
                LayerSpec::Flatten { name: "flatten".into() },
                LayerSpec::dense("logits", 2),
                LayerSpec::Sigmoid { name: "output".into() },
            ],
            num_labels: 2,
            bottleneck_units: None,
        };
        let r = count_costs(&spec).unwrap();
        assert_eq!(r.layers[0].weights, 576);
        assert_eq!(r.layers[0].multiplies, 3_538_944);
        assert_eq!(r.layers[0].output_shape, "96x64x64");
    }

    #[test]
    fn fully_connected_reference() {
        let r = count_costs(&build_fully_connected(3, 1000, 3087).unwrap()).unwrap();
        assert_eq!(r.total_weights, 6144 * 1000 + 2 * 1000 * 1000 + 1000 * 3087);
        assert_eq!(r.total_multiplies, r.total_weights);
    }

    #[test]
    fn totals_are_sums_and_csv_has_rows() {
        let r = count_costs(&build_alexnet(527).unwrap()).unwrap();
        assert_eq!(r.total_weights, r.layers.iter().map(|l| l.weights).sum::<u64>());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("layer,output_shape,weights,biases_bn,multiplies\n"));
        assert_eq!(text.lines().count(), r.layers.len() + 2);
    }
}
