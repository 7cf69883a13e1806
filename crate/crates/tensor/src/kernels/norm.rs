//! Batch normalization over every axis but the trailing channel axis.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Saved state of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Bessel-corrected variance, used for the moving average.
    pub unbiased_variance: Vec<f64>,
}

fn channels_of<T: Scalar>(input: &Tensor<T>, scale: &Tensor<T>, shift: &Tensor<T>) -> Result<usize> {
    let c = input.last_dim();
    if input.shape().len() < 2 || scale.len() != c || shift.len() != c {
        return Err(TensorError::ShapeMismatch(format!(
            "batch norm over input {:?} with scale {:?} and shift {:?}",
            input.shape(),
            scale.shape(),
            shift.shape()
        )));
    }
    Ok(c)
}

pub fn batch_norm_train<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    epsilon: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchStats)> {
    let c = channels_of(input, scale, shift)?;
    let batch = input.shape()[0];
    if batch < 2 {
        return Err(TensorError::DegenerateBatch(batch));
    }
    let x = input.data();
    let m = x.len() / c;
    let mean: Vec<f64> = channel_sums(x, c, |v, _| v).into_iter().map(|v| v / m as f64).collect();
    let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64(v)).collect();
    let var = channel_sums(x, c, |v, ch| {
        let d = v - mean_t[ch];
        d * d
    });
    let biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
    let unbiased: Vec<f64> = var.iter().map(|v| v / (m - 1).max(1) as f64).collect();
    let inv_std: Vec<T> = biased.iter().map(|v| T::from_f64(1.0 / (v + epsilon).sqrt())).collect();

    let (normalized, out) = normalize_affine(x, &mean_t, &inv_std, scale.data(), shift.data());
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BatchNormCache { normalized, inv_std },
        BatchStats { mean, unbiased_variance: unbiased },
    ))
}

/// Per-channel sums of `f(value, channel)`, accumulated in short blocks
/// of native precision and folded into f64.
fn channel_sums<T: Scalar>(x: &[T], c: usize, f: impl Fn(T, usize) -> T) -> Vec<f64> {
    const BLOCK_ROWS: usize = 64;
    let mut total = vec![0.0f64; c];
    let mut block = vec![T::zero(); c];
    for rows in x.chunks(BLOCK_ROWS * c) {
        block.fill(T::zero());
        for row in rows.chunks_exact(c) {
            for (ch, (acc, &v)) in block.iter_mut().zip(row).enumerate() {
                *acc = *acc + f(v, ch);
            }
        }
        for (t, &b) in total.iter_mut().zip(&block) {
            *t += b.as_f64();
        }
    }
    total
}

/// `(x - mean) * inv_std` and its affine transform, channel-last.
fn normalize_affine<T: Scalar>(x: &[T], mean: &[T], inv_std: &[T], gamma: &[T], beta: &[T]) -> (Vec<T>, Vec<T>) {
    let c = mean.len();
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for ((row, n_row), o_row) in x.chunks_exact(c).zip(normalized.chunks_exact_mut(c)).zip(out.chunks_exact_mut(c)) {
        for (((((&v, n), o), &mu), &is), (&g, &b)) in
            row.iter().zip(n_row).zip(o_row).zip(mean).zip(inv_std).zip(gamma.iter().zip(beta))
        {
            let xh = (v - mu) * is;
            *n = xh;
            *o = g * xh + b;
        }
    }
    (normalized, out)
}

/// Gradients `(d input, d scale, d shift)` of a training-mode batch norm.
pub fn batch_norm_train_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    scale: &Tensor<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = scale.len();
    let dy = dout.data();
    let m = dy.len() / c;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xh = vec![0.0f64; c];
    for (g_row, xh_row) in dy.chunks_exact(c).zip(cache.normalized.chunks_exact(c)) {
        for (((s, sx), &g), &xh) in sum_dy.iter_mut().zip(sum_dy_xh.iter_mut()).zip(g_row).zip(xh_row) {
            *s += g.as_f64();
            *sx += (g * xh).as_f64();
        }
    }
    let gamma = scale.data();
    let mut dx = Vec::with_capacity(dy.len());
    let inv_m = 1.0 / m as f64;
    let coef: Vec<(T, T, T)> = (0..c)
        .map(|ch| {
            let k = gamma[ch] * cache.inv_std[ch];
            (k, T::from_f64(sum_dy[ch] * inv_m), T::from_f64(sum_dy_xh[ch] * inv_m))
        })
        .collect();
    let k: Vec<T> = coef.iter().map(|v| v.0).collect();
    let mean_dy: Vec<T> = coef.iter().map(|v| v.1).collect();
    let mean_dy_xh: Vec<T> = coef.iter().map(|v| v.2).collect();
    dx.resize(dy.len(), T::zero());
    for ((d_row, g_row), xh_row) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)).zip(cache.normalized.chunks_exact(c)) {
        for (((((d, &g), &xh), &k), &md), &mdx) in
            d_row.iter_mut().zip(g_row).zip(xh_row).zip(&k).zip(&mean_dy).zip(&mean_dy_xh)
        {
            *d = k * (g - md - xh * mdx);
        }
    }
    let dscale = sum_dy_xh.iter().map(|&v| T::from_f64(v)).collect();
    let dshift = sum_dy.iter().map(|&v| T::from_f64(v)).collect();
    (
        Tensor::new(dout.shape().to_vec(), dx).expect("dx matches dout"),
        Tensor::new(scale.shape().to_vec(), dscale).expect("per-channel"),
        Tensor::new(scale.shape().to_vec(), dshift).expect("per-channel"),
    )
}

/// Inference-mode normalization with stored statistics.
/// Returns the output and the normalized input (needed for `d scale`).
pub fn batch_norm_inference<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    mean: &[T],
    variance: &[T],
    epsilon: f64,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let c = channels_of(input, scale, shift)?;
    if mean.len() != c || variance.len() != c {
        return Err(TensorError::ShapeMismatch("moving statistics length".into()));
    }
    let inv_std: Vec<T> =
        variance.iter().map(|&v| T::from_f64(1.0 / (v.as_f64() + epsilon).sqrt())).collect();
    let (normalized, out) = normalize_affine(input.data(), mean, &inv_std, scale.data(), shift.data());
    Ok((Tensor::new(input.shape().to_vec(), out)?, normalized, inv_std))
}
