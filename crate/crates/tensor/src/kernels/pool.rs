//! Max and average pooling over NHWC tensors.
//!
//! Padded positions never participate: max pooling ignores them and average
//! pooling divides by the number of in-bounds elements.

use super::conv::{Geometry, Window};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Returns the pooled tensor and, per output element, the flat input index
/// of the selected maximum.
pub fn max_pool_forward<T: Scalar>(input: &Tensor<T>, window: Window) -> Result<(Tensor<T>, Vec<usize>)> {
    let g = Geometry::new(input.shape(), window)?;
    let c = g.channels;
    let x = input.data();
    let mut out = Vec::with_capacity(g.batch * g.out_positions() * c);
    let mut argmax = Vec::with_capacity(out.capacity());
    let mut best = vec![(T::neg_infinity(), 0usize); c];
    for n in 0..g.batch {
        let base = n * g.in_h * g.in_w * c;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                best.fill((T::neg_infinity(), usize::MAX));
                for ki in 0..g.kh {
                    let Some(r) = g.source_row(oh, ki) else { continue };
                    for kj in 0..g.kw {
                        let Some(q) = g.source_col(ow, kj) else { continue };
                        let at = base + (r * g.in_w + q) * c;
                        for (ch, slot) in best.iter_mut().enumerate() {
                            let v = x[at + ch];
                            if slot.1 == usize::MAX || v > slot.0 {
                                *slot = (v, at + ch);
                            }
                        }
                    }
                }
                for &(v, idx) in &best {
                    out.push(v);
                    argmax.push(idx);
                }
            }
        }
    }
    Ok((Tensor::new(vec![g.batch, g.out_h, g.out_w, c], out)?, argmax))
}

pub fn max_pool_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        d[idx] = d[idx] + g;
    }
    dx
}

fn valid_count(g: &Geometry, oh: usize, ow: usize) -> usize {
    let rows = (0..g.kh).filter(|&ki| g.source_row(oh, ki).is_some()).count();
    let cols = (0..g.kw).filter(|&kj| g.source_col(ow, kj).is_some()).count();
    rows * cols
}

pub fn avg_pool_forward<T: Scalar>(input: &Tensor<T>, window: Window) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), window)?;
    let c = g.channels;
    let x = input.data();
    let mut out = vec![T::zero(); g.batch * g.out_positions() * c];
    for n in 0..g.batch {
        let base = n * g.in_h * g.in_w * c;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let o = ((n * g.out_h + oh) * g.out_w + ow) * c;
                let acc = &mut out[o..o + c];
                for ki in 0..g.kh {
                    let Some(r) = g.source_row(oh, ki) else { continue };
                    for kj in 0..g.kw {
                        let Some(q) = g.source_col(ow, kj) else { continue };
                        let at = base + (r * g.in_w + q) * c;
                        for (a, &v) in acc.iter_mut().zip(&x[at..at + c]) {
                            *a = *a + v;
                        }
                    }
                }
                let inv = T::one() / T::from_f64(valid_count(&g, oh, ow) as f64);
                acc.iter_mut().for_each(|a| *a = *a * inv);
            }
        }
    }
    Tensor::new(vec![g.batch, g.out_h, g.out_w, c], out)
}

pub fn avg_pool_backward<T: Scalar>(input_shape: &[usize], window: Window, dout: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Geometry::new(input_shape, window)?;
    let c = g.channels;
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    let dy = dout.data();
    for n in 0..g.batch {
        let base = n * g.in_h * g.in_w * c;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let o = ((n * g.out_h + oh) * g.out_w + ow) * c;
                let inv = T::one() / T::from_f64(valid_count(&g, oh, ow) as f64);
                for ki in 0..g.kh {
                    let Some(r) = g.source_row(oh, ki) else { continue };
                    for kj in 0..g.kw {
                        let Some(q) = g.source_col(ow, kj) else { continue };
                        let at = base + (r * g.in_w + q) * c;
                        for (dst, &gy) in d[at..at + c].iter_mut().zip(&dy[o..o + c]) {
                            *dst = *dst + gy * inv;
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}
