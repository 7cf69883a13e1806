//! 2-D cross-correlation through im2col + GEMM.

use std::ops::Range;
use serde::{Deserialize, Serialize};

use super::{gemm, MatRef};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Upper bound on the im2col scratch buffer, in elements (sized to stay in L2).
const COLS_BUDGET: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Spatial window shared by convolutions and pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl Window {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: Padding) -> Self {
        Self { kernel, stride, padding }
    }
}

/// Output length and leading pad along one axis.
///
/// `same`: `ceil(input / stride)`, padding split with the extra element at
/// the end. `valid`: `floor((input - kernel) / stride) + 1`.
pub fn output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return Err(TensorError::ShapeMismatch("kernel and stride must be positive".into()));
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if kernel > input {
                return Err(TensorError::KernelExceedsInput { kernel, input });
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

/// Resolved index arithmetic for one NHWC window operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn new(input_shape: &[usize], window: Window) -> Result<Self> {
        let [batch, in_h, in_w, channels] = input_shape else {
            return Err(TensorError::ShapeMismatch(format!(
                "expected NHWC input, got shape {input_shape:?}"
            )));
        };
        let (kh, kw) = window.kernel;
        let (sh, sw) = window.stride;
        let (out_h, pad_top) = output_extent(*in_h, kh, sh, window.padding)?;
        let (out_w, pad_left) = output_extent(*in_w, kw, sw, window.padding)?;
        Ok(Self {
            batch: *batch,
            in_h: *in_h,
            in_w: *in_w,
            channels: *channels,
            out_h,
            out_w,
            kh,
            kw,
            sh,
            sw,
            pad_top,
            pad_left,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.channels
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input row/column for output position `o` and kernel offset `k`, if inside.
    #[inline]
    pub fn source_row(&self, oh: usize, ki: usize) -> Option<usize> {
        (oh * self.sh + ki).checked_sub(self.pad_top).filter(|&r| r < self.in_h)
    }

    #[inline]
    pub fn source_col(&self, ow: usize, kj: usize) -> Option<usize> {
        (ow * self.sw + kj).checked_sub(self.pad_left).filter(|&c| c < self.in_w)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1
    }
}

/// Output rows `rows` (flattened `n, oh, ow`) as patch rows of `cols`.
fn im2col<T: Scalar>(input: &[T], g: &Geometry, rows: Range<usize>, cols: &mut [T]) {
    let c = g.channels;
    let plen = g.patch_len();
    let positions = g.out_positions();
    for (i, row) in rows.enumerate() {
        let (n, pos) = (row / positions, row % positions);
        let (oh, ow) = (pos / g.out_w, pos % g.out_w);
        let base = n * g.in_h * g.in_w * c;
        let dst_row = &mut cols[i * plen..(i + 1) * plen];
        for ki in 0..g.kh {
            let src_r = g.source_row(oh, ki);
            for kj in 0..g.kw {
                let dst = &mut dst_row[(ki * g.kw + kj) * c..(ki * g.kw + kj + 1) * c];
                match (src_r, g.source_col(ow, kj)) {
                    (Some(r), Some(q)) => {
                        let at = base + (r * g.in_w + q) * c;
                        dst.copy_from_slice(&input[at..at + c]);
                    }
                    _ => dst.fill(T::zero()),
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, rows: Range<usize>, dinput: &mut [T]) {
    let c = g.channels;
    let plen = g.patch_len();
    let positions = g.out_positions();
    for (i, row) in rows.enumerate() {
        let (n, pos) = (row / positions, row % positions);
        let (oh, ow) = (pos / g.out_w, pos % g.out_w);
        let base = n * g.in_h * g.in_w * c;
        let src_row = &cols[i * plen..(i + 1) * plen];
        for ki in 0..g.kh {
            let Some(r) = g.source_row(oh, ki) else { continue };
            for kj in 0..g.kw {
                let Some(q) = g.source_col(ow, kj) else { continue };
                let at = base + (r * g.in_w + q) * c;
                let src = &src_row[(ki * g.kw + kj) * c..(ki * g.kw + kj + 1) * c];
                for (d, &s) in dinput[at..at + c].iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
    }
}

/// Kernel layout `[kh, kw, cin, cout]`; returns the geometry and output channels.
pub fn conv_geometry(
    input_shape: &[usize],
    kernel_shape: &[usize],
    stride: (usize, usize),
    padding: Padding,
) -> Result<(Geometry, usize)> {
    let [kh, kw, cin, cout] = kernel_shape else {
        return Err(TensorError::ShapeMismatch(format!(
            "conv kernel must be [kh, kw, cin, cout], got {kernel_shape:?}"
        )));
    };
    let g = Geometry::new(input_shape, Window::new((*kh, *kw), stride, padding))?;
    if g.channels != *cin {
        return Err(TensorError::ShapeMismatch(format!(
            "conv input has {} channels but kernel expects {cin}",
            g.channels
        )));
    }
    Ok((g, *cout))
}

/// Inputs with at most this many channels use the direct loop instead of
/// im2col, which would be memory-bound.
const DIRECT_MAX_CIN: usize = 4;

fn is_direct(g: &Geometry) -> bool {
    g.channels <= DIRECT_MAX_CIN && !g.is_pointwise()
}

/// Visits every in-bounds kernel tap as `(out_px, tap, in_px, count)`:
/// `count` consecutive output columns starting at `out_px` read input
/// pixels `in_px, in_px + sw, ...`.
#[inline(always)]
fn for_each_tap_run(g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize)) {
    for n in 0..g.batch {
        for oh in 0..g.out_h {
            let out_row = (n * g.out_h + oh) * g.out_w;
            for ki in 0..g.kh {
                let Some(r) = g.source_row(oh, ki) else { continue };
                let in_row = (n * g.in_h + r) * g.in_w;
                for kj in 0..g.kw {
                    // ow * sw + kj - pad_left in [0, in_w)
                    let lo = g.pad_left.saturating_sub(kj).div_ceil(g.sw);
                    let hi = (g.in_w + g.pad_left).saturating_sub(kj).div_ceil(g.sw).min(g.out_w);
                    if lo >= hi {
                        continue;
                    }
                    let q = lo * g.sw + kj - g.pad_left;
                    f(out_row + lo, ki * g.kw + kj, in_row + q, hi - lo);
                }
            }
        }
    }
}

/// `acc += a * x` over rows of eight lanes, with a scalar tail.
#[inline(always)]
fn axpy<T: Scalar>(acc: &mut [T], a: T, x: &[T]) {
    let (d8, d_tail) = acc.as_chunks_mut::<8>();
    let (x8, x_tail) = x.as_chunks::<8>();
    for (d, v) in d8.iter_mut().zip(x8) {
        for j in 0..8 {
            d[j] = d[j] + a * v[j];
        }
    }
    for (d, &v) in d_tail.iter_mut().zip(x_tail) {
        *d = *d + a * v;
    }
}

/// Output-row chunks whose im2col buffer fits the budget.
fn row_chunks(g: &Geometry) -> impl Iterator<Item = Range<usize>> {
    let total = g.batch * g.out_positions();
    let step = (COLS_BUDGET / g.patch_len().max(1)).max(1);
    (0..total).step_by(step).map(move |r| r..(r + step).min(total))
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor<T>> {
    let (g, cout) = conv_geometry(input.shape(), kernel.shape(), stride, padding)?;
    let plen = g.patch_len();
    let positions = g.out_positions();
    let mut out = vec![T::zero(); g.batch * positions * cout];
    let kmat = MatRef::row_major(kernel.data(), plen, cout);
    if g.is_pointwise() {
        let rows = g.batch * positions;
        gemm(MatRef::row_major(input.data(), rows, plen), kmat, &mut out, false);
    } else if is_direct(&g) {
        let (x, k, cin) = (input.data(), kernel.data(), g.channels);
        let sw = g.sw;
        for_each_tap_run(&g, |o, tap, i, count| {
            for ci in 0..cin {
                let krow = &k[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
                for j in 0..count {
                    let at = (o + j) * cout;
                    axpy(&mut out[at..at + cout], x[(i + j * sw) * cin + ci], krow);
                }
            }
        });
    } else {
        let mut cols = Vec::new();
        for range in row_chunks(&g) {
            let rows = range.len();
            cols.resize(rows * plen, T::zero());
            let dst = &mut out[range.start * cout..range.end * cout];
            im2col(input.data(), &g, range, &mut cols);
            gemm(MatRef::row_major(&cols, rows, plen), kmat, dst, false);
        }
    }
    Tensor::new(vec![g.batch, g.out_h, g.out_w, cout], out)
}

/// Gradients of a convolution: `(d input, d kernel)`. The input gradient is
/// skipped when `need_input` is false.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: (usize, usize),
    padding: Padding,
    dout: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let (g, cout) = conv_geometry(input.shape(), kernel.shape(), stride, padding)?;
    let plen = g.patch_len();
    let positions = g.out_positions();
    let kmat = MatRef::row_major(kernel.data(), plen, cout);
    let mut dkernel = vec![T::zero(); plen * cout];
    let mut dinput = need_input.then(|| vec![T::zero(); input.len()]);

    if g.is_pointwise() {
        let rows = g.batch * positions;
        let x = MatRef::row_major(input.data(), rows, plen);
        let dy = MatRef::row_major(dout.data(), rows, cout);
        gemm(x.t(), dy, &mut dkernel, false);
        if let Some(dx) = dinput.as_mut() {
            gemm(dy, kmat.t(), dx, false);
        }
    } else if is_direct(&g) {
        let (x, k, dy, cin) = (input.data(), kernel.data(), dout.data(), g.channels);
        let sw = g.sw;
        for_each_tap_run(&g, |o, tap, i, count| {
            for ci in 0..cin {
                let at = (tap * cin + ci) * cout;
                let dk = &mut dkernel[at..at + cout];
                for j in 0..count {
                    let dy_row = &dy[(o + j) * cout..(o + j + 1) * cout];
                    axpy(dk, x[(i + j * sw) * cin + ci], dy_row);
                }
                if let Some(dx) = dinput.as_mut() {
                    let krow = &k[at..at + cout];
                    for j in 0..count {
                        let dy_row = &dy[(o + j) * cout..(o + j + 1) * cout];
                        let dot = krow.iter().zip(dy_row).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        let xi = (i + j * sw) * cin + ci;
                        dx[xi] = dx[xi] + dot;
                    }
                }
            }
        });
    } else {
        let mut cols = Vec::new();
        for range in row_chunks(&g) {
            let rows = range.len();
            cols.resize(rows * plen, T::zero());
            let dy = MatRef::row_major(&dout.data()[range.start * cout..range.end * cout], rows, cout);
            im2col(input.data(), &g, range.clone(), &mut cols);
            gemm(MatRef::row_major(&cols, rows, plen).t(), dy, &mut dkernel, true);
            if let Some(dx) = dinput.as_mut() {
                gemm(dy, kmat.t(), &mut cols, false);
                col2im(&cols, &g, range, dx);
            }
        }
    }
    let dinput = dinput.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?;
    Ok((dinput, Tensor::new(kernel.shape().to_vec(), dkernel)?))
}
