//! Layer descriptors and their forward/backward kernels.
//!
//! Activations use a leading row axis. Convolutions and pooling read it as
//! `(rows, channels, height, width)`; for video networks the rows are frames,
//! which is what [`Layer::TemporalMix`] mixes.

use crate::tensor::{Scalar, Tensor};
use crate::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolAxis {
    /// `(N, C, H, W) -> (N, C)`
    Spatial,
    /// `(N, ...) -> (1, ...)`
    Rows,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Dense map of each flattened row onto `out_shape` (per-row extents).
    Affine {
        out_shape: Vec<usize>,
    },
    /// 2-D convolution with replicate border, odd kernel, stride 1 or 2.
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Silu,
    /// Dense mixing along the row (time) axis, shared across all other axes.
    TemporalMix,
    MeanPool(PoolAxis),
    /// Concatenate on channels with activation `with` (0 is the network input,
    /// `i` is the output of layer `i - 1`).
    Concat {
        with: usize,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Affine { .. } => "affine",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Silu => "silu",
            Layer::TemporalMix => "temporal-mix",
            Layer::MeanPool(_) => "mean-pool",
            Layer::Concat { .. } => "concat",
        }
    }

    /// Output shape for the given input shape, plus the shapes of the layer's
    /// parameters (weight first, then bias) and their fan-in.
    pub(crate) fn infer(&self, index: usize, input: &[usize], acts: &[Vec<usize>]) -> Result<(Vec<usize>, Vec<Vec<usize>>, usize)> {
        let err = |detail: String| NnError::Layer {
            layer: index,
            kind: self.kind(),
            detail,
        };
        match self {
            Layer::Affine { out_shape } => {
                if input.is_empty() || out_shape.is_empty() || out_shape.len() + 1 > 4 {
                    return Err(err(format!("cannot map {input:?} to rows of {out_shape:?}")));
                }
                let din: usize = input[1..].iter().product();
                let dout: usize = out_shape.iter().product();
                let mut out = vec![input[0]];
                out.extend_from_slice(out_shape);
                Ok((out, vec![vec![dout, din], vec![dout]], din))
            }
            Layer::Conv2d { out_channels, kernel, stride } => {
                if input.len() != 4 {
                    return Err(err(format!("expected (N, C, H, W), got {input:?}")));
                }
                if kernel % 2 == 0 || !(1..=2).contains(stride) {
                    return Err(err(format!("unsupported kernel {kernel} / stride {stride}")));
                }
                let (c, h, w) = (input[1], input[2], input[3]);
                let ho = conv_out_extent(h, *kernel, *stride);
                let wo = conv_out_extent(w, *kernel, *stride);
                Ok((
                    vec![input[0], *out_channels, ho, wo],
                    vec![vec![*out_channels, c, *kernel, *kernel], vec![*out_channels]],
                    c * kernel * kernel,
                ))
            }
            Layer::Silu => Ok((input.to_vec(), vec![], 0)),
            Layer::TemporalMix => {
                if input.is_empty() {
                    return Err(err("scalar input".into()));
                }
                let n = input[0];
                Ok((input.to_vec(), vec![vec![n, n], vec![n]], n))
            }
            Layer::MeanPool(PoolAxis::Spatial) => {
                if input.len() != 4 {
                    return Err(err(format!("expected (N, C, H, W), got {input:?}")));
                }
                Ok((vec![input[0], input[1]], vec![], 0))
            }
            Layer::MeanPool(PoolAxis::Rows) => {
                if input.is_empty() {
                    return Err(err("scalar input".into()));
                }
                let mut out = input.to_vec();
                out[0] = 1;
                Ok((out, vec![], 0))
            }
            Layer::Concat { with } => {
                let other = acts.get(*with).ok_or_else(|| err(format!("activation {with} does not precede this layer")))?;
                if input.len() < 2 || other.len() != input.len() || other[0] != input[0] || other[2..] != input[2..] {
                    return Err(err(format!("cannot concat {input:?} with {other:?}")));
                }
                let mut out = input.to_vec();
                out[1] += other[1];
                Ok((out, vec![], 0))
            }
        }
    }
}

pub(crate) fn conv_out_extent(n: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (n + 2 * pad - kernel) / stride + 1
}

#[inline]
/// Dot product with eight interleaved accumulators, combined in a fixed
/// order so results do not depend on the caller.
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

pub(crate) fn affine_forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, out_shape: &[usize]) -> Tensor<F> {
    let n = x.shape()[0];
    let (dout, din) = (w.shape()[0], w.shape()[1]);
    let mut y = Tensor::zeros(out_shape);
    let yd = y.data_mut();
    for r in 0..n {
        let xr = &x.data()[r * din..(r + 1) * din];
        for o in 0..dout {
            yd[r * dout + o] = b.data()[o] + dot(&w.data()[o * din..(o + 1) * din], xr);
        }
    }
    y
}

pub(crate) fn affine_backward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, g: &Tensor<F>, dw: &mut Tensor<F>, db: &mut Tensor<F>) -> Tensor<F> {
    let n = x.shape()[0];
    let (dout, din) = (w.shape()[0], w.shape()[1]);
    let mut dx = Tensor::zeros(x.shape());
    for r in 0..n {
        let xr = &x.data()[r * din..(r + 1) * din];
        for o in 0..dout {
            let go = g.data()[r * dout + o];
            if go == F::zero() {
                continue;
            }
            db.data_mut()[o] = db.data()[o] + go;
            axpy(go, xr, &mut dw.data_mut()[o * din..(o + 1) * din]);
            axpy(go, &w.data()[o * din..(o + 1) * din], &mut dx.data_mut()[r * din..(r + 1) * din]);
        }
    }
    dx
}

/// Flat source offsets (within one input row) of every patch element, one
/// patch per output position, with replicate-border clamping.
fn patch_indices(c: usize, h: usize, w: usize, kernel: usize, stride: usize) -> Vec<usize> {
    let pad = kernel as isize / 2;
    let (ho, wo) = (conv_out_extent(h, kernel, stride), conv_out_extent(w, kernel, stride));
    let mut idx = Vec::with_capacity(ho * wo * c * kernel * kernel);
    for oy in 0..ho {
        for ox in 0..wo {
            for ci in 0..c {
                for ky in 0..kernel {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    let iy = iy.clamp(0, h as isize - 1) as usize;
                    for kx in 0..kernel {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        let ix = ix.clamp(0, w as isize - 1) as usize;
                        idx.push((ci * h + iy) * w + ix);
                    }
                }
            }
        }
    }
    idx
}

pub(crate) fn conv_forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, stride: usize) -> Tensor<F> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let (ho, wo) = (conv_out_extent(h, k, stride), conv_out_extent(wd, k, stride));
    let plen = c * k * k;
    let idx = patch_indices(c, h, wd, k, stride);
    let mut y = Tensor::zeros(&[n, co, ho, wo]);
    let mut patch = vec![F::zero(); plen];
    let (irow, orow) = (c * h * wd, co * ho * wo);
    for r in 0..n {
        let xr = &x.data()[r * irow..(r + 1) * irow];
        let yr = &mut y.data_mut()[r * orow..(r + 1) * orow];
        for p in 0..ho * wo {
            for (dst, &src) in patch.iter_mut().zip(&idx[p * plen..(p + 1) * plen]) {
                *dst = xr[src];
            }
            for o in 0..co {
                yr[o * ho * wo + p] = b.data()[o] + dot(&w.data()[o * plen..(o + 1) * plen], &patch);
            }
        }
    }
    y
}

pub(crate) fn conv_backward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, g: &Tensor<F>, stride: usize, dw: &mut Tensor<F>, db: &mut Tensor<F>) -> Tensor<F> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let (ho, wo) = (g.shape()[2], g.shape()[3]);
    let plen = c * k * k;
    let idx = patch_indices(c, h, wd, k, stride);
    let mut dx = Tensor::zeros(x.shape());
    let mut patch = vec![F::zero(); plen];
    let mut dpatch = vec![F::zero(); plen];
    let (irow, orow) = (c * h * wd, co * ho * wo);
    for r in 0..n {
        let xr = &x.data()[r * irow..(r + 1) * irow];
        let gr = &g.data()[r * orow..(r + 1) * orow];
        for p in 0..ho * wo {
            let pidx = &idx[p * plen..(p + 1) * plen];
            for (dst, &src) in patch.iter_mut().zip(pidx) {
                *dst = xr[src];
            }
            dpatch.fill(F::zero());
            for o in 0..co {
                let go = gr[o * ho * wo + p];
                if go == F::zero() {
                    continue;
                }
                db.data_mut()[o] = db.data()[o] + go;
                axpy(go, &patch, &mut dw.data_mut()[o * plen..(o + 1) * plen]);
                axpy(go, &w.data()[o * plen..(o + 1) * plen], &mut dpatch);
            }
            let dxr = &mut dx.data_mut()[r * irow..(r + 1) * irow];
            for (&src, &d) in pidx.iter().zip(&dpatch) {
                dxr[src] = dxr[src] + d;
            }
        }
    }
    dx
}

#[inline]
fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub(crate) fn silu_forward<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v * sigmoid(v))
}

pub(crate) fn silu_backward<F: Scalar>(x: &Tensor<F>, g: &Tensor<F>) -> Tensor<F> {
    x.zip_map(g, |v, gv| {
        let s = sigmoid(v);
        gv * s * (F::one() + v * (F::one() - s))
    })
    .expect("silu gradient shape")
}

pub(crate) fn temporal_forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let n = x.shape()[0];
    let r = x.row_len();
    let mut y = Tensor::zeros(x.shape());
    for o in 0..n {
        let yr = &mut y.data_mut()[o * r..(o + 1) * r];
        yr.fill(b.data()[o]);
        for i in 0..n {
            axpy(w.data()[o * n + i], x.row(i), yr);
        }
    }
    y
}

pub(crate) fn temporal_backward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, g: &Tensor<F>, dw: &mut Tensor<F>, db: &mut Tensor<F>) -> Tensor<F> {
    let n = x.shape()[0];
    let r = x.row_len();
    let mut dx = Tensor::zeros(x.shape());
    for o in 0..n {
        let gr = g.row(o);
        let gsum: f64 = gr.iter().map(|v| v.as_f64()).sum();
        db.data_mut()[o] = db.data()[o] + F::from_f64(gsum);
        for i in 0..n {
            dw.data_mut()[o * n + i] = dw.data()[o * n + i] + dot(gr, x.row(i));
            axpy(w.data()[o * n + i], gr, &mut dx.data_mut()[i * r..(i + 1) * r]);
        }
    }
    dx
}

pub(crate) fn pool_forward<F: Scalar>(x: &Tensor<F>, axis: PoolAxis) -> Tensor<F> {
    match axis {
        PoolAxis::Spatial => {
            let (n, c) = (x.shape()[0], x.shape()[1]);
            let hw = x.shape()[2] * x.shape()[3];
            let mut y = Tensor::zeros(&[n, c]);
            for (j, out) in y.data_mut().iter_mut().enumerate() {
                let s: f64 = x.data()[j * hw..(j + 1) * hw].iter().map(|v| v.as_f64()).sum();
                *out = F::from_f64(s / hw as f64);
            }
            y
        }
        PoolAxis::Rows => {
            let n = x.shape()[0];
            let r = x.row_len();
            let mut shape = x.shape().to_vec();
            shape[0] = 1;
            let mut acc = vec![0.0f64; r];
            for i in 0..n {
                for (a, v) in acc.iter_mut().zip(x.row(i)) {
                    *a += v.as_f64();
                }
            }
            let data = acc.into_iter().map(|s| F::from_f64(s / n as f64)).collect();
            Tensor::from_vec(&shape, data).expect("pool shape")
        }
    }
}

pub(crate) fn pool_backward<F: Scalar>(x_shape: &[usize], g: &Tensor<F>, axis: PoolAxis) -> Tensor<F> {
    let mut dx = Tensor::zeros(x_shape);
    match axis {
        PoolAxis::Spatial => {
            let hw = x_shape[2] * x_shape[3];
            let inv = F::from_f64(1.0 / hw as f64);
            for (j, &gv) in g.data().iter().enumerate() {
                dx.data_mut()[j * hw..(j + 1) * hw].fill(gv * inv);
            }
        }
        PoolAxis::Rows => {
            let n = x_shape[0];
            let r = dx.row_len();
            let inv = F::from_f64(1.0 / n as f64);
            for i in 0..n {
                for (d, &gv) in dx.data_mut()[i * r..(i + 1) * r].iter_mut().zip(g.data()) {
                    *d = gv * inv;
                }
            }
        }
    }
    dx
}

/// Split a channel-concatenated gradient back into its two sources.
pub(crate) fn concat_backward<F: Scalar>(g: &Tensor<F>, a_shape: &[usize], b_shape: &[usize]) -> (Tensor<F>, Tensor<F>) {
    let n = g.shape()[0];
    let mut ga = Tensor::zeros(a_shape);
    let mut gb = Tensor::zeros(b_shape);
    let (ra, rb) = (ga.row_len(), gb.row_len());
    for i in 0..n {
        let gr = g.row(i);
        ga.data_mut()[i * ra..(i + 1) * ra].copy_from_slice(&gr[..ra]);
        gb.data_mut()[i * rb..(i + 1) * rb].copy_from_slice(&gr[ra..]);
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_extents() {
        assert_eq!(conv_out_extent(4, 3, 1), 4);
        assert_eq!(conv_out_extent(4, 3, 2), 2);
        assert_eq!(conv_out_extent(32, 3, 2), 16);
        assert_eq!(conv_out_extent(5, 3, 2), 3);
        assert_eq!(conv_out_extent(4, 1, 1), 4);
    }

    #[test]
    fn replicate_border_repeats_edge_pixels() {
        // 1x1 image, 3x3 kernel of ones: every tap reads the single pixel.
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv_forward(&x, &w, &b, 1);
        assert_eq!(y.data(), &[18.0]);
    }

    #[test]
    fn spatial_pool_averages() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![1., 3., 10., 20.]).unwrap();
        assert_eq!(pool_forward(&x, PoolAxis::Spatial).data(), &[2.0, 15.0]);
    }
}
