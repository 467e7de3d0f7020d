//! Fixed linear block-Haar codec: 8x8 pixel blocks to 4 latent channels.
//!
//! Each block is split into four 4x4 quadrants with means `a` (top-left),
//! `b` (top-right), `c` (bottom-left) and `d` (bottom-right). The latent
//! channels are the block mean and the horizontal, vertical and diagonal
//! Haar differences of those quadrant means, each normalized by 4.
//!
//! Decoding rebuilds the quadrant means exactly and spreads them over the
//! block with a bilinear ramp through the quadrant centers, which keeps each
//! quadrant's mean intact. `decode` followed by `encode` is therefore the
//! identity on latents, and `decode . encode` is a projection on frames.

use echosyn_nn::Tensor;

use crate::error::{CoreError, Result};
use crate::par;

pub const BLOCK: usize = 8;
pub const LATENT_CHANNELS: usize = 4;

/// Anything that maps single-channel frames to latent images and back.
pub trait Codec: Sync {
    fn encode_frame(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>>;
    fn decode_frame(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>>;

    fn encode_video(&self, video: &Tensor<f32>) -> Result<Tensor<f32>> {
        map_frames(video, |f| self.encode_frame(f))
    }

    fn decode_video(&self, latents: &Tensor<f32>) -> Result<Tensor<f32>> {
        map_frames(latents, |f| self.decode_frame(f))
    }
}

/// Apply `f` to every frame of a (T, C, H, W) tensor and restack.
pub fn map_frames(video: &Tensor<f32>, f: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>> + Sync + Send) -> Result<Tensor<f32>> {
    if video.rank() != 4 || video.shape()[0] == 0 {
        return Err(CoreError::Shape(format!("expected a non-empty (T, C, H, W) video, got {:?}", video.shape())));
    }
    let s = video.shape();
    let frame_shape = [s[1], s[2], s[3]];
    let frames = par::try_map_range(s[0], |i| {
        let frame = Tensor::from_vec(&frame_shape, video.row(i).to_vec())?;
        f(&frame).map_err(|e| CoreError::Frame { index: i, source: Box::new(e) })
    })?;
    let out_shape = frames[0].shape().to_vec();
    let mut data = Vec::with_capacity(s[0] * frames[0].numel());
    for fr in frames {
        data.extend_from_slice(fr.data());
    }
    let mut shape = vec![s[0]];
    shape.extend(out_shape);
    Ok(Tensor::from_vec(&shape, data)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HaarCodec;

fn frame_extents(frame: &Tensor<f32>) -> Result<(usize, usize)> {
    match frame.shape() {
        [h, w] => Ok((*h, *w)),
        [1, h, w] => Ok((*h, *w)),
        other => Err(CoreError::Shape(format!("expected a single-channel frame, got {other:?}"))),
    }
}

/// Bilinear weights for pixel offset `p` in 0..8 along one axis: weight of
/// the second quadrant center (5.5) against the first (1.5), extrapolated
/// past the centers.
fn ramp(p: usize) -> f64 {
    (p as f64 - 1.5) / 4.0
}

impl Codec for HaarCodec {
    fn encode_frame(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (h, w) = frame_extents(frame)?;
        if h == 0 || w == 0 || h % BLOCK != 0 || w % BLOCK != 0 {
            return Err(CoreError::Shape(format!("frame {h}x{w} is not a positive multiple of {BLOCK}; pad it first")));
        }
        let (lh, lw) = (h / BLOCK, w / BLOCK);
        let px = frame.data();
        let mut out = vec![0f32; LATENT_CHANNELS * lh * lw];
        let plane = lh * lw;
        for by in 0..lh {
            for bx in 0..lw {
                let mut q = [0f64; 4];
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        let idx = (y >= 4) as usize * 2 + (x >= 4) as usize;
                        q[idx] += px[(by * BLOCK + y) * w + bx * BLOCK + x] as f64;
                    }
                }
                let [a, b, c, d] = q.map(|s| s / 16.0);
                let at = by * lw + bx;
                out[at] = ((a + b + c + d) / 4.0) as f32;
                out[plane + at] = ((b + d - a - c) / 4.0) as f32;
                out[2 * plane + at] = ((c + d - a - b) / 4.0) as f32;
                out[3 * plane + at] = ((a + d - b - c) / 4.0) as f32;
            }
        }
        Ok(Tensor::from_vec(&[LATENT_CHANNELS, lh, lw], out)?)
    }

    fn decode_frame(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = latent.shape();
        if s.len() != 3 || s[0] != LATENT_CHANNELS || s[1] == 0 || s[2] == 0 {
            return Err(CoreError::Shape(format!("expected a ({LATENT_CHANNELS}, h, w) latent, got {s:?}")));
        }
        let (lh, lw) = (s[1], s[2]);
        let (h, w) = (lh * BLOCK, lw * BLOCK);
        let plane = lh * lw;
        let l = latent.data();
        let mut out = vec![0f32; h * w];
        for by in 0..lh {
            for bx in 0..lw {
                let at = by * lw + bx;
                let (m, hz, v, dg) = (l[at] as f64, l[plane + at] as f64, l[2 * plane + at] as f64, l[3 * plane + at] as f64);
                let a = m - hz - v + dg;
                let b = m + hz - v - dg;
                let c = m - hz + v - dg;
                let d = m + hz + v + dg;
                for y in 0..BLOCK {
                    let ty = ramp(y);
                    for x in 0..BLOCK {
                        let tx = ramp(x);
                        let upper = a + (b - a) * tx;
                        let lower = c + (d - c) * tx;
                        out[(by * BLOCK + y) * w + bx * BLOCK + x] = (upper + (lower - upper) * ty) as f32;
                    }
                }
            }
        }
        Ok(Tensor::from_vec(&[1, h, w], out)?)
    }
}

/// Record of a replicate pad, sufficient to undo it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadCrop {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Replicate-pad the last two axes of a (C, H, W) tensor to the target
/// extents. An odd surplus puts the extra row/column at the bottom/right.
pub fn pad_replicate(x: &Tensor<f32>, target_h: usize, target_w: usize) -> Result<(Tensor<f32>, PadCrop)> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(CoreError::Shape(format!("expected (C, H, W), got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if target_h < h || target_w < w {
        return Err(CoreError::InvalidArgument(format!(
            "pad target {target_h}x{target_w} is smaller than input {h}x{w}"
        )));
    }
    let top = (target_h - h) / 2;
    let left = (target_w - w) / 2;
    let src = x.data();
    let mut out = Vec::with_capacity(c * target_h * target_w);
    for ch in 0..c {
        for y in 0..target_h {
            let sy = y.saturating_sub(top).min(h - 1);
            for xx in 0..target_w {
                let sx = xx.saturating_sub(left).min(w - 1);
                out.push(src[(ch * h + sy) * w + sx]);
            }
        }
    }
    let crop = PadCrop {
        top,
        left,
        height: h,
        width: w,
    };
    Ok((Tensor::from_vec(&[c, target_h, target_w], out)?, crop))
}

pub fn crop(x: &Tensor<f32>, crop: PadCrop) -> Result<Tensor<f32>> {
    let s = x.shape();
    if s.len() != 3 || crop.top + crop.height > s[1] || crop.left + crop.width > s[2] {
        return Err(CoreError::Shape(format!("cannot crop {crop:?} from {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = x.data();
    let mut out = Vec::with_capacity(c * crop.height * crop.width);
    for ch in 0..c {
        for y in 0..crop.height {
            let row = (ch * h + crop.top + y) * w + crop.left;
            out.extend_from_slice(&src[row..row + crop.width]);
        }
    }
    Ok(Tensor::from_vec(&[c, crop.height, crop.width], out)?)
}

/// Per-channel affine normalization of latents to roughly unit variance,
/// fitted on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LatentStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Fit over a set of (T, C, H, W) latent videos or (C, H, W) images.
    pub fn fit<'a>(latents: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for t in latents {
            let s = t.shape();
            let (c, inner) = match s.len() {
                3 => (s[0], s[1] * s[2]),
                4 => (s[1], s[2] * s[3]),
                _ => return Err(CoreError::Shape(format!("expected rank 3 or 4 latents, got {s:?}"))),
            };
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            } else if sum.len() != c {
                return Err(CoreError::Shape(format!("channel count changed to {c}")));
            }
            for (i, v) in t.data().iter().enumerate() {
                let ch = (i / inner) % c;
                sum[ch] += *v as f64;
                sq[ch] += (*v as f64).powi(2);
            }
            count += t.numel() / c;
        }
        if count < 2 {
            return Err(CoreError::Degenerate("latent statistics need at least two values per channel".into()));
        }
        let n = count as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| ((q / n - (s / n).powi(2)).max(0.0).sqrt().max(1e-4)) as f32)
            .collect();
        Ok(Self { mean, std })
    }

    /// Statistics of differences between two frames of the same video:
    /// zero mean, and per channel the standard deviation of `x_f - x_g` over
    /// frame pairs, which is `sqrt(2)` times the pooled within-video
    /// standard deviation.
    pub fn fit_residual<'a>(videos: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut acc: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for v in videos {
            let s = v.shape();
            if s.len() != 4 {
                return Err(CoreError::Shape(format!("expected (T, C, H, W) videos, got {s:?}")));
            }
            let (t, c, inner) = (s[0], s[1], s[2] * s[3]);
            if acc.is_empty() {
                acc = vec![0.0; c];
            } else if acc.len() != c {
                return Err(CoreError::Shape(format!("channel count changed to {c}")));
            }
            if t < 2 {
                continue;
            }
            let d = v.data();
            for ch in 0..c {
                for p in 0..inner {
                    let at = |f: usize| d[(f * c + ch) * inner + p] as f64;
                    let mean = (0..t).map(at).sum::<f64>() / t as f64;
                    acc[ch] += (0..t).map(|f| (at(f) - mean).powi(2)).sum::<f64>();
                }
            }
            count += t * inner;
        }
        if count == 0 {
            return Err(CoreError::Degenerate("residual statistics need videos with at least two frames".into()));
        }
        let std = acc.iter().map(|a| ((2.0 * a / count as f64).sqrt().max(1e-4)) as f32).collect();
        Ok(Self {
            mean: vec![0.0; acc.len()],
            std,
        })
    }

    fn apply(&self, t: &Tensor<f32>, forward: bool) -> Result<Tensor<f32>> {
        let s = t.shape();
        let (c, inner) = match s.len() {
            3 => (s[0], s[1] * s[2]),
            4 => (s[1], s[2] * s[3]),
            _ => return Err(CoreError::Shape(format!("expected rank 3 or 4 latents, got {s:?}"))),
        };
        if c != self.mean.len() {
            return Err(CoreError::Shape(format!("stats cover {} channels, latent has {c}", self.mean.len())));
        }
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / inner) % c;
            *v = if forward {
                (*v - self.mean[ch]) / self.std[ch]
            } else {
                *v * self.std[ch] + self.mean[ch]
            };
        }
        Ok(out)
    }

    pub fn normalize(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.apply(t, true)
    }

    pub fn denormalize(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.apply(t, false)
    }

    pub fn to_records(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        let c = self.mean.len();
        vec![
            (format!("{prefix}.mean"), Tensor::from_vec(&[c], self.mean.clone()).expect("length")),
            (format!("{prefix}.std"), Tensor::from_vec(&[c], self.std.clone()).expect("length")),
        ]
    }

    pub fn from_records(records: &[(String, Tensor<f32>)], prefix: &str) -> Result<Self> {
        let find = |suffix: &str| {
            let key = format!("{prefix}.{suffix}");
            records
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.data().to_vec())
                .ok_or_else(|| CoreError::InvalidArgument(format!("checkpoint has no `{key}` record")))
        };
        let mean = find("mean")?;
        let std = find("std")?;
        if mean.len() != std.len() || std.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(CoreError::InvalidArgument(format!("invalid `{prefix}` latent statistics")));
        }
        Ok(Self { mean, std })
    }
}
