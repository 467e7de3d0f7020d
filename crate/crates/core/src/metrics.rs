//! Generative and reconstruction metrics.
//!
//! Fréchet distances are computed between Gaussian fits of features from a
//! fixed, seeded random conv network. The numbers are only comparable between
//! reports that carry the same extractor hash.

use std::fmt;

use echosyn_nn::{Layer, Network, PoolAxis, Tensor};
use rand::Rng;

use crate::error::{ensure, CoreError, Result};
use crate::{hash, par, rng};

pub const JITTER: f64 = 1e-8;
pub const IS_SPLITS: usize = 10;
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;

/// Row-major dense symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = *v;
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    fn symmetrize(mut self) -> Self {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                let m = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = m;
                self.data[j * n + i] = m;
            }
        }
        self
    }
}

/// Cyclic Jacobi eigendecomposition. Returns eigenvalues and the matrix whose
/// columns are the matching eigenvectors.
pub fn jacobi_eigen(m: &SymMatrix) -> (Vec<f64>, SymMatrix) {
    let n = m.n;
    let mut a = m.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off.sqrt() <= 1e-12 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), SymMatrix { n, data: v })
}

/// Square root of a symmetric PSD matrix; negative eigenvalues clamp to 0.
pub fn sqrtm_psd(m: &SymMatrix) -> SymMatrix {
    let (w, v) = jacobi_eigen(m);
    let n = m.n;
    let mut out = SymMatrix::zeros(n);
    for (k, wk) in w.iter().enumerate() {
        let s = wk.max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = v.get(i, k) * s;
            for j in 0..n {
                out.data[i * n + j] += vik * v.get(j, k);
            }
        }
    }
    out.symmetrize()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    pub n: usize,
}

/// Sample mean and unbiased covariance (plus `JITTER * I`) of feature rows.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats> {
    ensure(features.len() >= 2, || format!("a Gaussian fit needs at least 2 rows, got {}", features.len()))?;
    let d = features[0].len();
    ensure(d >= 1 && features.iter().all(|f| f.len() == d), || "feature rows differ in length".into())?;
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = SymMatrix::zeros(d);
    for f in features {
        for i in 0..d {
            let a = f[i] - mean[i];
            for j in i..d {
                cov.data[i * d + j] += a * (f[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.data[i * d + j] / (n - 1.0) + if i == j { JITTER } else { 0.0 };
            cov.data[i * d + j] = v;
            cov.data[j * d + i] = v;
        }
    }
    Ok(GaussianStats { mean, cov, n: features.len() })
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(CoreError::Shape(format!("feature dims differ: {} vs {}", a.mean.len(), b.mean.len())));
    }
    let mu: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = sqrtm_psd(&a.cov);
    let inner = sa.matmul(&b.cov).matmul(&sa).symmetrize();
    let cross = sqrtm_psd(&inner).trace();
    Ok((mu + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

/// Fixed random conv network over single-channel frames, global-average
/// pooled to `dim` features, plus a fixed linear head used as a toy
/// classifier for the inception-style score.
///
/// Weights are He-scaled and biases zero; frames are centred at 0.5. The
/// pooled response of random filters on smooth images is dominated by one
/// direction with tiny spread, so features are L2-normalized and scaled to
/// norm `sqrt(dim)`.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub net: Network<f32>,
    pub head: Vec<f64>,
    pub classes: usize,
    hash: String,
}

impl FeatureExtractor {
    pub const DIM: usize = 16;
    pub const CLASSES: usize = 10;

    pub fn new(height: usize, width: usize, seed: u64) -> Result<Self> {
        let layers = vec![
            Layer::Conv2d {
                out_channels: 8,
                kernel: 3,
                stride: 1,
            },
            Layer::Silu,
            Layer::Conv2d {
                out_channels: 16,
                kernel: 3,
                stride: 2,
            },
            Layer::Silu,
            Layer::Conv2d {
                out_channels: Self::DIM,
                kernel: 3,
                stride: 2,
            },
            Layer::Silu,
            Layer::MeanPool(PoolAxis::Spatial),
        ];
        let mut r = rng::stream(seed, rng::domain::EXTRACTOR, 0);
        let mut net = Network::new(layers, &[1, 1, height, width], &mut r)?;
        for p in net.params_mut() {
            let bias = p.value.rank() == 1;
            // sqrt(6): uniform(±sqrt(1/fan)) to He variance 2/fan.
            p.value = p.value.map(|v| if bias { 0.0 } else { v * 6f32.sqrt() });
        }
        let bound = (1.0 / Self::DIM as f64).sqrt();
        let head: Vec<f64> = (0..Self::CLASSES * Self::DIM).map(|_| r.random_range(-bound..=bound)).collect();
        let mut recs: Vec<Tensor<f32>> = net.params().iter().map(|p| p.value.clone()).collect();
        recs.push(Tensor::from_f64_slice(&[Self::CLASSES, Self::DIM], &head)?);
        let hash = hash::tensors_hash(&recs);
        Ok(Self {
            net,
            head,
            classes: Self::CLASSES,
            hash,
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn frame_hw(&self) -> (usize, usize) {
        let s = self.net.input_shape();
        (s[2], s[3])
    }

    /// Features of one frame, given as (H, W), (1, H, W) or (1, 1, H, W).
    pub fn frame_features(&self, frame: &Tensor<f32>) -> Result<Vec<f64>> {
        let (h, w) = self.frame_hw();
        if frame.numel() != h * w {
            return Err(CoreError::Shape(format!("extractor takes {h}x{w} frames, got {:?}", frame.shape())));
        }
        let x = frame.map(|v| v - 0.5).reshape(&[1, 1, h, w])?;
        let f = self.net.forward(&x)?.to_f64_vec();
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Ok(vec![0.0; f.len()]);
        }
        let k = (f.len() as f64).sqrt() / norm;
        Ok(f.iter().map(|v| v * k).collect())
    }

    pub fn features(&self, frames: &[&Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        par::try_map(frames, |f| self.frame_features(f))
    }

    /// Clip feature: temporal mean of frame features followed by the mean
    /// absolute frame-to-frame change.
    pub fn clip_features(&self, video: &Tensor<f32>, clip_len: usize) -> Result<Vec<f64>> {
        ensure(video.rank() >= 3 && video.shape()[0] >= clip_len && clip_len >= 2, || {
            format!("clip of {clip_len} frames from video {:?}", video.shape())
        })?;
        let frames: Vec<Vec<f64>> = (0..clip_len).map(|t| self.frame_features(&video.slice_rows(t, 1)?)).collect::<Result<_>>()?;
        let d = frames[0].len();
        let mut out = vec![0.0; 2 * d];
        for (t, f) in frames.iter().enumerate() {
            for i in 0..d {
                out[i] += f[i] / clip_len as f64;
                if t > 0 {
                    out[d + i] += (f[i] - frames[t - 1][i]).abs() / (clip_len - 1) as f64;
                }
            }
        }
        Ok(out)
    }

    /// Softmax of the fixed head over frame features.
    pub fn class_probabilities(&self, frame: &Tensor<f32>) -> Result<Vec<f64>> {
        let f = self.frame_features(frame)?;
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| f.iter().zip(&self.head[c * f.len()..(c + 1) * f.len()]).map(|(a, b)| a * b).sum::<f64>() * 10.0)
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(e.iter().map(|x| x / z).collect())
    }
}

/// FID-style distance between two sets of frames.
pub fn fid(real: &[&Tensor<f32>], fake: &[&Tensor<f32>], ex: &FeatureExtractor) -> Result<f64> {
    ensure(real.len() >= 2 && fake.len() >= 2, || "fid needs at least 2 frames per set".into())?;
    frechet_distance(&fit_gaussian(&ex.features(real)?)?, &fit_gaussian(&ex.features(fake)?)?)
}

#[derive(Clone, Debug, PartialEq)]
pub enum MetricValue {
    Value(f64),
    Unavailable(String),
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Unavailable(_) => None,
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Value(v) => write!(f, "{v}"),
            MetricValue::Unavailable(_) => f.write_str("unavailable"),
        }
    }
}

/// FVD-style distance over the first `clip_len` frames of every video.
/// Reported as unavailable when any video is shorter than the clip.
pub fn fvd(real: &[&Tensor<f32>], fake: &[&Tensor<f32>], clip_len: usize, ex: &FeatureExtractor) -> Result<MetricValue> {
    ensure(clip_len >= 2, || "fvd clips need at least 2 frames".into())?;
    ensure(real.len() >= 2 && fake.len() >= 2, || "fvd needs at least 2 videos per set".into())?;
    let short = real.iter().chain(fake).filter(|v| v.shape()[0] < clip_len).count();
    if short > 0 {
        return Ok(MetricValue::Unavailable(format!("{short} videos have fewer than {clip_len} frames")));
    }
    let fr = par::try_map(real, |v| ex.clip_features(v, clip_len))?;
    let ff = par::try_map(fake, |v| ex.clip_features(v, clip_len))?;
    Ok(MetricValue::Value(frechet_distance(&fit_gaussian(&fr)?, &fit_gaussian(&ff)?)?))
}

/// exp(E KL(p(y|x) || p(y))) per split, returned as (mean, std) over splits.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    ensure(!probs.is_empty() && splits >= 1 && probs.len() >= splits, || {
        format!("inception score needs at least {splits} rows, got {}", probs.len())
    })?;
    let c = probs[0].len();
    for (i, p) in probs.iter().enumerate() {
        ensure(
            p.len() == c && p.iter().all(|v| *v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-6,
            || format!("row {i} is not a probability distribution"),
        )?;
    }
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let lo = s * probs.len() / splits;
        let hi = (s + 1) * probs.len() / splits;
        let part = &probs[lo..hi];
        let mut marg = vec![0.0; c];
        for p in part {
            for (m, v) in marg.iter_mut().zip(p) {
                *m += v / part.len() as f64;
            }
        }
        let kl: f64 = part
            .iter()
            .map(|p| p.iter().zip(&marg).filter(|(v, _)| **v > 0.0).map(|(v, m)| v * (v / m).ln()).sum::<f64>())
            .sum::<f64>()
            / part.len() as f64;
        scores.push(kl.exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconMetrics {
    pub mse: f64,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean SSIM of one (H, W) frame pair over all fully contained 7x7 windows.
pub fn ssim_frame(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let k = SSIM_WINDOW.min(h).min(w);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let np = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    let (p, q) = (a[y * w + x] as f64, b[y * w + x] as f64);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / np, sb / np);
            // Sample (n - 1) variances.
            let cv = np / (np - 1.0);
            let va = (saa / np - ma * ma) * cv;
            let vb = (sbb / np - mb * mb) * cv;
            let cab = (sab / np - ma * mb) * cv;
            total += ((2.0 * ma * mb + c1) * (2.0 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Reconstruction metrics between two videos (T, 1, H, W) or frames with
/// values in [0, 1].
pub fn recon_metrics(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<ReconMetrics> {
    if a.shape() != b.shape() {
        return Err(CoreError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let s = a.shape();
    ensure(s.len() >= 2 && a.numel() > 0, || format!("expected frames or a video, got {s:?}"))?;
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let frames = a.numel() / (h * w);
    let n = a.numel() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (*x - *y) as f64;
        se += d * d;
        ae += d.abs();
    }
    let mse = se / n;
    let psnr = if mse > 0.0 { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) } else { PSNR_CAP };
    let ssims = par::map_range(frames, |f| {
        let r = f * h * w..(f + 1) * h * w;
        ssim_frame(&a.data()[r.clone()], &b.data()[r], h, w)
    });
    Ok(ReconMetrics {
        mse,
        mae: ae / n,
        psnr,
        ssim: ssims.iter().sum::<f64>() / frames as f64,
    })
}

/// One row of a metric report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub value: MetricValue,
    pub std: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
    pub extractor: String,
    pub seed: u64,
}

pub const REPORT_COLUMNS: &str = "metric,value,std,n_real,n_fake,extractor,seed";

pub fn report_to_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{REPORT_COLUMNS}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name,
            r.value,
            r.std.map(|v| v.to_string()).unwrap_or_default(),
            r.n_real,
            r.n_fake,
            r.extractor,
            r.seed
        ));
    }
    s
}
