//! Ejection-fraction regression used to validate synthetic datasets.
//!
//! The default backend measures the foreground area of every frame (Otsu
//! threshold inside the imaging cone), summarizes the area series into a
//! handful of features and fits a ridge regression on them.

use std::fmt;
use std::str::FromStr;

use echosyn_nn::{Adam, Layer, Network, PoolAxis, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, CoreError, Result};
use crate::{par, rng};

pub const FEATURE_NAMES: [&str; 6] = ["area_min", "area_max", "area_mean", "area_std", "min_max_ratio", "period"];

/// Otsu threshold over 256 equal bins on [0, 1].
pub fn otsu_threshold(values: &[f32]) -> f64 {
    let mut hist = [0u64; 256];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) as f64) * 255.0).round() as usize;
        hist[b] += 1;
    }
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.5;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0f64);
    let (mut best, mut best_var) = (0usize, -1.0f64);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    (best as f64 + 0.5) / 255.0
}

/// Box blur of a single-channel H x W frame with replicate borders.
pub fn box_blur(frame: &[f32], h: usize, w: usize, radius: usize) -> Vec<f32> {
    if radius == 0 {
        return frame.to_vec();
    }
    let r = radius as isize;
    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0f64;
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    s += frame[yy * w + xx] as f64;
                }
            }
            out[y * w + x] = (s / ((2 * r + 1) * (2 * r + 1)) as f64) as f32;
        }
    }
    out
}

/// Per-frame foreground area in pixels: the count of cone pixels above that
/// frame's Otsu threshold.
pub fn area_series(video: &Tensor<f32>, mask: &[bool], blur: usize) -> Result<Vec<f64>> {
    let s = video.shape();
    ensure(s.len() == 4 && s[1] == 1, || format!("expected a (T, 1, H, W) video, got {s:?}"))?;
    ensure(mask.len() == s[2] * s[3], || "cone mask does not match frame size".into())?;
    Ok((0..s[0])
        .map(|f| {
            let frame = box_blur(video.row(f), s[2], s[3], blur);
            let inside: Vec<f32> = frame.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
            let th = otsu_threshold(&inside);
            inside.iter().filter(|v| **v as f64 > th).count() as f64
        })
        .collect())
}

/// Smallest lag in 2..=n/2 whose autocorrelation is a local peak within 90%
/// of the highest one (multiples of the period score about as high), or 0
/// when the series is too short or flat.
pub fn dominant_period(series: &[f64]) -> usize {
    let n = series.len();
    if n < 4 {
        return 0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var: f64 = c.iter().map(|v| v * v).sum();
    if var <= 1e-12 {
        return 0;
    }
    let ac = |lag: usize| (0..n - lag).map(|i| c[i] * c[i + lag]).sum::<f64>() / (n - lag) as f64;
    let lags: Vec<(usize, f64)> = (2..=n / 2).map(|l| (l, ac(l))).collect();
    let best = lags.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let peak = |i: usize| {
        let v = lags[i].1;
        (i == 0 || v >= lags[i - 1].1) && (i + 1 == lags.len() || v >= lags[i + 1].1)
    };
    (0..lags.len()).find(|&i| peak(i) && lags[i].1 >= 0.9 * best).map(|i| lags[i].0).unwrap_or(0)
}

pub fn area_features(series: &[f64]) -> Vec<f64> {
    let n = series.len().max(1) as f64;
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = series.iter().sum::<f64>() / n;
    let std = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let ratio = if max > 0.0 { min / max } else { 1.0 };
    vec![min, max, mean, std, ratio, dominant_period(series) as f64]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Ridge,
    Neural,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Ridge => "ridge",
            Backend::Neural => "neural",
        })
    }
}

impl FromStr for Backend {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge" => Ok(Backend::Ridge),
            "neural" => Ok(Backend::Neural),
            _ => Err(CoreError::InvalidArgument(format!("unknown regressor backend `{s}`"))),
        }
    }
}

/// Ridge regression on standardized features with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

pub const MIN_LAMBDA: f64 = 1e-6;

/// Solve the symmetric positive-definite system `a x = b` by Cholesky.
fn cholesky_solve(a: &[f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(CoreError::Degenerate("ridge system is not positive definite".into()));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    let mut y = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i * d + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| l[k * d + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * d + i];
    }
    Ok(x)
}

impl RidgeModel {
    /// Fit on rows of `x` (n x d). `lambda` is floored at 1e-6. With
    /// `standardize`, features are scaled to unit variance before fitting.
    pub fn fit(x: &[Vec<f64>], y: &[f64], lambda: f64, standardize: bool) -> Result<Self> {
        ensure(!x.is_empty() && x.len() == y.len(), || {
            format!("need matching nonempty features and labels, got {} and {}", x.len(), y.len())
        })?;
        let d = x[0].len();
        ensure(x.iter().all(|r| r.len() == d), || "feature rows differ in length".into())?;
        ensure(x.iter().flatten().chain(y).all(|v| v.is_finite()), || "non-finite feature or label".into())?;
        let n = x.len() as f64;
        let lambda = lambda.max(MIN_LAMBDA);
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                if !standardize {
                    return 1.0;
                }
                let s = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let ymean = y.iter().sum::<f64>() / n;
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for (row, &yi) in x.iter().zip(y) {
            let z: Vec<f64> = (0..d).map(|j| (row[j] - mean[j]) / scale[j]).collect();
            for i in 0..d {
                b[i] += z[i] * (yi - ymean);
                for j in 0..d {
                    a[i * d + j] += z[i] * z[j];
                }
            }
        }
        for i in 0..d {
            a[i * d + i] += lambda;
        }
        let weights = cholesky_solve(&a, &b, d)?;
        Ok(Self {
            feature_mean: mean,
            feature_scale: scale,
            weights,
            intercept: ymean,
            lambda,
        })
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept
            + features
                .iter()
                .zip(&self.feature_mean)
                .zip(&self.feature_scale)
                .zip(&self.weights)
                .map(|(((f, m), s), w)| w * (f - m) / s)
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionMetrics {
    pub n: usize,
    /// `None` when the labels have zero variance.
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

pub fn regression_metrics(pred: &[f64], label: &[f64]) -> Result<RegressionMetrics> {
    ensure(!pred.is_empty() && pred.len() == label.len(), || {
        format!("need matching nonempty predictions and labels, got {} and {}", pred.len(), label.len())
    })?;
    let n = pred.len() as f64;
    let mean = label.iter().sum::<f64>() / n;
    let ss_tot: f64 = label.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(label).map(|(p, y)| (p - y).powi(2)).sum();
    let mae = pred.iter().zip(label).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    let rmse = (ss_res / n).sqrt();
    let r2 = if ss_tot > 0.0 { Some(1.0 - ss_res / ss_tot) } else { None };
    Ok(RegressionMetrics {
        n: pred.len(),
        r2,
        mae,
        rmse: rmse.max(mae),
    })
}

/// Extract area features for many videos in parallel.
pub fn video_features(videos: &[&Tensor<f32>], mask: &[bool], blur: usize) -> Result<Vec<Vec<f64>>> {
    par::try_map(videos, |v| Ok(area_features(&area_series(v, mask, blur)?)))
}

/// A labeled video for regression, borrowed from wherever it lives.
#[derive(Clone, Copy, Debug)]
pub struct EfExample<'a> {
    pub id: &'a str,
    pub video: &'a Tensor<f32>,
    pub ef: f64,
}

/// Content hash of a labeled set: ids, labels and pixels in order.
pub fn examples_hash(set: &[EfExample<'_>]) -> String {
    let mut bytes = Vec::new();
    for e in set {
        bytes.extend_from_slice(e.id.as_bytes());
        bytes.extend_from_slice(&e.ef.to_le_bytes());
        bytes.extend_from_slice(crate::hash::tensors_hash([e.video]).as_bytes());
    }
    crate::hash::short_hash(&bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub backend: Backend,
    pub lambda: f64,
    /// Box-blur radius applied before thresholding.
    pub blur: usize,
    /// Neural backend only.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Ridge,
            lambda: 1e-3,
            blur: 1,
            steps: 600,
            batch: 16,
            lr: 3e-3,
            clip: 16,
        }
    }
}

/// Small video network: strided convs per frame, spatial pooling, mixing
/// over time, temporal pooling and a linear read-out. Sees the first
/// `clip` frames and predicts standardized EF.
#[derive(Clone, Debug)]
pub struct NeuralRegressor {
    pub net: Network<f32>,
    pub label_mean: f64,
    pub label_std: f64,
}

impl NeuralRegressor {
    fn input(&self, video: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = self.net.input_shape();
        ensure(video.rank() == 4 && video.shape()[0] >= s[0] && video.shape()[1..] == s[1..], || {
            format!("neural regressor needs at least {} frames of {:?}, got {:?}", s[0], &s[1..], video.shape())
        })?;
        Ok(video.slice_rows(0, s[0])?)
    }

    pub fn predict(&self, video: &Tensor<f32>) -> Result<f64> {
        let y = self.net.forward(&self.input(video)?)?;
        Ok(self.label_mean + self.label_std * y.data()[0] as f64)
    }
}

fn neural_layers() -> Vec<Layer> {
    vec![
        Layer::Conv2d {
            out_channels: 8,
            kernel: 3,
            stride: 2,
        },
        Layer::Silu,
        Layer::Conv2d {
            out_channels: 8,
            kernel: 3,
            stride: 2,
        },
        Layer::Silu,
        Layer::MeanPool(PoolAxis::Spatial),
        Layer::TemporalMix,
        Layer::Silu,
        Layer::MeanPool(PoolAxis::Rows),
        Layer::Affine { out_shape: vec![1] },
    ]
}

pub fn train_neural(train: &[EfExample<'_>], cfg: &RegressorConfig, seed: u64) -> Result<NeuralRegressor> {
    ensure(!train.is_empty(), || "empty training set".into())?;
    ensure(cfg.steps >= 1 && cfg.batch >= 1 && cfg.lr > 0.0 && cfg.clip >= 2, || {
        "invalid neural regressor settings".into()
    })?;
    let s = train[0].video.shape();
    ensure(s.len() == 4, || format!("expected (T, C, H, W) videos, got {s:?}"))?;
    let n = train.len() as f64;
    let label_mean = train.iter().map(|e| e.ef).sum::<f64>() / n;
    let label_std = (train.iter().map(|e| (e.ef - label_mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
    let mut r = rng::stream(seed, rng::domain::REGRESSOR, u64::MAX);
    let net = Network::new(neural_layers(), &[cfg.clip, s[1], s[2], s[3]], &mut r)?;
    let mut model = NeuralRegressor { net, label_mean, label_std };
    let inputs: Vec<Tensor<f32>> = train.iter().map(|e| model.input(e.video)).collect::<Result<_>>()?;
    let targets: Vec<f32> = train.iter().map(|e| ((e.ef - label_mean) / label_std) as f32).collect();
    let mut opt = Adam::new(model.net.params(), cfg.lr);
    for step in 0..cfg.steps {
        let mut r = rng::stream(seed, rng::domain::REGRESSOR, step as u64);
        let idx: Vec<usize> = (0..cfg.batch).map(|_| r.random_range(0..inputs.len())).collect();
        let net = &model.net;
        let grads = par::try_map(&idx, |&i| -> Result<Vec<Tensor<f32>>> {
            let mut tape = net.tape();
            let y = tape.forward(&inputs[i])?;
            let g = Tensor::from_vec(&[1, 1], vec![2.0 * (y.data()[0] - targets[i])])?;
            Ok(tape.backward(&g)?.params)
        })?;
        let mut acc = grads[0].clone();
        for g in &grads[1..] {
            for (a, gi) in acc.iter_mut().zip(g) {
                a.add_assign(gi)?;
            }
        }
        let inv = 1.0 / cfg.batch as f32;
        let acc: Vec<Tensor<f32>> = acc.into_iter().map(|g| g.scale(inv)).collect();
        opt.step(model.net.params_mut(), &acc)?;
    }
    Ok(model)
}

#[derive(Clone, Debug)]
pub enum EfRegressor {
    Ridge { model: RidgeModel, blur: usize, mask: Vec<bool> },
    Neural(NeuralRegressor),
}

impl EfRegressor {
    pub fn backend(&self) -> Backend {
        match self {
            EfRegressor::Ridge { .. } => Backend::Ridge,
            EfRegressor::Neural(_) => Backend::Neural,
        }
    }

    pub fn predict_all(&self, videos: &[&Tensor<f32>]) -> Result<Vec<f64>> {
        match self {
            EfRegressor::Ridge { model, blur, mask } => Ok(video_features(videos, mask, *blur)?.iter().map(|f| model.predict(f)).collect()),
            EfRegressor::Neural(m) => par::try_map(videos, |v| m.predict(v)),
        }
    }
}

/// Train an EF regressor. `mask` is the imaging-cone mask used by the area
/// features.
pub fn train_ef(train: &[EfExample<'_>], mask: &[bool], cfg: &RegressorConfig, seed: u64) -> Result<EfRegressor> {
    ensure(!train.is_empty(), || "the training split is empty".into())?;
    ensure(train.iter().all(|e| e.ef.is_finite()), || "training labels must be finite".into())?;
    match cfg.backend {
        Backend::Ridge => {
            let videos: Vec<&Tensor<f32>> = train.iter().map(|e| e.video).collect();
            let x = video_features(&videos, mask, cfg.blur)?;
            let y: Vec<f64> = train.iter().map(|e| e.ef).collect();
            Ok(EfRegressor::Ridge {
                model: RidgeModel::fit(&x, &y, cfg.lambda, true)?,
                blur: cfg.blur,
                mask: mask.to_vec(),
            })
        }
        Backend::Neural => Ok(EfRegressor::Neural(train_neural(train, cfg, seed)?)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Real,
    Synthetic,
    VaeReconstructed,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
            Source::VaeReconstructed => "vae-reconstructed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionReport {
    pub metrics: RegressionMetrics,
    pub backend: Backend,
    pub train_source: Source,
    pub test_source: Source,
    pub train_hash: String,
    pub test_hash: String,
    pub seed: u64,
}

pub fn eval_ef(model: &EfRegressor, test: &[EfExample<'_>]) -> Result<RegressionMetrics> {
    ensure(!test.is_empty(), || "the test split is empty".into())?;
    let videos: Vec<&Tensor<f32>> = test.iter().map(|e| e.video).collect();
    let labels: Vec<f64> = test.iter().map(|e| e.ef).collect();
    regression_metrics(&model.predict_all(&videos)?, &labels)
}

/// Train on one source, test on another, and tag the result.
pub fn train_and_eval(
    train: &[EfExample<'_>],
    train_source: Source,
    test: &[EfExample<'_>],
    test_source: Source,
    mask: &[bool],
    cfg: &RegressorConfig,
    seed: u64,
) -> Result<RegressionReport> {
    let model = train_ef(train, mask, cfg, seed)?;
    Ok(RegressionReport {
        metrics: eval_ef(&model, test)?,
        backend: cfg.backend,
        train_source,
        test_source,
        train_hash: examples_hash(train),
        test_hash: examples_hash(test),
        seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub real: RegressionReport,
    pub synthetic: RegressionReport,
    /// Trained and tested on synthetic data only (80/20 split in set order).
    pub synthetic_only: Option<RegressionReport>,
}

impl Comparison {
    /// Synthetic-trained minus real-trained (R2, MAE, RMSE). R2 is `None`
    /// when either is undefined.
    pub fn deltas(&self) -> (Option<f64>, f64, f64) {
        let (a, b) = (&self.real.metrics, &self.synthetic.metrics);
        (b.r2.zip(a.r2).map(|(x, y)| x - y), b.mae - a.mae, b.rmse - a.rmse)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("train_source,test_source,backend,n,r2,mae,rmse,train_hash,test_hash,seed\n");
        for r in [Some(&self.real), Some(&self.synthetic), self.synthetic_only.as_ref()].into_iter().flatten() {
            let m = &r.metrics;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.train_source,
                r.test_source,
                r.backend,
                m.n,
                m.r2.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into()),
                m.mae,
                m.rmse,
                r.train_hash,
                r.test_hash,
                r.seed
            ));
        }
        s
    }

    pub fn summary(&self) -> String {
        let fmt_r2 = |m: &RegressionMetrics| m.r2.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undefined".into());
        let mut s = String::new();
        for r in [Some(&self.real), Some(&self.synthetic), self.synthetic_only.as_ref()].into_iter().flatten() {
            s.push_str(&format!(
                "{:>9} -> {:<9}  R2 {:>9}  MAE {:6.2}  RMSE {:6.2}  (n={})\n",
                r.train_source.to_string(),
                r.test_source.to_string(),
                fmt_r2(&r.metrics),
                r.metrics.mae,
                r.metrics.rmse,
                r.metrics.n
            ));
        }
        let (dr2, dmae, drmse) = self.deltas();
        s.push_str(&format!(
            "delta (synthetic - real): R2 {}  MAE {dmae:+.2}  RMSE {drmse:+.2}\n",
            dr2.map(|v| format!("{v:+.3}")).unwrap_or_else(|| "undefined".into())
        ));
        s
    }
}

/// Real-trained vs synthetic-trained regressors on the same real test set,
/// plus optionally a synthetic-only train/test run.
pub fn compare_protocol(
    real_train: &[EfExample<'_>],
    synthetic: &[EfExample<'_>],
    test: &[EfExample<'_>],
    mask: &[bool],
    cfg: &RegressorConfig,
    seed: u64,
    synthetic_only: bool,
) -> Result<Comparison> {
    let real = train_and_eval(real_train, Source::Real, test, Source::Real, mask, cfg, seed)?;
    let syn = train_and_eval(synthetic, Source::Synthetic, test, Source::Real, mask, cfg, seed)?;
    let only = if synthetic_only {
        let cut = (synthetic.len() as f64 * 0.8).round() as usize;
        ensure(cut >= 1 && cut < synthetic.len(), || "too few synthetic videos for an 80/20 split".into())?;
        Some(train_and_eval(
            &synthetic[..cut],
            Source::Synthetic,
            &synthetic[cut..],
            Source::Synthetic,
            mask,
            cfg,
            seed,
        )?)
    } else {
        None
    };
    Ok(Comparison {
        real,
        synthetic: syn,
        synthetic_only: only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_metrics() {
        let m = regression_metrics(&[10.0, 20.0, 30.0, 40.0], &[12.0, 18.0, 33.0, 37.0]).unwrap();
        assert!((m.mae - 2.5).abs() < 1e-12);
        assert!((m.rmse - 6.5f64.sqrt()).abs() < 1e-12);
        let m = regression_metrics(&[3.0, 4.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.mae, m.rmse), (2.0, 2.0));
        assert!(regression_metrics(&[1.0, 2.0], &[5.0, 5.0]).unwrap().r2.is_none());
    }

    #[test]
    fn ridge_hand_system() {
        // Unstandardized, lambda 1: centered x = [[-1, 0], [0, 1], [1, -1]],
        // centered y = [-2, 0, 2]. (X'X + I) = [[3, -1], [-1, 3]], X'y = [4, -2],
        // so w = [1.25, -0.25].
        let x = vec![vec![0.0, 1.0], vec![1.0, 2.0], vec![2.0, 0.0]];
        let y = vec![1.0, 3.0, 5.0];
        let m = RidgeModel::fit(&x, &y, 1.0, false).unwrap();
        assert!((m.weights[0] - 1.25).abs() < 1e-12);
        assert!((m.weights[1] + 0.25).abs() < 1e-12);
        assert_eq!(m.intercept, 3.0);
    }

    #[test]
    fn otsu_splits_two_levels() {
        let mut v = vec![0.2f32; 50];
        v.extend(vec![0.8f32; 30]);
        let t = otsu_threshold(&v);
        assert!(t > 0.2 && t < 0.8);
    }

    #[test]
    fn period_of_a_sine() {
        let s: Vec<f64> = (0..40).map(|i| (i as f64 * std::f64::consts::TAU / 10.0).cos()).collect();
        assert_eq!(dominant_period(&s), 10);
        assert_eq!(dominant_period(&[1.0; 10]), 0);
    }
}
