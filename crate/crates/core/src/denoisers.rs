//! Small v-prediction networks over latent images and latent video windows.
//!
//! Both models work on normalized latents (see [`LatentStats`]). Inputs are
//! assembled by concatenating on channels: the noisy latent, then for video
//! models the anchor frame and an EF channel (`ef / 100`), then a sinusoidal
//! embedding of the step, all broadcast over space (and time).

use std::path::Path;

use echosyn_nn::{checkpoint, Adam, Layer, Network, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{crop, pad_replicate, LatentStats, PadCrop, LATENT_CHANNELS};
use crate::error::{ensure, CoreError, Result};
use crate::schedule::{self, forward_noise, v_target, Conditioning, DiffusionSampleConfig, NoiseSchedule, VPredictor};
use crate::stitcher::generate_long_video;
use crate::{par, rng};

pub const EMBED_DIM: usize = 8;

/// Sinusoidal step embedding: sines and cosines of `pi * 2^k * t / T / 2`.
pub fn timestep_embedding(t: usize, total: usize, dim: usize) -> Vec<f32> {
    let s = t as f64 / total.max(1) as f64;
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let a = std::f64::consts::PI * (1u64 << k) as f64 * s / 2.0;
        out.push(a.sin() as f32);
        out.push(a.cos() as f32);
    }
    out.resize(dim, 0.0);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Channels of the three conv stages.
    pub channels: [usize; 3],
    pub embed_dim: usize,
    /// Extra conv/time-mix blocks at the coarsest resolution.
    pub bottleneck_blocks: usize,
    /// Time-mixing layers per conv stage (video model only).
    pub temporal_depth: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            channels: [16, 32, 32],
            embed_dim: EMBED_DIM,
            bottleneck_blocks: 0,
            temporal_depth: 2,
        }
    }
}

struct Builder {
    layers: Vec<Layer>,
}

impl Builder {
    /// Push a layer and return the activation index of its output.
    fn push(&mut self, l: Layer) -> usize {
        self.layers.push(l);
        self.layers.len()
    }
}

/// Three conv stages (the last two strided), an affine map back to the full
/// grid, a skip from the first stage and a zero-initialized output conv.
/// With `temporal`, every stage also mixes along the time axis.
fn build_layers(grid: (usize, usize), arch: &ArchConfig, temporal: bool) -> Vec<Layer> {
    let [c1, c2, c3] = arch.channels;
    let mut b = Builder { layers: Vec::new() };
    let stage = |b: &mut Builder, out: usize, stride: usize| -> usize {
        b.push(Layer::Conv2d {
            out_channels: out,
            kernel: 3,
            stride,
        });
        let s = b.push(Layer::Silu);
        if temporal {
            for d in 0..arch.temporal_depth.max(1) {
                if d > 0 {
                    b.push(Layer::Silu);
                }
                b.push(Layer::TemporalMix);
            }
            b.push(Layer::Concat { with: s });
        }
        s
    };
    let skip = stage(&mut b, c1, 1);
    stage(&mut b, c2, 2);
    stage(&mut b, c3, 2);
    for _ in 0..arch.bottleneck_blocks {
        b.push(Layer::Conv2d {
            out_channels: c3,
            kernel: 1,
            stride: 1,
        });
        let s = b.push(Layer::Silu);
        if temporal {
            b.push(Layer::TemporalMix);
            b.push(Layer::Concat { with: s });
        }
    }
    b.push(Layer::Affine {
        out_shape: vec![c2, grid.0, grid.1],
    });
    b.push(Layer::Silu);
    b.push(Layer::Concat { with: skip });
    b.push(Layer::Conv2d {
        out_channels: c2,
        kernel: 1,
        stride: 1,
    });
    let s = b.push(Layer::Silu);
    if temporal {
        b.push(Layer::TemporalMix);
        b.push(Layer::Concat { with: s });
    }
    b.push(Layer::Concat { with: 0 });
    b.push(Layer::Conv2d {
        out_channels: LATENT_CHANNELS,
        kernel: 3,
        stride: 1,
    });
    b.layers
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    Image,
    Video,
}

/// A v-prediction network. Image models see one frame; video models see a
/// fixed window of `window` frames plus conditioning.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub kind: DenoiserKind,
    pub net: Network<f32>,
    /// Normalization of latent frames (images, and video anchors).
    pub stats: LatentStats,
    /// Normalization of video residuals from the anchor frame; unused for
    /// image models.
    pub residual: LatentStats,
    pub grid: (usize, usize),
    pub window: usize,
    pub total_steps: usize,
    pub arch: ArchConfig,
}

pub type ImageDenoiser = Denoiser;
pub type VideoDenoiser = Denoiser;

impl Denoiser {
    fn in_channels(kind: DenoiserKind, arch: &ArchConfig) -> usize {
        match kind {
            DenoiserKind::Image => LATENT_CHANNELS + arch.embed_dim,
            DenoiserKind::Video => 2 * LATENT_CHANNELS + 1 + arch.embed_dim,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: DenoiserKind,
        grid: (usize, usize),
        window: usize,
        total_steps: usize,
        arch: ArchConfig,
        stats: LatentStats,
        residual: LatentStats,
        seed: u64,
    ) -> Result<Self> {
        ensure(grid.0 >= 1 && grid.1 >= 1, || "model grid must be nonempty".into())?;
        ensure(arch.channels.iter().all(|c| *c >= 1), || "stage channels must be positive".into())?;
        let window = match kind {
            DenoiserKind::Image => 1,
            DenoiserKind::Video => {
                ensure(window >= 2 && window.is_multiple_of(2), || {
                    format!("video window {window} must be even and at least 2")
                })?;
                window
            }
        };
        ensure(stats.mean.len() == LATENT_CHANNELS && residual.mean.len() == LATENT_CHANNELS, || {
            "latent statistics must cover 4 channels".into()
        })?;
        let cin = Self::in_channels(kind, &arch);
        let layers = build_layers(grid, &arch, kind == DenoiserKind::Video);
        let mut r = rng::stream(seed, rng::domain::INIT, kind as u64);
        let mut net = Network::new(layers, &[window, cin, grid.0, grid.1], &mut r)?;
        let last = net.layers().len() - 1;
        net.zero_layer(last);
        Ok(Self {
            kind,
            net,
            stats,
            residual,
            grid,
            window,
            total_steps,
            arch,
        })
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [LATENT_CHANNELS, self.grid.0, self.grid.1]
    }

    /// Network input for a normalized noisy tensor `z` (rows, 4, h, w).
    pub fn assemble_input(&self, z: &Tensor<f32>, t: usize, cond: Option<&Conditioning>) -> Result<Tensor<f32>> {
        let rows = self.window;
        let (h, w) = self.grid;
        let plane = h * w;
        if z.shape() != [rows, LATENT_CHANNELS, h, w] {
            return Err(CoreError::Shape(format!(
                "denoiser expects {:?}, got {:?}",
                [rows, LATENT_CHANNELS, h, w],
                z.shape()
            )));
        }
        let emb = timestep_embedding(t, self.total_steps, self.arch.embed_dim);
        let cin = Self::in_channels(self.kind, &self.arch);
        let mut data = Vec::with_capacity(rows * cin * plane);
        let cond_parts = match self.kind {
            DenoiserKind::Image => None,
            DenoiserKind::Video => {
                let c = cond.ok_or_else(|| CoreError::InvalidArgument("video denoiser needs conditioning".into()))?;
                if c.anchor.shape() != [LATENT_CHANNELS, h, w] {
                    return Err(CoreError::Shape(format!(
                        "anchor must be {:?}, got {:?}",
                        [LATENT_CHANNELS, h, w],
                        c.anchor.shape()
                    )));
                }
                Some((c.anchor.data(), (c.ef / 100.0) as f32))
            }
        };
        for r in 0..rows {
            data.extend_from_slice(z.row(r));
            if let Some((anchor, ef)) = cond_parts {
                data.extend_from_slice(anchor);
                data.extend(std::iter::repeat_n(ef, plane));
            }
            for e in &emb {
                data.extend(std::iter::repeat_n(*e, plane));
            }
        }
        Ok(Tensor::from_vec(&[rows, cin, h, w], data)?)
    }

    pub fn to_records(&self) -> Vec<(String, Tensor<f32>)> {
        let meta = vec![
            match self.kind {
                DenoiserKind::Image => 0.0,
                DenoiserKind::Video => 1.0,
            },
            self.grid.0 as f32,
            self.grid.1 as f32,
            self.window as f32,
            self.total_steps as f32,
            self.arch.channels[0] as f32,
            self.arch.channels[1] as f32,
            self.arch.channels[2] as f32,
            self.arch.embed_dim as f32,
            self.arch.bottleneck_blocks as f32,
            self.arch.temporal_depth as f32,
        ];
        let mut recs = vec![("meta.denoiser".to_string(), Tensor::from_vec(&[meta.len()], meta).expect("len"))];
        recs.extend(self.stats.to_records("latent"));
        recs.extend(self.residual.to_records("residual"));
        recs.extend(self.net.params().iter().map(|p| (p.name.clone(), p.value.clone())));
        recs
    }

    pub fn from_records(records: &[(String, Tensor<f32>)]) -> Result<Self> {
        let meta = records
            .iter()
            .find(|(n, _)| n == "meta.denoiser")
            .map(|(_, t)| t.data().to_vec())
            .ok_or_else(|| CoreError::InvalidArgument("checkpoint is not a denoiser (no `meta.denoiser`)".into()))?;
        ensure(meta.len() == 11, || "malformed denoiser metadata".into())?;
        let u = |i: usize| meta[i] as usize;
        let kind = if meta[0] == 0.0 { DenoiserKind::Image } else { DenoiserKind::Video };
        let arch = ArchConfig {
            channels: [u(5), u(6), u(7)],
            embed_dim: u(8),
            bottleneck_blocks: u(9),
            temporal_depth: u(10),
        };
        let stats = LatentStats::from_records(records, "latent")?;
        let residual = LatentStats::from_records(records, "residual")?;
        let mut d = Self::new(kind, (u(1), u(2)), u(3), u(4), arch, stats, residual, 0)?;
        let params: Vec<(String, Tensor<f32>)> = records
            .iter()
            .filter(|(n, _)| !n.starts_with("meta.") && !n.starts_with("latent.") && !n.starts_with("residual."))
            .cloned()
            .collect();
        d.net.load_params(&params)?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_records()).map_err(|e| match e {
            echosyn_nn::NnError::Io(io) => CoreError::io(path, io),
            other => other.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let recs = checkpoint::load(path).map_err(|e| match e {
            echosyn_nn::NnError::Io(io) => CoreError::io(path, io),
            other => CoreError::format(path, other.to_string()),
        })?;
        Self::from_records(&recs)
    }
}

impl VPredictor for Denoiser {
    fn predict(&self, z_t: &Tensor<f32>, t: usize, cond: Option<&Conditioning>) -> Result<Tensor<f32>> {
        let x = self.assemble_input(z_t, t, cond)?;
        Ok(self.net.forward(&x)?)
    }

    fn window(&self) -> Option<usize> {
        match self.kind {
            DenoiserKind::Image => None,
            DenoiserKind::Video => Some(self.window),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr` (cosine decay).
    pub lr_final_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 8,
            lr: 3e-4,
            lr_final_frac: 1.0,
            seed: 0,
        }
    }
}

/// One training example: network input and its v target.
struct Item {
    input: Tensor<f32>,
    target: Tensor<f32>,
}

/// Run `steps` of Adam on mean-squared v error. `draw` produces the batch
/// items for a step from that step's random stream.
fn fit(den: &mut Denoiser, cfg: &TrainConfig, domain: u64, mut draw: impl FnMut(&Denoiser, &mut rand_chacha::ChaCha8Rng) -> Result<Item>) -> Result<Vec<f64>> {
    ensure(cfg.steps >= 1 && cfg.batch >= 1 && cfg.lr > 0.0, || {
        "training needs positive steps, batch and lr".into()
    })?;
    let mut opt = Adam::new(den.net.params(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let progress = step as f64 / (cfg.steps.max(2) - 1) as f64;
        let decay = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.lr = cfg.lr * (cfg.lr_final_frac + (1.0 - cfg.lr_final_frac) * decay);
        let mut r = rng::stream(cfg.seed, domain, step as u64);
        let items: Vec<Item> = (0..cfg.batch).map(|_| draw(den, &mut r)).collect::<Result<_>>()?;
        let net = &den.net;
        let per_item = par::try_map(&items, |it| -> Result<(f64, Vec<Tensor<f32>>)> {
            let mut tape = net.tape();
            let y = tape.forward(&it.input)?;
            let diff = y.sub(&it.target)?;
            let n = diff.numel() as f32;
            let loss = diff.sum_sq_f64() / n as f64;
            let g = tape.backward(&diff.scale(2.0 / n))?;
            Ok((loss, g.params))
        })?;
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        for (l, g) in per_item {
            loss += l;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        a.add_assign(gi)?;
                    }
                }
            }
        }
        let inv = 1.0 / cfg.batch as f32;
        let grads: Vec<Tensor<f32>> = grads.expect("batch >= 1").into_iter().map(|g| g.scale(inv)).collect();
        opt.step(den.net.params_mut(), &grads)?;
        trace.push(loss / cfg.batch as f64);
    }
    Ok(trace)
}

fn noisy_item(den: &Denoiser, z0: &Tensor<f32>, sched: &NoiseSchedule, cond: Option<&Conditioning>, r: &mut rand_chacha::ChaCha8Rng) -> Result<Item> {
    let t = r.random_range(1..=sched.steps());
    let eps = rng::gaussian(z0.shape(), r);
    let zt = forward_noise(z0, t, &eps, sched)?;
    Ok(Item {
        input: den.assemble_input(&zt, t, cond)?,
        target: v_target(z0, &eps, t, sched)?,
    })
}

/// Pad a normalized (4, h, w) latent to the model grid.
fn to_grid(den: &Denoiser, latent: &Tensor<f32>) -> Result<(Tensor<f32>, PadCrop)> {
    pad_replicate(latent, den.grid.0, den.grid.1)
}

/// Train an unconditional image model on latent frames (4, h, w).
pub fn train_lidm(
    images: &[Tensor<f32>],
    sched: &NoiseSchedule,
    grid: (usize, usize),
    arch: ArchConfig,
    cfg: &TrainConfig,
) -> Result<(ImageDenoiser, Vec<f64>)> {
    ensure(!images.is_empty(), || "no training images".into())?;
    let shape = images[0].shape().to_vec();
    if let Some((i, im)) = images.iter().enumerate().find(|(_, im)| im.shape() != &shape[..]) {
        return Err(CoreError::Shape(format!("image {i} has shape {:?}, expected {shape:?}", im.shape())));
    }
    ensure(shape.len() == 3 && shape[0] == LATENT_CHANNELS, || {
        format!("expected (4, h, w) latents, got {shape:?}")
    })?;
    let stats = LatentStats::fit(images.iter())?;
    let mut den = Denoiser::new(
        DenoiserKind::Image,
        grid,
        1,
        sched.steps(),
        arch,
        stats,
        LatentStats::identity(LATENT_CHANNELS),
        cfg.seed,
    )?;
    let padded: Vec<Tensor<f32>> = images
        .iter()
        .map(|im| {
            let n = den.stats.normalize(im)?;
            let (p, _) = to_grid(&den, &n)?;
            Ok(p.reshape(&[1, LATENT_CHANNELS, grid.0, grid.1])?)
        })
        .collect::<Result<_>>()?;
    let trace = fit(&mut den, cfg, rng::domain::TRAIN_LIDM, |d, r| {
        let z0 = &padded[r.random_range(0..padded.len())];
        noisy_item(d, z0, sched, None, r)
    })?;
    Ok((den, trace))
}

/// A latent video (T, 4, h, w) with its EF label.
#[derive(Clone, Debug)]
pub struct LabeledLatent {
    pub id: String,
    pub latents: Tensor<f32>,
    pub ef: f64,
}

/// Train a conditional video model on windows of `window` frames.
pub fn train_lvdm(videos: &[LabeledLatent], sched: &NoiseSchedule, window: usize, arch: ArchConfig, cfg: &TrainConfig) -> Result<(VideoDenoiser, Vec<f64>)> {
    ensure(!videos.is_empty(), || "no training videos".into())?;
    let short: Vec<&str> = videos
        .iter()
        .filter(|v| v.latents.rank() != 4 || v.latents.shape()[0] < window)
        .map(|v| v.id.as_str())
        .collect();
    if !short.is_empty() {
        return Err(CoreError::InvalidArgument(format!(
            "videos shorter than the {window}-frame window: {}",
            short.join(", ")
        )));
    }
    let fshape = videos[0].latents.shape()[1..].to_vec();
    ensure(fshape[0] == LATENT_CHANNELS, || format!("expected 4 latent channels, got {fshape:?}"))?;
    if let Some(v) = videos.iter().find(|v| v.latents.shape()[1..] != fshape[..]) {
        return Err(CoreError::Shape(format!(
            "video {} has frame shape {:?}, expected {fshape:?}",
            v.id,
            &v.latents.shape()[1..]
        )));
    }
    let stats = LatentStats::fit(videos.iter().map(|v| &v.latents))?;
    let grid = (fshape[1], fshape[2]);
    let residual = LatentStats::fit_residual(videos.iter().map(|v| &v.latents))?;
    let mut den = Denoiser::new(DenoiserKind::Video, grid, window, sched.steps(), arch, stats, residual, cfg.seed)?;
    let trace = fit(&mut den, cfg, rng::domain::TRAIN_LVDM, |d, r| {
        let vi = r.random_range(0..videos.len());
        let v = &videos[vi].latents;
        let len = v.shape()[0];
        let start = r.random_range(0..=len - window);
        let anchor_idx = r.random_range(0..len);
        let anchor = Tensor::from_vec(&fshape, v.row(anchor_idx).to_vec())?;
        let z0 = d.residual.normalize(&subtract_frame(&v.slice_rows(start, window)?, &anchor)?)?;
        let cond = Conditioning {
            anchor: d.stats.normalize(&anchor)?,
            ef: videos[vi].ef,
        };
        noisy_item(d, &z0, sched, Some(&cond), r)
    })?;
    Ok((den, trace))
}

/// Draw one latent image (denormalized, cropped back to `latent_hw`).
pub fn sample_image(den: &ImageDenoiser, sched: &NoiseSchedule, cfg: &DiffusionSampleConfig, latent_hw: (usize, usize)) -> Result<Tensor<f32>> {
    ensure(den.kind == DenoiserKind::Image, || "sample_image needs an image denoiser".into())?;
    let (gh, gw) = den.grid;
    let z = schedule::sample(den, &[1, LATENT_CHANNELS, gh, gw], sched, cfg)?;
    let z = z.reshape(&[LATENT_CHANNELS, gh, gw])?;
    let crop_rec = PadCrop {
        top: (gh - latent_hw.0) / 2,
        left: (gw - latent_hw.1) / 2,
        height: latent_hw.0,
        width: latent_hw.1,
    };
    den.stats.denormalize(&crop(&z, crop_rec)?)
}

/// Generate a latent video of `l_v` frames animating `anchor` (raw latent
/// (4, h, w)) at ejection fraction `ef`.
pub fn sample_video(den: &VideoDenoiser, anchor: &Tensor<f32>, ef: f64, l_v: usize, sched: &NoiseSchedule, cfg: &DiffusionSampleConfig) -> Result<Tensor<f32>> {
    ensure(den.kind == DenoiserKind::Video, || "sample_video needs a video denoiser".into())?;
    let cond = Conditioning {
        anchor: den.stats.normalize(anchor)?,
        ef,
    };
    let cfg = cfg.clone().with_conditioning(cond);
    let z = generate_long_video(den, &den.latent_shape(), l_v, sched, &cfg)?;
    add_frame(&den.residual.denormalize(&z)?, anchor)
}

/// `video[t] - frame` for every t.
pub fn subtract_frame(video: &Tensor<f32>, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    offset_frames(video, frame, -1.0)
}

/// `video[t] + frame` for every t.
pub fn add_frame(video: &Tensor<f32>, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    offset_frames(video, frame, 1.0)
}

fn offset_frames(video: &Tensor<f32>, frame: &Tensor<f32>, sign: f32) -> Result<Tensor<f32>> {
    if video.rank() != 4 || video.shape()[1..] != *frame.shape() {
        return Err(CoreError::Shape(format!("cannot offset {:?} by a {:?} frame", video.shape(), frame.shape())));
    }
    let mut out = video.clone();
    let n = frame.numel();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += sign * frame.data()[i % n];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_is_deterministic_and_bounded() {
        let a = timestep_embedding(17, 1000, 8);
        assert_eq!(a, timestep_embedding(17, 1000, 8));
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, timestep_embedding(18, 1000, 8));
    }

    #[test]
    fn zero_initialized_output() {
        let d = Denoiser::new(
            DenoiserKind::Video,
            (4, 4),
            4,
            100,
            ArchConfig::default(),
            LatentStats::identity(4),
            LatentStats::identity(4),
            1,
        )
        .unwrap();
        let z = Tensor::full(&[4, 4, 4, 4], 0.3f32);
        let cond = Conditioning {
            anchor: Tensor::full(&[4, 4, 4], 1.0),
            ef: 50.0,
        };
        let v = d.predict(&z, 10, Some(&cond)).unwrap();
        assert_eq!(v, Tensor::zeros(&[4, 4, 4, 4]));
        assert!(d.predict(&z, 10, None).is_err());
    }

    #[test]
    fn ef_changes_only_its_channel() {
        let d = Denoiser::new(
            DenoiserKind::Video,
            (4, 4),
            2,
            100,
            ArchConfig::default(),
            LatentStats::identity(4),
            LatentStats::identity(4),
            1,
        )
        .unwrap();
        let z = Tensor::full(&[2, 4, 4, 4], 0.1f32);
        let mk = |ef| Conditioning {
            anchor: Tensor::full(&[4, 4, 4], 0.5),
            ef,
        };
        let a = d.assemble_input(&z, 5, Some(&mk(15.0))).unwrap();
        let b = d.assemble_input(&z, 5, Some(&mk(70.0))).unwrap();
        let cin = a.shape()[1];
        for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            let ch = (i / 16) % cin;
            if ch == 8 {
                assert_eq!((*x, *y), (0.15, 0.7));
            } else {
                assert_eq!(x, y);
            }
        }
    }
}
