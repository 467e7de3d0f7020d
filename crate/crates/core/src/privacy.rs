//! Re-identification privacy filter.
//!
//! A small embedder is trained contrastively so that frames of the same video
//! land close together under Pearson distance. A threshold `tau` is calibrated
//! as the 5th percentile of distances between real training and validation
//! videos, and a synthetic sample is rejected when its nearest training video
//! is strictly closer than `tau`.
//!
//! Two calibration distributions are offered. [`TauMethod::Pairwise`] uses
//! every train x validation distance. [`TauMethod::NearestTrain`] uses, per
//! validation video, the distance to its closest training video, which is the
//! same statistic the filter applies to synthetic samples; with it, about 5%
//! of unseen real videos would be flagged. With a few hundred training videos
//! the pairwise threshold sits above nearly every nearest-neighbour distance
//! and flags almost all unseen real videos.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use echosyn_nn::{checkpoint, Adam, Layer, Network, Tensor};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::codec::LatentStats;
use crate::error::{ensure, CoreError, Result};
use crate::{hash, par, rng};

pub const MARGIN_POS: f64 = 0.2;
pub const MARGIN_NEG: f64 = 0.8;
pub const PERCENTILE: f64 = 5.0;

/// Below this centered norm a vector is treated as constant.
const FLAT: f64 = 1e-12;

/// `1 - r` with the degeneracy flag: a constant vector has no correlation and
/// gets distance 1.
pub fn pearson_distance_flagged(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    ensure(a.len() == b.len() && a.len() >= 2, || {
        format!("pearson distance needs equal lengths >= 2, got {} and {}", a.len(), b.len())
    })?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa.sqrt() < FLAT || bb.sqrt() < FLAT {
        return Ok((1.0, true));
    }
    let r = (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0);
    Ok((1.0 - r, false))
}

pub fn pearson_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(pearson_distance_flagged(a, b)?.0)
}

/// Distance and its gradients with respect to both inputs.
fn pearson_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ac: Vec<f64> = a.iter().map(|x| x - ma).collect();
    let bc: Vec<f64> = b.iter().map(|y| y - mb).collect();
    let na = ac.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = bc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < FLAT || nb < FLAT {
        return (1.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let r = ac.iter().zip(&bc).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    // d = 1 - r; centered vectors make the centering Jacobian drop out.
    let ga = ac.iter().zip(&bc).map(|(x, y)| -(y / (na * nb) - r * x / (na * na))).collect();
    let gb = ac.iter().zip(&bc).map(|(x, y)| -(x / (na * nb) - r * y / (nb * nb))).collect();
    (1.0 - r, ga, gb)
}

/// Embeds a single latent frame (C, H, W). The network's last layer is only
/// used for training; embeddings are the activations feeding it.
#[derive(Clone, Debug)]
pub struct ReidEmbedder {
    pub net: Network<f32>,
    pub stats: LatentStats,
}

fn reid_layers(dim: usize) -> Vec<Layer> {
    vec![
        Layer::Conv2d {
            out_channels: 16,
            kernel: 3,
            stride: 1,
        },
        Layer::Silu,
        Layer::Conv2d {
            out_channels: 32,
            kernel: 3,
            stride: 2,
        },
        Layer::Silu,
        Layer::Affine { out_shape: vec![dim] },
        Layer::Silu,
        Layer::Affine { out_shape: vec![dim / 2] },
    ]
}

impl ReidEmbedder {
    pub const EMBED_DIM: usize = 64;

    pub fn new(frame_shape: &[usize], stats: LatentStats, seed: u64) -> Result<Self> {
        ensure(frame_shape.len() == 3, || format!("reid frames must be (C, H, W), got {frame_shape:?}"))?;
        ensure(stats.mean.len() == frame_shape[0], || "latent stats do not match the frame channels".into())?;
        let mut input = vec![1];
        input.extend_from_slice(frame_shape);
        let mut r = rng::stream(seed, rng::domain::INIT, rng::domain::TRAIN_REID);
        let net = Network::new(reid_layers(Self::EMBED_DIM), &input, &mut r)?;
        Ok(Self { net, stats })
    }

    pub fn frame_shape(&self) -> &[usize] {
        &self.net.input_shape()[1..]
    }

    fn input(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
        if frame.shape() != self.frame_shape() {
            return Err(CoreError::Shape(format!(
                "reid embedder takes frames of {:?}, got {:?}",
                self.frame_shape(),
                frame.shape()
            )));
        }
        Ok(self.stats.normalize(frame)?.reshape(self.net.input_shape())?)
    }

    pub fn embed(&self, frame: &Tensor<f32>) -> Result<Vec<f64>> {
        let e = self.net.forward_truncated(&self.input(frame)?, 1)?;
        Ok(e.to_f64_vec())
    }

    pub fn embed_all(&self, frames: &[&Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        par::try_map(frames, |f| self.embed(f))
    }

    /// Content hash of weights and input statistics.
    pub fn fingerprint(&self) -> String {
        let recs = self.to_records();
        hash::tensors_hash(recs.iter().map(|(_, t)| t))
    }

    pub fn to_records(&self) -> Vec<(String, Tensor<f32>)> {
        let shape: Vec<f32> = self.frame_shape().iter().map(|&s| s as f32).collect();
        let mut recs = vec![("meta.reid".to_string(), Tensor::from_vec(&[3], shape).expect("rank 3"))];
        recs.extend(self.stats.to_records("latent"));
        recs.extend(self.net.params().iter().map(|p| (p.name.clone(), p.value.clone())));
        recs
    }

    pub fn from_records(records: &[(String, Tensor<f32>)]) -> Result<Self> {
        let meta = records
            .iter()
            .find(|(n, _)| n == "meta.reid")
            .map(|(_, t)| t.data().to_vec())
            .ok_or_else(|| CoreError::InvalidArgument("checkpoint is not a reid embedder (no `meta.reid`)".into()))?;
        ensure(meta.len() == 3, || "malformed reid metadata".into())?;
        let shape: Vec<usize> = meta.iter().map(|&v| v as usize).collect();
        let stats = LatentStats::from_records(records, "latent")?;
        let mut e = Self::new(&shape, stats, 0)?;
        let params: Vec<_> = records
            .iter()
            .filter(|(n, _)| !n.starts_with("meta.") && !n.starts_with("latent."))
            .cloned()
            .collect();
        e.net.load_params(&params)?;
        Ok(e)
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReidTrainConfig {
    pub steps: usize,
    /// Pairs per step, alternating positive and negative.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ReidTrainConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            batch: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

fn pair_loss(d: f64, positive: bool) -> (f64, f64) {
    if positive {
        let h = (d - MARGIN_POS).max(0.0);
        (h * h, 2.0 * h)
    } else {
        let h = (MARGIN_NEG - d).max(0.0);
        (h * h, -2.0 * h)
    }
}

/// Train on latent videos (T, C, H, W), one identity per video. Positive
/// pairs are two distinct frames of one video, negatives are frames of two
/// different videos. Returns the embedder and the per-step mean loss.
pub fn train_reid(videos: &[Tensor<f32>], cfg: &ReidTrainConfig) -> Result<(ReidEmbedder, Vec<f64>)> {
    if videos.len() < 2 {
        return Err(CoreError::Degenerate(format!("reid training needs at least 2 videos, got {}", videos.len())));
    }
    ensure(cfg.steps >= 1 && cfg.batch >= 2 && cfg.lr > 0.0, || {
        "reid training needs steps >= 1, batch >= 2, lr > 0".into()
    })?;
    let shape = videos[0].shape().to_vec();
    for (i, v) in videos.iter().enumerate() {
        if v.rank() != 4 || v.shape()[1..] != shape[1..] {
            return Err(CoreError::Shape(format!(
                "video {i} has shape {:?}, expected (T, {:?})",
                v.shape(),
                &shape[1..]
            )));
        }
        if v.shape()[0] < 2 {
            return Err(CoreError::Degenerate(format!("video {i} has fewer than 2 frames")));
        }
    }
    let stats = LatentStats::fit(videos.iter())?;
    let mut emb = ReidEmbedder::new(&shape[1..], stats, cfg.seed)?;
    let frames: Vec<Vec<Tensor<f32>>> = videos
        .iter()
        .map(|v| (0..v.shape()[0]).map(|f| emb.input(&v.slice_rows(f, 1)?.reshape(&shape[1..])?)).collect())
        .collect::<Result<_>>()?;
    let mut opt = Adam::new(emb.net.params(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.seed, rng::domain::TRAIN_REID, step as u64);
        let pairs: Vec<(usize, usize, usize, usize, bool)> = (0..cfg.batch)
            .map(|j| {
                let positive = j % 2 == 0;
                let va = r.random_range(0..frames.len());
                let vb = if positive {
                    va
                } else {
                    (va + r.random_range(1..frames.len())) % frames.len()
                };
                let fa = r.random_range(0..frames[va].len());
                let fb = if positive {
                    (fa + r.random_range(1..frames[vb].len())) % frames[vb].len()
                } else {
                    r.random_range(0..frames[vb].len())
                };
                (va, fa, vb, fb, positive)
            })
            .collect();
        let net = &emb.net;
        let per_pair = par::try_map(&pairs, |&(va, fa, vb, fb, positive)| -> Result<(f64, Vec<Tensor<f32>>)> {
            let mut ta = net.tape();
            let mut tb = net.tape();
            let ya = ta.forward(&frames[va][fa])?;
            let yb = tb.forward(&frames[vb][fb])?;
            let (d, ga, gb) = pearson_with_grad(&ya.to_f64_vec(), &yb.to_f64_vec());
            let (loss, dl) = pair_loss(d, positive);
            let up = |g: Vec<f64>| Tensor::from_f64_slice(ya.shape(), &g.iter().map(|x| x * dl).collect::<Vec<_>>());
            let mut grads = ta.backward(&up(ga)?)?.params;
            for (acc, g) in grads.iter_mut().zip(&tb.backward(&up(gb)?)?.params) {
                acc.add_assign(g)?;
            }
            Ok((loss, grads))
        })?;
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        for (l, g) in per_pair {
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
        let grads: Vec<Tensor<f32>> = grads.expect("batch >= 2").into_iter().map(|g| g.scale(inv)).collect();
        opt.step(emb.net.params_mut(), &grads)?;
        trace.push(loss / cfg.batch as f64);
    }
    Ok((emb, trace))
}

/// Percentile by linear interpolation between closest ranks of the sorted
/// values (position `p/100 * (n-1)`).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    ensure(!values.is_empty(), || "percentile of an empty set".into())?;
    ensure((0.0..=100.0).contains(&p), || format!("percentile {p} outside [0, 100]"))?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Which distance distribution `tau` is read from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauMethod {
    /// Every train x validation distance.
    #[default]
    Pairwise,
    /// Each validation sample's distance to its nearest training sample.
    NearestTrain,
}

impl TauMethod {
    pub fn name(self) -> &'static str {
        match self {
            TauMethod::Pairwise => "pairwise",
            TauMethod::NearestTrain => "nearest-train",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pairwise" => Some(TauMethod::Pairwise),
            "nearest-train" => Some(TauMethod::NearestTrain),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyCalibration {
    pub tau: f64,
    pub percentile: f64,
    pub method: TauMethod,
    pub n_train: usize,
    pub n_val: usize,
    /// Distances in the calibration distribution.
    pub pairs: usize,
    /// Pairs involving a constant embedding (distance set to 1).
    pub degenerate_pairs: usize,
    pub fingerprint: String,
    pub seed: u64,
}

/// All train x val distances between embedded frames.
pub fn cross_distances(train: &[Vec<f64>], val: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let rows = par::try_map(train, |a| -> Result<Vec<(f64, bool)>> {
        val.iter().map(|b| pearson_distance_flagged(a, b)).collect()
    })?;
    let mut out = Vec::with_capacity(train.len() * val.len());
    let mut flat = 0;
    for (d, f) in rows.into_iter().flatten() {
        out.push(d);
        flat += f as usize;
    }
    Ok((out, flat))
}

/// `tau` from the first frames of training and validation videos.
pub fn calibrate_tau(emb: &ReidEmbedder, train: &[&Tensor<f32>], val: &[&Tensor<f32>], seed: u64) -> Result<PrivacyCalibration> {
    calibrate_tau_at(emb, train, val, PERCENTILE, seed)
}

pub fn calibrate_tau_at(emb: &ReidEmbedder, train: &[&Tensor<f32>], val: &[&Tensor<f32>], pct: f64, seed: u64) -> Result<PrivacyCalibration> {
    calibrate_tau_with(emb, train, val, pct, TauMethod::Pairwise, seed)
}

pub fn calibrate_tau_with(
    emb: &ReidEmbedder,
    train: &[&Tensor<f32>],
    val: &[&Tensor<f32>],
    pct: f64,
    method: TauMethod,
    seed: u64,
) -> Result<PrivacyCalibration> {
    ensure(!train.is_empty() && !val.is_empty(), || {
        "calibration needs non-empty train and validation sets".into()
    })?;
    let et = emb.embed_all(train)?;
    let ev = emb.embed_all(val)?;
    let (d, flat) = match method {
        TauMethod::Pairwise => cross_distances(&et, &ev)?,
        TauMethod::NearestTrain => {
            let nn = nearest(&ev, &et)?;
            let flat = nn.iter().filter(|x| x.2).count();
            (nn.into_iter().map(|x| x.1).collect(), flat)
        }
    };
    Ok(PrivacyCalibration {
        tau: percentile(&d, pct)?,
        percentile: pct,
        method,
        n_train: train.len(),
        n_val: val.len(),
        pairs: d.len(),
        degenerate_pairs: flat,
        fingerprint: emb.fingerprint(),
        seed,
    })
}

impl PrivacyCalibration {
    pub fn to_text(&self) -> String {
        format!(
            "tau={}\npercentile={}\nmethod={}\nn_train={}\nn_val={}\npairs={}\ndegenerate_pairs={}\nembedder={}\nseed={}\n",
            self.tau,
            self.percentile,
            self.method.name(),
            self.n_train,
            self.n_val,
            self.pairs,
            self.degenerate_pairs,
            self.fingerprint,
            self.seed
        )
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut kv = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed line `{line}`"))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| format!("missing `{k}`"));
        let num = |k: &str| -> std::result::Result<f64, String> { get(k)?.parse().map_err(|e| format!("`{k}`: {e}")) };
        let int = |k: &str| -> std::result::Result<usize, String> { get(k)?.parse().map_err(|e| format!("`{k}`: {e}")) };
        Ok(Self {
            tau: num("tau")?,
            percentile: num("percentile")?,
            method: TauMethod::parse(get("method")?).ok_or_else(|| format!("unknown method `{}`", kv["method"]))?,
            n_train: int("n_train")?,
            n_val: int("n_val")?,
            pairs: int("pairs")?,
            degenerate_pairs: int("degenerate_pairs")?,
            fingerprint: get("embedder")?.to_string(),
            seed: get("seed")?.parse().map_err(|e| format!("`seed`: {e}"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_text(&text).map_err(|d| CoreError::format(path, d))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterVerdict {
    pub id: String,
    pub min_distance: f64,
    pub nearest_id: String,
    pub accepted: bool,
    /// The nearest distance came from a constant embedding.
    pub degenerate: bool,
}

/// Nearest training sample for each synthetic embedding. Ties keep the
/// earliest training index.
pub fn nearest(synthetic: &[Vec<f64>], train: &[Vec<f64>]) -> Result<Vec<(usize, f64, bool)>> {
    ensure(!train.is_empty(), || "filtering needs at least one training sample".into())?;
    par::try_map(synthetic, |s| {
        let mut best = (0, f64::INFINITY, false);
        for (j, t) in train.iter().enumerate() {
            let (d, flat) = pearson_distance_flagged(s, t)?;
            if d < best.1 {
                best = (j, d, flat);
            }
        }
        Ok(best)
    })
}

/// Reject synthetic first frames whose nearest training frame is strictly
/// closer than `tau`.
pub fn filter(
    cal: &PrivacyCalibration,
    emb: &ReidEmbedder,
    synthetic: &[(String, &Tensor<f32>)],
    train: &[(String, &Tensor<f32>)],
) -> Result<Vec<FilterVerdict>> {
    let found = emb.fingerprint();
    if found != cal.fingerprint {
        return Err(CoreError::FingerprintMismatch {
            expected: cal.fingerprint.clone(),
            found,
        });
    }
    let es = emb.embed_all(&synthetic.iter().map(|(_, f)| *f).collect::<Vec<_>>())?;
    let et = emb.embed_all(&train.iter().map(|(_, f)| *f).collect::<Vec<_>>())?;
    let near = nearest(&es, &et)?;
    Ok(synthetic
        .iter()
        .zip(near)
        .map(|((id, _), (j, d, flat))| FilterVerdict {
            id: id.clone(),
            min_distance: d,
            nearest_id: train[j].0.clone(),
            accepted: d >= cal.tau,
            degenerate: flat,
        })
        .collect())
}

pub const VERDICT_COLUMNS: &str = "id,min_distance,nearest_id,accepted,degenerate";

pub fn verdicts_to_csv(verdicts: &[FilterVerdict]) -> String {
    let mut s = format!("{VERDICT_COLUMNS}\n");
    for v in verdicts {
        let _ = writeln!(s, "{},{},{},{},{}", v.id, v.min_distance, v.nearest_id, v.accepted, v.degenerate);
    }
    s
}

pub fn verdicts_from_csv(text: &str) -> std::result::Result<Vec<FilterVerdict>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(VERDICT_COLUMNS) {
        return Err(format!("expected header `{VERDICT_COLUMNS}`"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(format!("row {}: expected 5 fields", i + 1));
            }
            let b = |s: &str| s.parse::<bool>().map_err(|e| format!("row {}: {e}", i + 1));
            Ok(FilterVerdict {
                id: f[0].to_string(),
                min_distance: f[1].parse().map_err(|e| format!("row {}: {e}", i + 1))?,
                nearest_id: f[2].to_string(),
                accepted: b(f[3])?,
                degenerate: b(f[4])?,
            })
        })
        .collect()
}

/// Fraction of positive pairs whose distance is strictly below `threshold`.
pub fn recall_from_distances(pairs: &[(f64, bool)], threshold: f64) -> Result<f64> {
    let pos: Vec<f64> = pairs.iter().filter(|(_, p)| *p).map(|(d, _)| *d).collect();
    if pos.is_empty() {
        return Err(CoreError::Degenerate("recall needs at least one positive pair".into()));
    }
    Ok(pos.iter().filter(|d| **d < threshold).count() as f64 / pos.len() as f64)
}

/// A pair of latent frames and whether they share an identity.
pub struct LabeledPair<'a> {
    pub a: &'a Tensor<f32>,
    pub b: &'a Tensor<f32>,
    pub same: bool,
}

pub fn reid_recall(emb: &ReidEmbedder, pairs: &[LabeledPair<'_>], threshold: f64) -> Result<f64> {
    let d = par::try_map(pairs, |p| -> Result<(f64, bool)> {
        Ok((pearson_distance(&emb.embed(p.a)?, &emb.embed(p.b)?)?, p.same))
    })?;
    recall_from_distances(&d, threshold)
}

/// Two frames and whether they share an identity.
pub type FramePair = (Tensor<f32>, Tensor<f32>, bool);

/// Balanced evaluation pairs from latent videos: for every video one pair of
/// distinct frames, and one cross pair with another random video.
pub fn balanced_pairs(videos: &[Tensor<f32>], seed: u64) -> Result<Vec<FramePair>> {
    ensure(videos.len() >= 2, || "balanced pairs need at least 2 videos".into())?;
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let frame = |v: &Tensor<f32>, f: usize| -> Result<Tensor<f32>> { Ok(v.slice_rows(f, 1)?.reshape(&v.shape()[1..])?) };
    let mut out = Vec::with_capacity(2 * videos.len());
    for (i, v) in videos.iter().enumerate() {
        let t = v.shape()[0];
        ensure(t >= 2, || format!("video {i} has fewer than 2 frames"))?;
        let fa = r.random_range(0..t);
        let fb = (fa + r.random_range(1..t)) % t;
        out.push((frame(v, fa)?, frame(v, fb)?, true));
        let j = (i + r.random_range(1..videos.len())) % videos.len();
        let w = &videos[j];
        out.push((frame(v, fa)?, frame(w, r.random_range(0..w.shape()[0]))?, false));
    }
    Ok(out)
}
