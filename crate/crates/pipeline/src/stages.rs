//! The protocol stages. Each reads the artifacts of earlier stages from the
//! run directory and returns the files it wrote.

use std::fs;
use std::path::PathBuf;

use echosyn_core::codec::{Codec, HaarCodec};
use echosyn_core::denoisers::{self, Denoiser, LabeledLatent};
use echosyn_core::downstream::{self, EfExample};
use echosyn_core::echotoy::{self, DatasetManifest, ManifestRecord, Split, View};
use echosyn_core::metrics::{self, FeatureExtractor, MetricRow, MetricValue};
use echosyn_core::privacy::{self, FilterVerdict, PrivacyCalibration, ReidEmbedder};
use echosyn_core::schedule::DiffusionSampleConfig;
use echosyn_core::stitcher::{self, SeamStats, StitchPlan};
use echosyn_core::{par, rng, video};
use echosyn_nn::Tensor;
use rand::Rng;

use crate::error::{PipelineError, Result};
use crate::store::{ensure_dir, write_text, Run};

pub const REAL_DIR: &str = "data/real";
pub const SYN_DIR: &str = "data/synthetic";
pub const LATENT_DIR: &str = "latents/real";
pub const REID_MODEL: &str = "models/reid.ensw";
pub const LIDM_MODEL: &str = "models/lidm.ensw";
pub const LVDM_MODEL: &str = "models/lvdm.ensw";
pub const CALIBRATION: &str = "privacy/calibration.txt";
pub const VERDICTS: &str = "privacy/verdicts.csv";
pub const FILTER_SUMMARY: &str = "privacy/summary.txt";
pub const ANCHORS: &str = "synthetic/anchors.evt";
pub const ANCHORS_ALL: &str = "synthetic/anchors_all.evt";
pub const ANCHOR_IDS: &str = "synthetic/anchors.csv";
pub const METRICS: &str = "reports/metrics.csv";
pub const DOWNSTREAM: &str = "reports/downstream.csv";
pub const DOWNSTREAM_SUMMARY: &str = "reports/downstream.txt";
pub const REPORT: &str = "report.txt";

/// Offsets that keep the anchor and video noise streams apart.
const ANCHOR_STREAM: u64 = 0x616e_6368_6f72;
const VIDEO_STREAM: u64 = 0x7669_6465_6f00;

pub const STAGES: [&str; 11] = [
    "data",
    "encode",
    "reid",
    "calibrate",
    "lidm",
    "lvdm",
    "anchors",
    "videos",
    "metrics",
    "downstream",
    "report",
];

fn io_err(p: &std::path::Path, e: std::io::Error) -> PipelineError {
    PipelineError::Other(format!("{}: {e}", p.display()))
}

fn rel(dir: &str, name: &str) -> String {
    format!("{dir}/{name}")
}

/// A manifest written by this run; refuses one from another config.
pub fn load_manifest(run: &Run, dir: &str) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(&run.path(&rel(dir, "manifest.csv")))?;
    if m.config_hash != run.hash {
        return Err(PipelineError::Mismatch(format!(
            "{dir}/manifest.csv was written under config {}, current config is {}",
            m.config_hash, run.hash
        )));
    }
    Ok(m)
}

pub fn load_videos(m: &DatasetManifest, split: Option<Split>) -> Result<Vec<(ManifestRecord, Tensor<f32>)>> {
    let recs: Vec<&ManifestRecord> = m.records.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect();
    let vids = par::try_map(&recs, |r| m.load_video(r))?;
    Ok(recs.into_iter().cloned().zip(vids).collect())
}

fn latent_path(run: &Run, id: &str) -> PathBuf {
    run.path(&rel(LATENT_DIR, &format!("{id}.evt")))
}

pub fn load_latents(run: &Run, recs: &[ManifestRecord]) -> Result<Vec<Tensor<f32>>> {
    Ok(par::try_map(recs, |r| video::load(&latent_path(run, &r.id)))?)
}

pub fn first_frame(v: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(v.slice_rows(0, 1)?.reshape(&v.shape()[1..])?)
}

fn frame(v: &Tensor<f32>, i: usize) -> Result<Tensor<f32>> {
    Ok(v.slice_rows(i, 1)?.reshape(&v.shape()[1..])?)
}

fn loss_csv(trace: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

pub fn data(run: &Run) -> Result<Vec<String>> {
    let cfg = &run.cfg;
    let samples = echotoy::generate_samples(&cfg.toy(), cfg.data.videos, cfg.data.fractions)?;
    let dir = run.path(REAL_DIR);
    let m = echotoy::write_dataset(&dir, "echotoy", &run.hash, cfg.seed, &samples)?;
    let mut out = vec![rel(REAL_DIR, "manifest.csv")];
    out.extend(m.records.iter().map(|r| rel(REAL_DIR, &r.path.to_string_lossy())));
    Ok(out)
}

pub fn encode(run: &Run) -> Result<Vec<String>> {
    let m = load_manifest(run, REAL_DIR)?;
    ensure_dir(run, LATENT_DIR)?;
    let ids = par::try_map(&m.records, |r| -> Result<String> {
        let v = m.load_video(r)?;
        let z = HaarCodec.encode_video(&v)?;
        video::save(&latent_path(run, &r.id), &z)?;
        Ok(rel(LATENT_DIR, &format!("{}.evt", r.id)))
    })?;
    Ok(ids)
}

fn split_latents(run: &Run, split: Split) -> Result<(Vec<ManifestRecord>, Vec<Tensor<f32>>)> {
    let m = load_manifest(run, REAL_DIR)?;
    let recs: Vec<ManifestRecord> = m.split(split).cloned().collect();
    let lat = load_latents(run, &recs)?;
    Ok((recs, lat))
}

pub fn reid(run: &Run) -> Result<Vec<String>> {
    let (_, lat) = split_latents(run, Split::Train)?;
    let (emb, trace) = privacy::train_reid(&lat, &run.cfg.reid_train())?;
    ensure_dir(run, "models")?;
    emb.save(&run.path(REID_MODEL))?;
    Ok(vec![REID_MODEL.into(), write_text(run, "models/reid_loss.csv", &loss_csv(&trace))?])
}

pub fn calibrate(run: &Run) -> Result<Vec<String>> {
    let emb = ReidEmbedder::load(&run.path(REID_MODEL))?;
    let (_, train) = split_latents(run, Split::Train)?;
    let (_, val) = split_latents(run, Split::Val)?;
    let tf: Vec<Tensor<f32>> = train.iter().map(first_frame).collect::<Result<_>>()?;
    let vf: Vec<Tensor<f32>> = val.iter().map(first_frame).collect::<Result<_>>()?;
    let cal = privacy::calibrate_tau_with(
        &emb,
        &tf.iter().collect::<Vec<_>>(),
        &vf.iter().collect::<Vec<_>>(),
        run.cfg.privacy.percentile,
        run.cfg.privacy.calibration,
        run.cfg.seed,
    )?;
    ensure_dir(run, "privacy")?;
    cal.save(&run.path(CALIBRATION))?;
    Ok(vec![CALIBRATION.into()])
}

pub fn lidm(run: &Run) -> Result<Vec<String>> {
    let (_, lat) = split_latents(run, Split::Train)?;
    // Every frame of every training video is an image sample.
    let images: Vec<Tensor<f32>> = lat.iter().flat_map(|v| (0..v.shape()[0]).map(move |i| frame(v, i))).collect::<Result<_>>()?;
    let s = images[0].shape().to_vec();
    let sched = run.cfg.schedule.build()?;
    let (den, trace) = denoisers::train_lidm(&images, &sched, (s[1], s[2]), run.cfg.lidm.arch.clone(), &run.cfg.lidm_train())?;
    ensure_dir(run, "models")?;
    den.save(&run.path(LIDM_MODEL))?;
    Ok(vec![LIDM_MODEL.into(), write_text(run, "models/lidm_loss.csv", &loss_csv(&trace))?])
}

pub fn lvdm(run: &Run) -> Result<Vec<String>> {
    let (recs, lat) = split_latents(run, Split::Train)?;
    let videos: Vec<LabeledLatent> = recs
        .iter()
        .zip(lat)
        .map(|(r, l)| LabeledLatent {
            id: r.id.clone(),
            latents: l,
            ef: r.ef,
        })
        .collect();
    let sched = run.cfg.schedule.build()?;
    let (den, trace) = denoisers::train_lvdm(&videos, &sched, run.cfg.lvdm.window, run.cfg.lvdm.arch.clone(), &run.cfg.lvdm_train())?;
    ensure_dir(run, "models")?;
    den.save(&run.path(LVDM_MODEL))?;
    Ok(vec![LVDM_MODEL.into(), write_text(run, "models/lvdm_loss.csv", &loss_csv(&trace))?])
}

/// Number of synthetic videos the run must produce.
pub fn synthetic_target(run: &Run) -> Result<usize> {
    match run.cfg.synthetic.count {
        Some(n) => Ok(n),
        None => Ok(load_manifest(run, REAL_DIR)?.count(Split::Train)),
    }
}

/// Frames per synthetic video: configured, or the mean real length rounded
/// half up to the nearest stitchable length.
pub fn synthetic_length(run: &Run) -> Result<usize> {
    if let Some(f) = run.cfg.synthetic.frames {
        return Ok(f);
    }
    let m = load_manifest(run, REAL_DIR)?;
    let mean = m.records.iter().map(|r| r.num_frames as f64).sum::<f64>() / m.records.len() as f64;
    Ok(StitchPlan::nearest_valid_length(mean, run.cfg.lvdm.window))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSummary {
    pub target: usize,
    pub attempted: usize,
    pub rejected: usize,
    pub batches: usize,
    pub tau: f64,
}

impl FilterSummary {
    pub fn rejection_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.rejected as f64 / self.attempted as f64
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "target={}\nattempted={}\nrejected={}\nbatches={}\ntau={}\nrejection_rate={}\n",
            self.target,
            self.attempted,
            self.rejected,
            self.batches,
            self.tau,
            self.rejection_rate()
        )
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let get = |k: &str| text.lines().find_map(|l| l.strip_prefix(&format!("{k}=")).map(str::to_string));
        Some(Self {
            target: get("target")?.parse().ok()?,
            attempted: get("attempted")?.parse().ok()?,
            rejected: get("rejected")?.parse().ok()?,
            batches: get("batches")?.parse().ok()?,
            tau: get("tau")?.parse().ok()?,
        })
    }
}

/// Sample anchor frames from the image model and keep those the privacy
/// filter accepts. Batches are twice the remaining deficit; after
/// `max_batches` batches a remaining deficit is an error.
pub fn anchors(run: &Run) -> Result<Vec<String>> {
    let cfg = &run.cfg;
    let lidm = Denoiser::load(&run.path(LIDM_MODEL))?;
    let emb = ReidEmbedder::load(&run.path(REID_MODEL))?;
    let cal = PrivacyCalibration::load(&run.path(CALIBRATION))?;
    let (recs, train) = split_latents(run, Split::Train)?;
    let train_first: Vec<Tensor<f32>> = train.iter().map(first_frame).collect::<Result<_>>()?;
    let train_set: Vec<(String, &Tensor<f32>)> = recs.iter().map(|r| r.id.clone()).zip(train_first.iter()).collect();
    let fshape = train_first[0].shape().to_vec();
    let target = synthetic_target(run)?;
    let sched = cfg.schedule.build()?;
    let base = DiffusionSampleConfig::new(cfg.schedule.sampler, cfg.schedule.sampling_steps, cfg.seed ^ ANCHOR_STREAM);

    let mut all: Vec<Tensor<f32>> = Vec::new();
    let mut verdicts: Vec<FilterVerdict> = Vec::new();
    let mut accepted: Vec<usize> = Vec::new();
    let mut batches = 0;
    while accepted.len() < target {
        if batches == cfg.privacy.max_batches {
            return Err(PipelineError::Other(format!(
                "only {} of {target} anchors passed the privacy filter after {batches} batches ({} sampled)",
                accepted.len(),
                all.len()
            )));
        }
        let n = 2 * (target - accepted.len());
        let start = all.len();
        let batch = par::try_map_range(n, |j| {
            denoisers::sample_image(&lidm, &sched, &base.clone().with_sample((start + j) as u64), (fshape[1], fshape[2]))
        })?;
        let named: Vec<(String, &Tensor<f32>)> = batch.iter().enumerate().map(|(j, a)| (format!("anchor-{:05}", start + j), a)).collect();
        let v = privacy::filter(&cal, &emb, &named, &train_set)?;
        for (j, verdict) in v.iter().enumerate() {
            if verdict.accepted && accepted.len() < target {
                accepted.push(start + j);
            }
        }
        verdicts.extend(v);
        all.extend(batch);
        batches += 1;
    }
    let summary = FilterSummary {
        target,
        attempted: all.len(),
        rejected: verdicts.iter().filter(|v| !v.accepted).count(),
        batches,
        tau: cal.tau,
    };
    ensure_dir(run, "synthetic")?;
    let as_rows = |idx: &mut dyn Iterator<Item = usize>| -> Result<Tensor<f32>> {
        let rows: Vec<Tensor<f32>> = idx
            .map(|i| all[i].clone().reshape(&[1, fshape[0], fshape[1], fshape[2]]))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Tensor::stack_rows(&rows)?)
    };
    video::save(&run.path(ANCHORS), &as_rows(&mut accepted.iter().copied())?)?;
    video::save(&run.path(ANCHORS_ALL), &as_rows(&mut (0..all.len()))?)?;
    let mut ids = String::from("index,anchor_id,nearest_id,min_distance\n");
    for (k, &i) in accepted.iter().enumerate() {
        let v = &verdicts[i];
        ids.push_str(&format!("{k},{},{},{}\n", v.id, v.nearest_id, v.min_distance));
    }
    Ok(vec![
        ANCHORS.into(),
        ANCHORS_ALL.into(),
        write_text(run, ANCHOR_IDS, &ids)?,
        write_text(run, VERDICTS, &privacy::verdicts_to_csv(&verdicts))?,
        write_text(run, FILTER_SUMMARY, &summary.to_text())?,
    ])
}

pub fn load_filter_summary(run: &Run) -> Result<FilterSummary> {
    let p = run.path(FILTER_SUMMARY);
    let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
    FilterSummary::from_text(&text).ok_or_else(|| PipelineError::Other(format!("{}: malformed summary", p.display())))
}

/// EF labels for synthetic videos, resampled from the real training labels.
pub fn draw_efs(run: &Run, n: usize) -> Result<Vec<f64>> {
    let m = load_manifest(run, REAL_DIR)?;
    let efs: Vec<f64> = m.split(Split::Train).map(|r| r.ef).collect();
    Ok((0..n)
        .map(|i| {
            let mut r = rng::stream(run.cfg.seed, rng::domain::EF_DRAW, i as u64);
            efs[r.random_range(0..efs.len())]
        })
        .collect())
}

pub fn video_sample_config(run: &Run) -> DiffusionSampleConfig {
    DiffusionSampleConfig::new(run.cfg.schedule.sampler, run.cfg.schedule.sampling_steps, run.cfg.seed ^ VIDEO_STREAM)
}

/// Animate one latent anchor and decode to pixels in [0, 1].
pub fn render_video(run: &Run, lvdm: &Denoiser, anchor: &Tensor<f32>, ef: f64, frames: usize, sample_id: u64) -> Result<Tensor<f32>> {
    let sched = run.cfg.schedule.build()?;
    let z = denoisers::sample_video(lvdm, anchor, ef, frames, &sched, &video_sample_config(run).with_sample(sample_id))?;
    Ok(HaarCodec.decode_video(&z)?.map(|v| v.clamp(0.0, 1.0)))
}

pub fn videos(run: &Run) -> Result<Vec<String>> {
    let lvdm = Denoiser::load(&run.path(LVDM_MODEL))?;
    let anchors = video::load(&run.path(ANCHORS))?;
    let n = anchors.shape()[0];
    let frames = synthetic_length(run)?;
    let efs = draw_efs(run, n)?;
    let toy = run.cfg.toy();
    let rendered = par::try_map_range(n, |i| -> Result<(Tensor<f32>, View)> {
        let v = render_video(run, &lvdm, &first_frame(&anchors.slice_rows(i, 1)?)?, efs[i], frames, i as u64)?;
        let view = echotoy::estimate_view(&first_frame(&v)?, &toy)?;
        Ok((v, view))
    })?;
    let counts = echotoy::split_counts(n, [0.8, 0.0, 0.2])?;
    let dir = ensure_dir(run, &rel(SYN_DIR, "videos"))?;
    let mut records = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n + 1);
    for (i, (v, view)) in rendered.iter().enumerate() {
        let id = format!("syn-{i:05}");
        let path = PathBuf::from("videos").join(format!("{id}.evt"));
        video::save(&dir.join(format!("{id}.evt")), v)?;
        out.push(rel(SYN_DIR, &path.to_string_lossy()));
        records.push(ManifestRecord {
            id,
            path,
            ef: efs[i],
            split: if i < counts[0] { Split::Train } else { Split::Test },
            num_frames: v.shape()[0],
            view: *view,
        });
    }
    let m = DatasetManifest {
        name: "echotoy-synthetic".into(),
        config_hash: run.hash.clone(),
        seed: run.cfg.seed,
        root: run.path(SYN_DIR),
        records,
    };
    m.save(&run.path(&rel(SYN_DIR, "manifest.csv")))?;
    out.insert(0, rel(SYN_DIR, "manifest.csv"));
    Ok(out)
}

fn all_frames(videos: &[&Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::new();
    for v in videos {
        for i in 0..v.shape()[0] {
            out.push(frame(v, i)?);
        }
    }
    Ok(out)
}

pub fn metrics(run: &Run) -> Result<Vec<String>> {
    let cfg = &run.cfg;
    let seed = cfg.seed;
    let toy = cfg.toy();
    let ex = FeatureExtractor::new(toy.height, toy.width, seed)?;
    let real_m = load_manifest(run, REAL_DIR)?;
    let syn_m = load_manifest(run, SYN_DIR)?;
    let real_train = load_videos(&real_m, Some(Split::Train))?;
    let real_test = load_videos(&real_m, Some(Split::Test))?;
    let syn = load_videos(&syn_m, None)?;
    let rv: Vec<&Tensor<f32>> = real_train.iter().map(|(_, v)| v).collect();
    let sv: Vec<&Tensor<f32>> = syn.iter().map(|(_, v)| v).collect();
    let row = |name: &str, value: MetricValue, std: Option<f64>, n_real: usize, n_fake: usize| MetricRow {
        name: name.into(),
        value,
        std,
        n_real,
        n_fake,
        extractor: ex.hash().to_string(),
        seed,
    };
    let mut rows = Vec::new();

    // Codec reconstruction of held-out real videos.
    let test_recs: Vec<ManifestRecord> = real_test.iter().map(|(r, _)| r.clone()).collect();
    let test_lat = load_latents(run, &test_recs)?;
    let recon = par::try_map_range(real_test.len(), |i| -> Result<metrics::ReconMetrics> {
        let dec = HaarCodec.decode_video(&test_lat[i])?.map(|v| v.clamp(0.0, 1.0));
        Ok(metrics::recon_metrics(&real_test[i].1, &dec)?)
    })?;
    let nt = recon.len();
    let avg = |f: fn(&metrics::ReconMetrics) -> f64| recon.iter().map(f).sum::<f64>() / nt as f64;
    rows.push(row("recon_mse", MetricValue::Value(avg(|m| m.mse)), None, nt, nt));
    rows.push(row("recon_mae", MetricValue::Value(avg(|m| m.mae)), None, nt, nt));
    rows.push(row("recon_psnr", MetricValue::Value(avg(|m| m.psnr)), None, nt, nt));
    rows.push(row("recon_ssim", MetricValue::Value(avg(|m| m.ssim)), None, nt, nt));

    // Anchor frames before and after filtering, against real first frames.
    let real_first: Vec<Tensor<f32>> = rv.iter().map(|v| first_frame(v)).collect::<Result<_>>()?;
    let rf: Vec<&Tensor<f32>> = real_first.iter().collect();
    for (name, path) in [("fid_anchors_unfiltered", ANCHORS_ALL), ("fid_anchors_filtered", ANCHORS)] {
        let dec = HaarCodec.decode_video(&video::load(&run.path(path))?)?.map(|v| v.clamp(0.0, 1.0));
        let frames = all_frames(&[&dec])?;
        let ff: Vec<&Tensor<f32>> = frames.iter().collect();
        rows.push(row(name, MetricValue::Value(metrics::fid(&rf, &ff, &ex)?), None, rf.len(), ff.len()));
    }

    // All frames of the real training videos against all synthetic frames.
    let real_frames = all_frames(&rv)?;
    let syn_frames = all_frames(&sv)?;
    let rfr: Vec<&Tensor<f32>> = real_frames.iter().collect();
    let sfr: Vec<&Tensor<f32>> = syn_frames.iter().collect();
    rows.push(row(
        "fid_frames",
        MetricValue::Value(metrics::fid(&rfr, &sfr, &ex)?),
        None,
        rfr.len(),
        sfr.len(),
    ));
    for &clip in &cfg.metrics.fvd_clips {
        rows.push(row(&format!("fvd{clip}"), metrics::fvd(&rv, &sv, clip, &ex)?, None, rv.len(), sv.len()));
    }
    // Frame-difference continuity across window boundaries.
    let plan = StitchPlan::new(synthetic_length(run)?, cfg.lvdm.window)?;
    if plan.k >= 2 {
        let seams = sv.iter().map(|v| stitcher::seam_stats(v, &plan)).collect::<echosyn_core::Result<Vec<_>>>()?;
        let pooled = SeamStats::pool(&seams)?;
        rows.push(row("seam_boundary_mad", MetricValue::Value(pooled.boundary), None, 0, sv.len()));
        rows.push(row("seam_within_mad", MetricValue::Value(pooled.within), None, 0, sv.len()));
        rows.push(row("seam_ratio", MetricValue::Value(pooled.ratio()), None, 0, sv.len()));
    }
    for (name, frames) in [("is_real", &rfr), ("is_synthetic", &sfr)] {
        let probs = par::try_map(frames, |f| ex.class_probabilities(f))?;
        let (m, s) = metrics::inception_score(&probs, metrics::IS_SPLITS)?;
        rows.push(row(name, MetricValue::Value(m), Some(s), rfr.len(), frames.len()));
    }
    ensure_dir(run, "reports")?;
    Ok(vec![write_text(run, METRICS, &metrics::report_to_csv(&rows))?])
}

fn ef_examples(v: &[(ManifestRecord, Tensor<f32>)]) -> Vec<EfExample<'_>> {
    v.iter()
        .map(|(r, t)| EfExample {
            id: r.id.as_str(),
            video: t,
            ef: r.ef,
        })
        .collect()
}

pub fn downstream(run: &Run) -> Result<Vec<String>> {
    let cfg = &run.cfg;
    let real_m = load_manifest(run, REAL_DIR)?;
    let syn_m = load_manifest(run, SYN_DIR)?;
    let train = load_videos(&real_m, Some(Split::Train))?;
    let test = load_videos(&real_m, Some(Split::Test))?;
    let syn = load_videos(&syn_m, None)?;
    let mask = echotoy::cone_mask(&cfg.toy());
    let cmp = downstream::compare_protocol(
        &ef_examples(&train),
        &ef_examples(&syn),
        &ef_examples(&test),
        &mask,
        &cfg.downstream.regressor,
        cfg.seed,
        cfg.downstream.synthetic_only,
    )?;
    ensure_dir(run, "reports")?;
    Ok(vec![
        write_text(run, DOWNSTREAM, &cmp.to_csv())?,
        write_text(run, DOWNSTREAM_SUMMARY, &cmp.summary())?,
    ])
}
