//! The end-to-end run, its report, and the sampling benchmarks.

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use echosyn_core::codec::{Codec, HaarCodec};
use echosyn_core::denoisers::{self, Denoiser};
use echosyn_core::stitcher::{self, SeamStats, StitchPlan};
use echosyn_core::{par, video};
use echosyn_nn::Tensor;

use crate::error::{PipelineError, Result};
use crate::stages::{self, *};
use crate::store::{write_text, Run, StageOutcome};

/// Stage name, prerequisite stages, and body.
pub type StageFn = fn(&Run) -> Result<Vec<String>>;

pub fn stage_table() -> Vec<(&'static str, &'static [&'static str], StageFn)> {
    vec![
        ("data", &[], stages::data as StageFn),
        ("encode", &["data"], stages::encode),
        ("reid", &["encode"], stages::reid),
        ("calibrate", &["reid", "encode"], stages::calibrate),
        ("lidm", &["encode"], stages::lidm),
        ("lvdm", &["encode"], stages::lvdm),
        ("anchors", &["lidm", "reid", "calibrate"], stages::anchors),
        ("videos", &["anchors", "lvdm"], stages::videos),
        ("metrics", &["videos", "encode"], stages::metrics),
        ("downstream", &["videos"], stages::downstream),
        ("report", &["anchors", "metrics", "downstream"], report),
    ]
}

/// Run one named stage with its declared prerequisites.
pub fn run_stage(run: &Run, name: &str) -> Result<StageOutcome> {
    let (stage, deps, body) = stage_table()
        .into_iter()
        .find(|(s, _, _)| *s == name)
        .ok_or_else(|| PipelineError::Other(format!("unknown stage `{name}`")))?;
    run.stage(stage, deps, body)
}

/// One regression row of `reports/downstream.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamRow {
    pub train_source: String,
    pub test_source: String,
    pub backend: String,
    pub n: usize,
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

pub fn parse_downstream(text: &str) -> Result<Vec<DownstreamRow>> {
    let bad = |l: &str| PipelineError::Other(format!("malformed downstream row `{l}`"));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() < 7 {
                return Err(bad(l));
            }
            Ok(DownstreamRow {
                train_source: c[0].into(),
                test_source: c[1].into(),
                backend: c[2].into(),
                n: c[3].parse().map_err(|_| bad(l))?,
                r2: c[4].parse().ok(),
                mae: c[5].parse().map_err(|_| bad(l))?,
                rmse: c[6].parse().map_err(|_| bad(l))?,
            })
        })
        .collect()
}

/// Metric name to value ("unavailable" rows are `None`).
pub fn parse_metrics(text: &str) -> BTreeMap<String, Option<f64>> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let mut c = l.split(',');
            let name = c.next()?.to_string();
            Some((name, c.next()?.parse().ok()))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ProtocolReport {
    pub config_hash: String,
    pub seed: u64,
    /// Stage name and the files it wrote, relative to the run directory.
    pub artifacts: Vec<(String, Vec<String>)>,
    pub filter: FilterSummary,
    pub synthetic_frames: usize,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub downstream: Vec<DownstreamRow>,
    /// Wall-clock seconds per stage; the only non-deterministic field.
    pub timings: BTreeMap<String, f64>,
}

impl ProtocolReport {
    pub fn load(run: &Run) -> Result<Self> {
        let mut artifacts = Vec::new();
        for s in STAGES {
            let rec = run.require(s, "protocol")?;
            artifacts.push((s.to_string(), rec.outputs.into_iter().map(|(p, _)| p).collect()));
        }
        let read = |rel: &str| {
            let p = run.path(rel);
            fs::read_to_string(&p).map_err(|e| PipelineError::Other(format!("{}: {e}", p.display())))
        };
        Ok(Self {
            config_hash: run.hash.clone(),
            seed: run.cfg.seed,
            artifacts,
            filter: load_filter_summary(run)?,
            synthetic_frames: synthetic_length(run)?,
            metrics: parse_metrics(&read(METRICS)?),
            downstream: parse_downstream(&read(DOWNSTREAM)?)?,
            timings: run.timings(),
        })
    }

    pub fn rejection_rate(&self) -> f64 {
        self.filter.rejection_rate()
    }

    fn r2(&self, train: &str, test: &str) -> Option<f64> {
        self.downstream
            .iter()
            .find(|r| r.train_source == train && r.test_source == test)
            .and_then(|r| r.r2)
    }

    pub fn real_on_real(&self) -> Option<f64> {
        self.r2("real", "real")
    }

    pub fn syn_on_real(&self) -> Option<f64> {
        self.r2("synthetic", "real")
    }

    pub fn syn_on_syn(&self) -> Option<f64> {
        self.r2("synthetic", "synthetic")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "unavailable".into())
}

/// The human-readable report. Deterministic: no wall-clock values.
fn report(run: &Run) -> Result<Vec<String>> {
    let cfg = &run.cfg;
    let f = load_filter_summary(run)?;
    let metrics = parse_metrics(&fs::read_to_string(run.path(METRICS)).map_err(|e| PipelineError::Other(e.to_string()))?);
    let summary = fs::read_to_string(run.path(DOWNSTREAM_SUMMARY)).map_err(|e| PipelineError::Other(e.to_string()))?;
    let real = load_manifest(run, REAL_DIR)?;
    let syn = load_manifest(run, SYN_DIR)?;
    let mut s = format!("echosyn protocol report\nconfig {}\nseed {}\n\n", run.hash, cfg.seed);
    s.push_str(&format!(
        "real videos: {} (train {}, val {}, test {})\n",
        real.records.len(),
        real.count(echosyn_core::echotoy::Split::Train),
        real.count(echosyn_core::echotoy::Split::Val),
        real.count(echosyn_core::echotoy::Split::Test)
    ));
    s.push_str(&format!(
        "synthetic videos: {} of {} frames, window {}, {} sampling steps ({})\n\n",
        syn.records.len(),
        synthetic_length(run)?,
        cfg.lvdm.window,
        cfg.schedule.sampling_steps,
        cfg.schedule.sampler
    ));
    s.push_str(&format!(
        "privacy filter: tau {:.6} ({} calibration, {}th percentile), {} anchors sampled in {} batches, {} rejected (rate {:.4})\n",
        f.tau,
        cfg.privacy.calibration.name(),
        cfg.privacy.percentile,
        f.attempted,
        f.batches,
        f.rejected,
        f.rejection_rate()
    ));
    s.push_str(
        "note: only the anchor frames are filtered; the animated videos are assumed to\n\
         inherit their privacy from the anchor. Leakage through motion alone is not checked.\n\n",
    );
    s.push_str("metrics\n");
    for (k, v) in &metrics {
        s.push_str(&format!("  {k:<24} {}\n", fmt_opt(*v)));
    }
    s.push_str("\nEF regression\n");
    for l in summary.lines() {
        s.push_str(&format!("  {l}\n"));
    }
    Ok(vec![write_text(run, REPORT, &s)?])
}

/// Run every stage in order. A directory that already holds stage records
/// is only accepted with `--resume`.
pub fn run_protocol(run: &Run) -> Result<ProtocolReport> {
    if !run.resume && run.has_records() {
        return Err(PipelineError::Config(format!(
            "{} already holds stage records; pass --resume or choose a fresh --out",
            run.out.display()
        )));
    }
    for (stage, deps, body) in stage_table() {
        run.stage(stage, deps, body)?;
    }
    ProtocolReport::load(run)
}

/// Anchor for benchmarks and seam checks: the first accepted anchor if the
/// filter stage has run, else the first frame of the first training latent.
fn bench_anchor(run: &Run) -> Result<Tensor<f32>> {
    if run.record("anchors")?.is_some() {
        let a = video::load(&run.path(ANCHORS))?;
        return first_frame(&a);
    }
    run.require("encode", "bench")?;
    let m = load_manifest(run, REAL_DIR)?;
    let rec = m.records.iter().find(|r| r.split == echosyn_core::echotoy::Split::Train).cloned();
    let rec = rec.ok_or_else(|| PipelineError::Other("no training videos".into()))?;
    first_frame(&load_latents(run, &[rec])?[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub frames: usize,
    pub chunks: usize,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Time at twice the sampling steps over time at the configured steps,
    /// both at one window.
    pub steps_ratio: Option<f64>,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frames,chunks,steps,seconds\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:.6}\n", r.frames, r.chunks, r.steps, r.seconds));
        }
        s.push_str(&format!("# fit seconds = {:.6} * k + {:.6}, r2 = {:.4}\n", self.slope, self.intercept, self.r2));
        if let Some(q) = self.steps_ratio {
            s.push_str(&format!("# doubling sampling steps: time ratio {q:.3}\n"));
        }
        s
    }
}

/// Least squares `y = a x + b` with its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock of `reps` latent-video samplings per length.
pub fn bench_sampling(run: &Run, lengths: &[usize], reps: usize, steps_doubling: bool) -> Result<BenchTable> {
    if lengths.is_empty() || reps == 0 {
        return Err(PipelineError::Config("bench needs at least one length and one repetition".into()));
    }
    run.require("lvdm", "bench")?;
    let lvdm = Denoiser::load(&run.path(LVDM_MODEL))?;
    let anchor = bench_anchor(run)?;
    let sched = run.cfg.schedule.build()?;
    let window = run.cfg.lvdm.window;
    let time = |frames: usize, steps: usize| -> Result<f64> {
        let mut cfg = video_sample_config(run);
        cfg.steps_used = steps;
        let mut t = Vec::with_capacity(reps);
        for r in 0..reps {
            let t0 = Instant::now();
            denoisers::sample_video(&lvdm, &anchor, 55.0, frames, &sched, &cfg.clone().with_sample(r as u64))?;
            t.push(t0.elapsed().as_secs_f64());
        }
        Ok(median(t))
    };
    let steps = run.cfg.schedule.sampling_steps;
    let mut rows = Vec::new();
    for &l in lengths {
        let plan = StitchPlan::new(l, window)?;
        rows.push(BenchRow {
            frames: l,
            chunks: plan.k,
            steps,
            seconds: time(l, steps)?,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.chunks as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    let (slope, intercept, r2) = if rows.len() >= 2 {
        linear_fit(&x, &y)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    let steps_ratio = if steps_doubling {
        let base = time(window, steps)?;
        let doubled = time(window, 2 * steps)?;
        rows.push(BenchRow {
            frames: window,
            chunks: 1,
            steps: 2 * steps,
            seconds: doubled,
        });
        Some(doubled / base)
    } else {
        None
    };
    Ok(BenchTable {
        rows,
        slope,
        intercept,
        r2,
        steps_ratio,
    })
}

/// Seam statistics over `n` seeded videos of `frames` frames from the
/// trained video model, measured on decoded pixels.
pub fn seam_check(run: &Run, n: usize, frames: usize) -> Result<SeamStats> {
    run.require("lvdm", "seam check")?;
    let lvdm = Denoiser::load(&run.path(LVDM_MODEL))?;
    let anchor = bench_anchor(run)?;
    let plan = StitchPlan::new(frames, run.cfg.lvdm.window)?;
    let efs = draw_efs(run, n)?;
    let stats = par::try_map_range(n, |i| -> Result<SeamStats> {
        // Sample ids past the synthetic set keep these videos distinct from it.
        let v = render_video(run, &lvdm, &anchor, efs[i], frames, (1 << 32) + i as u64)?;
        Ok(stitcher::seam_stats(&v, &plan)?)
    })?;
    Ok(SeamStats::pool(&stats)?)
}

/// Animate a user-supplied anchor. The anchor file holds either a latent
/// frame (1, 4, h, w) or a pixel frame (1, 1, H, W), which is encoded first.
pub fn generate_one(run: &Run, anchor_file: &std::path::Path, ef: f64, frames: usize, window: usize) -> Result<Tensor<f32>> {
    run.require("lvdm", "generate")?;
    let lvdm = Denoiser::load(&run.path(LVDM_MODEL))?;
    if window != run.cfg.lvdm.window {
        return Err(PipelineError::Config(format!(
            "--window {window} does not match the trained video model's window {}",
            run.cfg.lvdm.window
        )));
    }
    StitchPlan::new(frames, window)?;
    let a = video::load(anchor_file)?;
    let a = if a.shape()[1] == 1 { HaarCodec.encode_video(&a)? } else { a };
    let anchor = first_frame(&a)?;
    let expect = lvdm.latent_shape();
    if anchor.shape() != expect {
        return Err(PipelineError::Config(format!(
            "anchor latent has shape {:?}, the video model expects {expect:?}",
            anchor.shape()
        )));
    }
    render_video(run, &lvdm, &anchor, ef, frames, 0)
}
