use std::time::Instant;

use echosyn_core::codec::LatentStats;
use echosyn_core::denoisers::{ArchConfig, Denoiser, DenoiserKind};
use echosyn_core::rng;
use echosyn_core::schedule::*;
use echosyn_core::stitcher::*;
use echosyn_nn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// v depends only on each element and t, never on other frames.
struct FrameLocal(Option<usize>);

impl VPredictor for FrameLocal {
    fn predict(&self, z: &Tensor<f32>, t: usize, _: Option<&Conditioning>) -> echosyn_core::Result<Tensor<f32>> {
        let k = t as f32 / 1000.0;
        Ok(z.map(|v| (v * 0.7).tanh() * k + 0.1 * v))
    }
    fn window(&self) -> Option<usize> {
        self.0
    }
}

/// v of each frame is the mean over the window; exposes chunk membership.
struct WindowMean(usize);

impl VPredictor for WindowMean {
    fn predict(&self, z: &Tensor<f32>, _: usize, _: Option<&Conditioning>) -> echosyn_core::Result<Tensor<f32>> {
        let n = z.shape()[0];
        let mut mean = vec![0f32; z.row_len()];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(z.row(i)) {
                *m += v / n as f32;
            }
        }
        let rows: Vec<f32> = (0..n).flat_map(|_| mean.clone()).collect();
        Ok(Tensor::from_vec(z.shape(), rows)?)
    }
    fn window(&self) -> Option<usize> {
        Some(self.0)
    }
}

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap()
}

#[test]
fn frame_local_stitching_equals_unchunked() {
    let s = sched();
    for (l_v, l_m) in [(128, 64), (96, 64), (48, 16)] {
        let plan = StitchPlan::new(l_v, l_m).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(l_v as u64);
        let z = rng::gaussian(&[l_v, 4, 4, 4], &mut r);
        for mode in [SamplerMode::Literal, SamplerMode::AncestralDdim] {
            let stitched = denoise_step_stitched(&z, 500, 480, &FrameLocal(Some(l_m)), &s, &plan, None, mode).unwrap();
            let v = FrameLocal(None).predict(&z, 500, None).unwrap();
            let whole = reverse_step(&z, &v, 500, 480, &s, mode).unwrap();
            assert_eq!(stitched, whole, "({l_v}, {l_m}) {mode}");
        }
    }
}

#[test]
fn single_window_is_a_plain_reverse_step() {
    let s = sched();
    let plan = StitchPlan::new(16, 16).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let z = rng::gaussian(&[16, 4, 2, 2], &mut r);
    let d = WindowMean(16);
    let stitched = denoise_step_stitched(&z, 300, 299, &d, &s, &plan, None, SamplerMode::Literal).unwrap();
    let direct = reverse_step(&z, &d.predict(&z, 300, None).unwrap(), 300, 299, &s, SamplerMode::Literal).unwrap();
    assert_eq!(stitched, direct);
}

#[test]
fn later_windows_contribute_only_their_tails() {
    let s = sched();
    let plan = StitchPlan::new(128, 64).unwrap();
    assert_eq!(plan.k, 3);
    assert_eq!(plan.starts, vec![0, 32, 64]);
    assert_eq!((plan.kept(0), plan.kept(1), plan.kept(2)), (0..64, 64..96, 96..128));
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let z = rng::gaussian(&[128, 1, 1, 1], &mut r);
    let d = WindowMean(64);
    let out = denoise_step_stitched(&z, 10, 9, &d, &s, &plan, None, SamplerMode::Literal).unwrap();
    for (i, start) in [(0usize, 0usize), (1, 32), (2, 64)] {
        let chunk = z.slice_rows(start, 64).unwrap();
        let expect = reverse_step(&chunk, &d.predict(&chunk, 10, None).unwrap(), 10, 9, &s, SamplerMode::Literal).unwrap();
        let kept = plan.kept(i);
        let from = kept.start - start;
        assert_eq!(
            out.slice_rows(kept.start, kept.len()).unwrap(),
            expect.slice_rows(from, kept.len()).unwrap(),
            "chunk {i}"
        );
    }
}

#[test]
fn full_length_generation_matches_plain_sampling() {
    let s = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
    let d = WindowMean(16);
    let cfg = DiffusionSampleConfig::new(SamplerMode::AncestralDdim, 20, 3);
    let long = generate_long_video(&d, &[4, 2, 2], 16, &s, &cfg).unwrap();
    assert_eq!(long, sample(&d, &[16, 4, 2, 2], &s, &cfg).unwrap());
}

#[test]
fn long_generation_runs_and_scales_linearly() {
    let s = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
    let d = WindowMean(16);
    let cfg = DiffusionSampleConfig::new(SamplerMode::Literal, 20, 4);
    let v = generate_long_video(&d, &[4, 4, 4], 256, &s, &cfg).unwrap();
    assert_eq!(v.shape(), &[256, 4, 4, 4]);

    // Time an actual (untrained) video network so per-window work dominates.
    let id = LatentStats::identity(4);
    let net = Denoiser::new(DenoiserKind::Video, (4, 4), 16, 100, ArchConfig::default(), id.clone(), id, 1).unwrap();
    let cfg = cfg.with_conditioning(Conditioning {
        anchor: Tensor::zeros(&[4, 4, 4]),
        ef: 50.0,
    });
    let time = |l_v: usize| {
        (0..3)
            .map(|_| {
                let t0 = Instant::now();
                generate_long_video(&net, &[4, 4, 4], l_v, &s, &cfg).unwrap();
                t0.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (short, long) = (time(16), time(64));
    assert!(long / short <= 8.0, "{long} / {short}");
}

#[test]
fn seam_stats_separate_boundary_jumps() {
    let plan = StitchPlan::new(48, 16).unwrap();
    // Frames rise by 1 per frame, plus a jump of 5 entering each later kept range.
    let mut data = Vec::new();
    let mut level = 0.0f32;
    for f in 0..48 {
        if (1..plan.k).any(|i| plan.kept(i).start == f) {
            level += 5.0;
        } else if f > 0 {
            level += 1.0;
        }
        data.extend([level; 4]);
    }
    let v = Tensor::from_vec(&[48, 1, 2, 2], data).unwrap();
    let st = seam_stats(&v, &plan).unwrap();
    assert_eq!(st.boundary_pairs, plan.k - 1);
    assert_eq!(st.boundary_pairs + st.within_pairs, 47);
    assert_eq!((st.boundary, st.within), (5.0, 1.0));
    assert!(seam_stats(&v, &StitchPlan::new(16, 16).unwrap()).is_err());
}
