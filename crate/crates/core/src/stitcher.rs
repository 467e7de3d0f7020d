//! Long-video denoising with half-overlapping windows.
//!
//! At every step the full noisy video is cut into `k` windows of length
//! `l_m` that start `l_m / 2` frames apart. Every window is denoised from the
//! same frozen input; the first window keeps all its frames and each later
//! window keeps only its second half.

use echosyn_nn::Tensor;

use crate::error::{ensure, CoreError, Result};
use crate::par;
use crate::schedule::{reverse_step, Conditioning, DiffusionSampleConfig, NoiseSchedule, SamplerMode, VPredictor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StitchPlan {
    pub l_v: usize,
    pub l_m: usize,
    pub o: usize,
    pub k: usize,
    pub starts: Vec<usize>,
}

impl StitchPlan {
    pub fn new(l_v: usize, l_m: usize) -> Result<Self> {
        ensure(l_m >= 2 && l_m.is_multiple_of(2), || format!("window length {l_m} must be even and at least 2"))?;
        ensure(l_v >= l_m, || format!("video length {l_v} is shorter than the window {l_m}"))?;
        let o = l_m / 2;
        if !(l_v - l_m).is_multiple_of(o) {
            let below = l_v - (l_v - l_m) % o;
            return Err(CoreError::InvalidArgument(format!(
                "video length {l_v} cannot be stitched from windows of {l_m}; nearest valid lengths are {below} and {}",
                below + o
            )));
        }
        let k = (l_v - l_m) / o + 1;
        let starts = (0..k).map(|i| i * (l_m - o)).collect();
        Ok(Self { l_v, l_m, o, k, starts })
    }

    /// Range of frames chunk `i` contributes to the output.
    pub fn kept(&self, i: usize) -> std::ops::Range<usize> {
        if i == 0 {
            0..self.l_m
        } else {
            self.starts[i] + self.o..self.starts[i] + self.l_m
        }
    }

    /// Smallest stitchable length that is at least `n`.
    pub fn valid_length_at_least(n: usize, l_m: usize) -> usize {
        let o = (l_m / 2).max(1);
        if n <= l_m {
            l_m
        } else {
            l_m + (n - l_m).div_ceil(o) * o
        }
    }

    /// Nearest stitchable length to `n`, rounding half up.
    pub fn nearest_valid_length(n: f64, l_m: usize) -> usize {
        let o = (l_m / 2).max(1) as f64;
        if n <= l_m as f64 {
            return l_m;
        }
        let steps = ((n - l_m as f64) / o + 0.5).floor();
        l_m + steps as usize * o as usize
    }
}

/// Denoise one step of a long latent video (T, C, H, W) window by window.
#[allow(clippy::too_many_arguments)]
pub fn denoise_step_stitched(
    z_t: &Tensor<f32>,
    t: usize,
    t_prev: usize,
    denoiser: &dyn VPredictor,
    sched: &NoiseSchedule,
    plan: &StitchPlan,
    cond: Option<&Conditioning>,
    mode: SamplerMode,
) -> Result<Tensor<f32>> {
    if z_t.rank() != 4 || z_t.shape()[0] != plan.l_v {
        return Err(CoreError::Shape(format!("stitch plan covers {} frames, input is {:?}", plan.l_v, z_t.shape())));
    }
    if let Some(w) = denoiser.window() {
        ensure(w == plan.l_m, || format!("denoiser window {w} does not match plan window {}", plan.l_m))?;
    }
    let chunks = par::try_map_range(plan.k, |i| -> Result<Tensor<f32>> {
        let chunk = z_t.slice_rows(plan.starts[i], plan.l_m)?;
        let v = denoiser.predict(&chunk, t, cond)?;
        if v.shape() != chunk.shape() {
            return Err(CoreError::Shape(format!("denoiser returned {:?} for window {:?}", v.shape(), chunk.shape())));
        }
        let next = reverse_step(&chunk, &v, t, t_prev, sched, mode)?;
        if i == 0 {
            Ok(next)
        } else {
            Ok(next.slice_rows(plan.o, plan.l_m - plan.o)?)
        }
    })?;
    Ok(Tensor::stack_rows(&chunks)?)
}

/// Full sampling loop for a video of `l_v` frames with latent frame shape
/// `frame_shape` (C, H, W).
pub fn generate_long_video(
    denoiser: &dyn VPredictor,
    frame_shape: &[usize],
    l_v: usize,
    sched: &NoiseSchedule,
    cfg: &DiffusionSampleConfig,
) -> Result<Tensor<f32>> {
    let l_m = denoiser.window().unwrap_or(l_v);
    let plan = StitchPlan::new(l_v, l_m)?;
    ensure(frame_shape.len() == 3, || format!("latent frame shape must be (C, H, W), got {frame_shape:?}"))?;
    let mut shape = vec![l_v];
    shape.extend_from_slice(frame_shape);
    let steps = sched.timesteps(cfg.steps_used)?;
    let mut z = cfg.initial_noise(&shape);
    for (i, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        z = denoise_step_stitched(&z, t, t_prev, denoiser, sched, &plan, cfg.conditioning.as_ref(), cfg.mode)?;
    }
    Ok(z)
}

/// Mean absolute difference of consecutive frames that straddle a window
/// boundary, and of consecutive frames inside one kept range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeamStats {
    pub boundary: f64,
    pub within: f64,
    pub boundary_pairs: usize,
    pub within_pairs: usize,
}

impl SeamStats {
    pub fn ratio(&self) -> f64 {
        self.boundary / self.within
    }

    /// Pool several videos, weighting by pair count.
    pub fn pool(all: &[SeamStats]) -> Result<SeamStats> {
        let bp: usize = all.iter().map(|s| s.boundary_pairs).sum();
        let wp: usize = all.iter().map(|s| s.within_pairs).sum();
        ensure(bp > 0 && wp > 0, || "no frame pairs to pool".into())?;
        Ok(SeamStats {
            boundary: all.iter().map(|s| s.boundary * s.boundary_pairs as f64).sum::<f64>() / bp as f64,
            within: all.iter().map(|s| s.within * s.within_pairs as f64).sum::<f64>() / wp as f64,
            boundary_pairs: bp,
            within_pairs: wp,
        })
    }
}

/// Seam statistics of a stitched video (T, ...) under `plan`.
pub fn seam_stats(video: &Tensor<f32>, plan: &StitchPlan) -> Result<SeamStats> {
    ensure(video.rank() >= 2 && video.shape()[0] == plan.l_v, || {
        format!("stitch plan covers {} frames, video is {:?}", plan.l_v, video.shape())
    })?;
    ensure(plan.k >= 2, || "a single-window plan has no seams".into())?;
    let mad = |i: usize| -> f64 {
        let (a, b) = (video.row(i), video.row(i + 1));
        a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
    };
    let (mut bsum, mut bn, mut wsum, mut wn) = (0.0, 0, 0.0, 0);
    for i in 0..plan.k {
        let r = plan.kept(i);
        if i > 0 {
            bsum += mad(r.start - 1);
            bn += 1;
        }
        for f in r.start..r.end - 1 {
            wsum += mad(f);
            wn += 1;
        }
    }
    Ok(SeamStats {
        boundary: bsum / bn as f64,
        within: wsum / wn as f64,
        boundary_pairs: bn,
        within_pairs: wn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_plan() {
        let p = StitchPlan::new(128, 64).unwrap();
        assert_eq!((p.o, p.k), (32, 3));
        assert_eq!(p.starts, vec![0, 32, 64]);
        assert_eq!(p.kept(1), 64..96);
        assert_eq!(p.kept(2), 96..128);
    }

    #[test]
    fn degenerate_and_derived_plans() {
        let p = StitchPlan::new(64, 64).unwrap();
        assert_eq!((p.k, p.starts.clone()), (1, vec![0]));
        assert_eq!(StitchPlan::new(96, 64).unwrap().k, 2);
    }

    #[test]
    fn invalid_lengths_name_neighbours() {
        let err = StitchPlan::new(100, 64).unwrap_err().to_string();
        assert!(err.contains("96") && err.contains("128"), "{err}");
        assert!(StitchPlan::new(32, 64).is_err());
        assert!(StitchPlan::new(64, 7).is_err());
        assert!(StitchPlan::new(64, 0).is_err());
    }

    #[test]
    fn partition_of_frames() {
        for (l_v, l_m) in [(16, 16), (48, 16), (240, 16), (128, 64), (10, 2)] {
            let p = StitchPlan::new(l_v, l_m).unwrap();
            assert_eq!(p.l_m + (p.k - 1) * p.o, l_v);
            let mut seen = vec![0u32; l_v];
            for i in 0..p.k {
                for f in p.kept(i) {
                    seen[f] += 1;
                }
            }
            assert!(seen.iter().all(|c| *c == 1));
        }
    }

    #[test]
    fn length_rounding() {
        assert_eq!(StitchPlan::nearest_valid_length(31.9, 16), 32);
        assert_eq!(StitchPlan::nearest_valid_length(28.0, 16), 32);
        assert_eq!(StitchPlan::nearest_valid_length(27.9, 16), 24);
        assert_eq!(StitchPlan::nearest_valid_length(5.0, 16), 16);
        assert_eq!(StitchPlan::valid_length_at_least(17, 16), 24);
        assert_eq!(StitchPlan::valid_length_at_least(24, 16), 24);
    }
}
