//! Variance-preserving discrete diffusion with v-prediction.
//!
//! Step `t` runs from 1 to `T`. `alpha(t)` and `sigma(t)` are the cumulative
//! signal and noise coefficients, so the noised sample at step `t` is
//! `alpha(t) * z0 + sigma(t) * eps`. Step 0 is the clean sample
//! (`alpha = 1`, `sigma = 0`).

use std::fmt;
use std::str::FromStr;

use echosyn_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, CoreError, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas spaced linearly from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        ensure(steps >= 1, || "schedule needs at least one step".into())?;
        ensure(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0, || {
            format!("need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}")
        })?;
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        ensure(!betas.is_empty(), || "schedule needs at least one step".into())?;
        ensure(betas.iter().all(|b| *b > 0.0 && *b < 1.0), || "every beta must lie in (0, 1)".into())?;
        let mut prod = 1.0f64;
        let mut alphas = Vec::with_capacity(betas.len());
        let mut sigmas = Vec::with_capacity(betas.len());
        for b in &betas {
            prod *= 1.0 - b;
            alphas.push(prod.sqrt());
            sigmas.push((1.0 - prod).sqrt());
        }
        Ok(Self { betas, alphas, sigmas })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.sigmas[t - 1]
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        ensure((1..=self.steps()).contains(&t), || format!("step {t} outside 1..={}", self.steps()))
    }

    /// Evenly strided descending steps, starting at `T`.
    pub fn timesteps(&self, used: usize) -> Result<Vec<usize>> {
        let total = self.steps();
        ensure((1..=total).contains(&used), || format!("sampling steps {used} outside 1..={total}"))?;
        Ok((0..used).map(|i| (((used - i) as f64) * total as f64 / used as f64).round() as usize).collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    /// `z_{t-1} = alpha_t z_t - sigma_t v`, applied verbatim at every step.
    #[default]
    Literal,
    /// Deterministic DDIM: rebuild the previous-step state from the implied
    /// clean sample and noise.
    AncestralDdim,
}

impl SamplerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::Literal => "literal",
            SamplerMode::AncestralDdim => "ancestral-ddim",
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(SamplerMode::Literal),
            "ancestral-ddim" => Ok(SamplerMode::AncestralDdim),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown sampler mode `{other}` (expected literal or ancestral-ddim)"
            ))),
        }
    }
}

/// Conditioning handed to video denoisers: an anchor latent frame and an
/// ejection fraction in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub anchor: Tensor<f32>,
    pub ef: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSampleConfig {
    pub mode: SamplerMode,
    pub steps_used: usize,
    pub seed: u64,
    /// Keys the initial-noise stream together with `seed`.
    pub sample_id: u64,
    pub conditioning: Option<Conditioning>,
}

impl DiffusionSampleConfig {
    pub fn new(mode: SamplerMode, steps_used: usize, seed: u64) -> Self {
        Self {
            mode,
            steps_used,
            seed,
            sample_id: 0,
            conditioning: None,
        }
    }

    pub fn with_sample(mut self, sample_id: u64) -> Self {
        self.sample_id = sample_id;
        self
    }

    pub fn with_conditioning(mut self, cond: Conditioning) -> Self {
        self.conditioning = Some(cond);
        self
    }

    /// Initial Gaussian state for this sample.
    pub fn initial_noise(&self, shape: &[usize]) -> Tensor<f32> {
        let mut r = rng::stream(self.seed ^ rng::domain::SAMPLE_NOISE.rotate_left(48), self.sample_id, 0);
        rng::gaussian(shape, &mut r)
    }
}

/// A network (or oracle) predicting `v` from a noisy tensor at step `t`.
pub trait VPredictor: Sync {
    fn predict(&self, z_t: &Tensor<f32>, t: usize, cond: Option<&Conditioning>) -> Result<Tensor<f32>>;

    /// Fixed leading extent the predictor accepts, if any.
    fn window(&self) -> Option<usize> {
        None
    }
}

fn same_shape(a: &Tensor<f32>, b: &Tensor<f32>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn lincomb(a: &Tensor<f32>, wa: f64, b: &Tensor<f32>, wb: f64) -> Tensor<f32> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| (wa * x as f64 + wb * y as f64) as f32).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

pub fn forward_noise(z0: &Tensor<f32>, t: usize, eps: &Tensor<f32>, sched: &NoiseSchedule) -> Result<Tensor<f32>> {
    same_shape(z0, eps, "forward_noise")?;
    sched.check_step(t)?;
    Ok(lincomb(z0, sched.alpha(t), eps, sched.sigma(t)))
}

pub fn v_target(z0: &Tensor<f32>, eps: &Tensor<f32>, t: usize, sched: &NoiseSchedule) -> Result<Tensor<f32>> {
    same_shape(z0, eps, "v_target")?;
    sched.check_step(t)?;
    Ok(lincomb(eps, sched.alpha(t), z0, -sched.sigma(t)))
}

/// One reverse update from step `t` to step `t_prev` (`t_prev < t`).
///
/// Literal mode ignores `t_prev`.
pub fn reverse_step(z_t: &Tensor<f32>, v_hat: &Tensor<f32>, t: usize, t_prev: usize, sched: &NoiseSchedule, mode: SamplerMode) -> Result<Tensor<f32>> {
    same_shape(z_t, v_hat, "reverse_step")?;
    sched.check_step(t)?;
    ensure(t_prev < t, || format!("previous step {t_prev} must precede {t}"))?;
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    match mode {
        SamplerMode::Literal => Ok(lincomb(z_t, a, v_hat, -s)),
        SamplerMode::AncestralDdim => {
            let (ap, sp) = (sched.alpha(t_prev), sched.sigma(t_prev));
            // z0 = a z - s v, eps = s z + a v, then z_prev = ap z0 + sp eps.
            Ok(lincomb(z_t, ap * a + sp * s, v_hat, sp * a - ap * s))
        }
    }
}

/// Full reverse loop from seeded Gaussian noise over the configured steps.
pub fn sample(denoiser: &dyn VPredictor, shape: &[usize], sched: &NoiseSchedule, cfg: &DiffusionSampleConfig) -> Result<Tensor<f32>> {
    let steps = sched.timesteps(cfg.steps_used)?;
    let mut z = cfg.initial_noise(shape);
    for (i, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        let v = denoiser.predict(&z, t, cfg.conditioning.as_ref())?;
        if v.shape() != z.shape() {
            return Err(CoreError::Shape(format!("denoiser returned {:?} for input {:?}", v.shape(), z.shape())));
        }
        z = reverse_step(&z, &v, t, t_prev, sched, cfg.mode)?;
    }
    Ok(z)
}
