//! Protocol configuration, read from TOML.
//!
//! Every field has a default, so a config file only lists what it changes.
//! All random streams derive from the top-level `seed`; the per-section
//! `seed` fields of the underlying library types must be left unset.

use std::path::Path;

use echosyn_core::denoisers::{ArchConfig, TrainConfig};
use echosyn_core::downstream::RegressorConfig;
use echosyn_core::echotoy::EchoToyConfig;
use echosyn_core::hash::short_hash;
use echosyn_core::privacy::{ReidTrainConfig, TauMethod};
use echosyn_core::schedule::{NoiseSchedule, SamplerMode};
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub reid: ReidTrainConfig,
    pub lidm: ImageModelConfig,
    pub lvdm: VideoModelConfig,
    pub privacy: PrivacyConfig,
    pub synthetic: SyntheticConfig,
    pub metrics: MetricsConfig,
    pub downstream: DownstreamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub videos: usize,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub toy: EchoToyConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            videos: 500,
            fractions: [0.8, 0.1, 0.1],
            toy: EchoToyConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sampler: SamplerMode,
    pub sampling_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            sampler: SamplerMode::AncestralDdim,
            sampling_steps: 50,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> echosyn_core::Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageModelConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl Default for ImageModelConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            train: TrainConfig {
                steps: 3000,
                batch: 16,
                lr: 1e-3,
                lr_final_frac: 0.05,
                seed: 0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoModelConfig {
    /// Frames per denoising window.
    pub window: usize,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl Default for VideoModelConfig {
    fn default() -> Self {
        Self {
            window: 16,
            arch: ArchConfig::default(),
            train: TrainConfig {
                steps: 8000,
                batch: 8,
                lr: 1e-3,
                lr_final_frac: 0.05,
                seed: 0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Lower percentile of train-vs-validation distances used as `tau`.
    pub percentile: f64,
    /// Distribution `tau` is read from: `nearest-train` or `pairwise`.
    pub calibration: TauMethod,
    /// Give up when this many anchor batches still leave a deficit.
    pub max_batches: usize,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            percentile: 5.0,
            calibration: TauMethod::NearestTrain,
            max_batches: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Number of synthetic videos; defaults to the real training count.
    pub count: Option<usize>,
    /// Frames per synthetic video; defaults to the mean real length rounded
    /// to the nearest stitchable length.
    pub frames: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// FVD clip lengths; lengths longer than the videos report "unavailable".
    pub fvd_clips: Vec<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { fvd_clips: vec![16, 128] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub regressor: RegressorConfig,
    /// Also train and test on synthetic data alone (80/20).
    pub synthetic_only: bool,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            regressor: RegressorConfig::default(),
            synthetic_only: true,
        }
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            reid: ReidTrainConfig::default(),
            lidm: ImageModelConfig::default(),
            lvdm: VideoModelConfig::default(),
            privacy: PrivacyConfig::default(),
            synthetic: SyntheticConfig::default(),
            metrics: MetricsConfig::default(),
            downstream: DownstreamConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        short_hash(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        let seeds = [
            ("data.toy", self.data.toy.seed),
            ("reid", self.reid.seed),
            ("lidm.train", self.lidm.train.seed),
            ("lvdm.train", self.lvdm.train.seed),
        ];
        if let Some((name, _)) = seeds.iter().find(|(_, s)| *s != 0) {
            return err(format!("[{name}] sets `seed`; all seeds derive from the top-level `seed`"));
        }
        self.data.toy.validate().map_err(|e| PipelineError::Config(format!("[data.toy] {e}")))?;
        let train = echosyn_core::echotoy::split_counts(self.data.videos, self.data.fractions).map_err(|e| PipelineError::Config(format!("[data] {e}")))?;
        if train.contains(&0) {
            return err(format!(
                "[data] {} videos leave an empty split with fractions {:?}",
                self.data.videos, self.data.fractions
            ));
        }
        self.schedule.build().map_err(|e| PipelineError::Config(format!("[schedule] {e}")))?;
        if self.schedule.sampling_steps == 0 || self.schedule.sampling_steps > self.schedule.steps {
            return err(format!("[schedule] sampling_steps must be in 1..={}", self.schedule.steps));
        }
        let w = self.lvdm.window;
        if w < 2 || !w.is_multiple_of(2) {
            return err(format!("[lvdm] window {w} must be even and at least 2"));
        }
        if self.data.toy.frames_min < w {
            return err(format!(
                "[data.toy] frames_min {} is shorter than the {w}-frame window",
                self.data.toy.frames_min
            ));
        }
        if let Some(f) = self.synthetic.frames {
            echosyn_core::stitcher::StitchPlan::new(f, w).map_err(|e| PipelineError::Config(format!("[synthetic] {e}")))?;
        }
        if !(0.0..100.0).contains(&self.privacy.percentile) || self.privacy.max_batches == 0 {
            return err("[privacy] percentile must be in [0, 100) and max_batches positive".into());
        }
        if self.synthetic.count == Some(0) {
            return err("[synthetic] count must be positive".into());
        }
        if self.metrics.fvd_clips.iter().any(|c| *c < 2) {
            return err("[metrics] FVD clips need at least 2 frames".into());
        }
        Ok(())
    }

    /// Copies of the library configs with the run seed filled in.
    pub fn toy(&self) -> EchoToyConfig {
        EchoToyConfig {
            seed: self.seed,
            ..self.data.toy.clone()
        }
    }

    pub fn reid_train(&self) -> ReidTrainConfig {
        ReidTrainConfig {
            seed: self.seed,
            ..self.reid.clone()
        }
    }

    pub fn lidm_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.lidm.train.clone()
        }
    }

    pub fn lvdm_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.lvdm.train.clone()
        }
    }
}
