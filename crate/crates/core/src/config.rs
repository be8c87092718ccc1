//! Run configuration: every module config in one JSON document, plus the
//! `paper` and `toy` presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, make_toy_dataset, DatasetSpec, SamplePair, Split};
use crate::episode::{ActionMode, EpisodeConfig, Selector};
use crate::error::{config_err, AfhError, Result};
use crate::image::PatchGeometry;
use crate::nets::{check_model_pair, ConvLayer, EnhancerConfig, PolicyConfig};
use crate::training::{OptimizerConfig, TrainConfig};

/// Procedurally generated train and validation sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDataConfig {
    pub height: usize,
    pub width: usize,
    pub scale: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Toy(ToyDataConfig),
    Files(DatasetSpec),
}

impl DataSource {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            DataSource::Toy(t) => (t.height, t.width),
            DataSource::Files(s) => (s.crop_height, s.crop_width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataSource::Toy(t) => {
                if t.scale == 0 {
                    return Err(config_err("data.scale", "must be at least 1"));
                }
                if t.height % t.scale != 0 {
                    return Err(config_err(
                        "data.height",
                        format!("{} is not divisible by scale {}", t.height, t.scale),
                    ));
                }
                if t.width % t.scale != 0 {
                    return Err(config_err(
                        "data.width",
                        format!("{} is not divisible by scale {}", t.width, t.scale),
                    ));
                }
                if t.train_size == 0 {
                    return Err(config_err("data.train_size", "must be at least 1"));
                }
                Ok(())
            }
            DataSource::Files(s) => s.validate().map_err(|e| match e {
                AfhError::Config { field, reason } => AfhError::Config {
                    field: field.replacen("dataset.", "data.", 1),
                    reason,
                },
                other => other,
            }),
        }
    }

    /// Training pairs (`Split::Train`) or validation/test pairs (`Split::Test`).
    pub fn load(&self, split: Split) -> Result<Vec<SamplePair>> {
        match self {
            DataSource::Toy(t) => {
                let (n, seed) = match split {
                    Split::Train => (t.train_size, t.seed),
                    Split::Test => (t.val_size, t.seed.wrapping_add(1)),
                };
                make_toy_dataset(n, t.height, t.width, t.scale, seed)
            }
            DataSource::Files(s) => load_dataset(s, split),
        }
    }
}

/// Settings of the ablation suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Episode lengths of the T sweep.
    pub tsweep_steps: Vec<usize>,
    /// Steps of the whole-image enhancement variant.
    pub no_attention_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    pub enhancer: EnhancerConfig,
    pub episode: EpisodeConfig,
    pub training: TrainConfig,
    pub data: DataSource,
    pub ablation: AblationConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Checkpoint to resume training from.
    #[serde(default)]
    pub resume_from: Option<PathBuf>,
}

impl RunConfig {
    /// 128x128 faces at scale 4, T = 25, 60x45 patches, lr 2e-4, beta1 0.5.
    pub fn paper() -> Self {
        let (h, w, c) = (128, 128, 3);
        Self {
            policy: PolicyConfig::new(h, w, c),
            enhancer: EnhancerConfig::new(h, w, c, 60, 45),
            episode: EpisodeConfig {
                steps: 25,
                geometry: PatchGeometry::new(60, 45),
                mode: ActionMode::Greedy,
                suppress_revisits: true,
                ..EpisodeConfig::default()
            },
            training: TrainConfig {
                optimizer: OptimizerConfig {
                    iterations: 100_000,
                    ..OptimizerConfig::default()
                },
                validate_every: 1000,
                validation_size: 200,
                checkpoint_every: 1000,
                ..TrainConfig::default()
            },
            data: DataSource::Files(DatasetSpec {
                root_dir: PathBuf::from("data/lfw"),
                crop_height: h,
                crop_width: w,
                scale: 4,
            }),
            ablation: AblationConfig {
                tsweep_steps: vec![5, 15, 25, 35],
                no_attention_steps: 5,
            },
            seed: 0,
            output_dir: PathBuf::from("runs/paper"),
            resume_from: None,
        }
    }

    /// 48x48 procedural faces at scale 4, T = 6, 24x18 patches, with
    /// narrower networks and a shorter enhancement cascade.
    pub fn toy() -> Self {
        let (h, w, c) = (48, 48, 3);
        let mut policy = PolicyConfig::new(h, w, c);
        policy.encoder_width = 64;
        policy.lstm_hidden = 64;
        let mut enhancer = EnhancerConfig::new(h, w, c, 24, 18);
        enhancer.global_fc_width = 32;
        enhancer.conv_spec = vec![
            ConvLayer::new(32, 5),
            ConvLayer::new(32, 3),
            ConvLayer::new(16, 3),
            ConvLayer::new(c, 3),
        ];
        Self {
            policy,
            enhancer,
            episode: EpisodeConfig {
                steps: 6,
                geometry: PatchGeometry::new(24, 18),
                mode: ActionMode::Greedy,
                suppress_revisits: true,
                ..EpisodeConfig::default()
            },
            training: TrainConfig {
                optimizer: OptimizerConfig {
                    learning_rate: 1e-3,
                    policy_learning_rate: Some(5e-3),
                    iterations: 3000,
                    ..OptimizerConfig::default()
                },
                policy_warmup: 500,
                validate_every: 200,
                validation_size: 100,
                checkpoint_every: 200,
                ..TrainConfig::default()
            },
            data: DataSource::Toy(ToyDataConfig {
                height: h,
                width: w,
                scale: 4,
                train_size: 500,
                val_size: 100,
                seed: 1,
            }),
            ablation: AblationConfig {
                tsweep_steps: vec![2, 4, 6, 9],
                no_attention_steps: 5,
            },
            seed: 0,
            output_dir: PathBuf::from("runs/toy"),
            resume_from: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            other => Err(config_err("preset", format!("unknown preset `{other}`"))),
        }
    }

    /// Checks every module config and their mutual consistency.
    pub fn validate(&self) -> Result<()> {
        check_model_pair(&self.policy, &self.enhancer)?;
        self.training.validate()?;
        self.data.validate()?;
        let (h, w) = (self.policy.image_height, self.policy.image_width);
        if self.data.dims() != (h, w) {
            return Err(config_err(
                "data",
                format!(
                    "data images {:?} do not match model images {:?}",
                    self.data.dims(),
                    (h, w)
                ),
            ));
        }
        let g = self.episode.geometry;
        g.validate_for(h, w)
            .map_err(|e| config_err("episode.geometry", e.to_string()))?;
        if (g.patch_height, g.patch_width) != (self.enhancer.patch_height, self.enhancer.patch_width)
        {
            return Err(config_err(
                "episode.geometry",
                format!(
                    "patch {}x{} differs from the enhancer patch {}x{}",
                    g.patch_height,
                    g.patch_width,
                    self.enhancer.patch_height,
                    self.enhancer.patch_width
                ),
            ));
        }
        if self.episode.selector == Selector::FullImage && (g.patch_height, g.patch_width) != (h, w) {
            return Err(config_err(
                "episode.selector",
                "full_image requires the patch to equal the image",
            ));
        }
        if self.ablation.tsweep_steps.is_empty() {
            return Err(config_err("ablation.tsweep_steps", "must not be empty"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            config_err(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            config_err("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// The same model with episodes of `steps` steps.
    pub fn with_steps(&self, steps: usize) -> Self {
        let mut c = self.clone();
        c.episode.steps = steps;
        c
    }
}
