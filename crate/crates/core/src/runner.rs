//! Whole experiments on top of a [`RunConfig`]: training a model from
//! scratch and the ablation suites.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{SamplePair, Split};
use crate::episode::{ContextSource, Selector};
use crate::error::{config_err, Result};
use crate::image::PatchGeometry;
use crate::metrics::{bicubic_report, evaluate, MetricReport};
use crate::nets::{init_params, save_checkpoint, ParamSet};
use crate::training::{train, TrainObserver, TrainState};

/// Seed offsets keep parameter init, training and evaluation streams apart.
const INIT_STREAM: u64 = 0x1a17;
const EVAL_STREAM: u64 = 0xe7a1;

pub fn init_state(cfg: &RunConfig) -> Result<TrainState<f32>> {
    let params = init_params(&cfg.policy, &cfg.enhancer, cfg.seed ^ INIT_STREAM)?;
    TrainState::new(params, cfg.training.baseline_decay)
}

/// Trains `state` for the configured number of iterations.
pub fn train_run(
    cfg: &RunConfig,
    state: &mut TrainState<f32>,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    observer: &mut dyn TrainObserver<f32>,
) -> Result<()> {
    cfg.validate()?;
    train(state, train_set, val_set, &cfg.episode, &cfg.training, cfg.seed, observer)
}

/// Greedy evaluation with the configured episode settings. Stochastic
/// selectors use a stream derived from the run seed.
pub fn evaluate_run(
    cfg: &RunConfig,
    params: &ParamSet<f32>,
    pairs: &[SamplePair],
) -> Result<MetricReport> {
    evaluate(params, pairs, &cfg.episode, cfg.seed ^ EVAL_STREAM)
}

/// Saves `state` with `cfg` embedded in the metadata, so the checkpoint
/// alone is enough for inference.
pub fn save_run_checkpoint(
    cfg: &RunConfig,
    state: &TrainState<f32>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut meta = state.meta();
    meta["run_config"] = serde_json::to_value(cfg)?;
    save_checkpoint(&state.params, Some(&state.optimizer), &meta, path)
}

/// Run config stored by [`save_run_checkpoint`], if any.
pub fn embedded_run_config(meta: &serde_json::Value) -> Result<Option<RunConfig>> {
    match meta.get("run_config") {
        Some(v) => Ok(Some(serde_json::from_value(v.clone())?)),
        None => Ok(None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Tsweep,
    RandomPatch,
    NoAttention,
    I0Input,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Tsweep,
        Suite::RandomPatch,
        Suite::NoAttention,
        Suite::I0Input,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Tsweep => "tsweep",
            Suite::RandomPatch => "random_patch",
            Suite::NoAttention => "no_attention",
            Suite::I0Input => "i0_input",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = crate::error::AfhError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| config_err("suite", format!("unknown suite `{s}`")))
    }
}

/// Run config of a named variant of `base`.
pub fn variant_config(base: &RunConfig, variant: &Variant) -> RunConfig {
    let mut c = base.clone();
    match *variant {
        Variant::Reference => {}
        Variant::Steps(t) => c.episode.steps = t,
        Variant::RandomPatch => c.episode.selector = Selector::UniformRandom,
        Variant::NoAttention => {
            let (h, w) = (c.policy.image_height, c.policy.image_width);
            c.episode.selector = Selector::FullImage;
            c.episode.steps = base.ablation.no_attention_steps;
            c.episode.geometry = PatchGeometry {
                patch_height: h,
                patch_width: w,
                ..base.episode.geometry
            };
            c.enhancer.patch_height = h;
            c.enhancer.patch_width = w;
        }
        Variant::InitialContext => c.episode.context = ContextSource::Initial,
    }
    c
}

/// One trained configuration inside a suite.
#[derive(Clone, Debug, PartialEq)]
pub enum Variant {
    Reference,
    Steps(usize),
    RandomPatch,
    NoAttention,
    InitialContext,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Reference => "attention".into(),
            Variant::Steps(t) => format!("T={t}"),
            Variant::RandomPatch => "random_patch".into(),
            Variant::NoAttention => "no_attention".into(),
            Variant::InitialContext => "i0_input".into(),
        }
    }
}

pub fn suite_variants(cfg: &RunConfig, suite: Suite) -> Vec<Variant> {
    match suite {
        Suite::Tsweep => cfg.ablation.tsweep_steps.iter().map(|&t| Variant::Steps(t)).collect(),
        Suite::RandomPatch => vec![Variant::Reference, Variant::RandomPatch],
        Suite::NoAttention => vec![Variant::Reference, Variant::NoAttention],
        Suite::I0Input => vec![Variant::Reference, Variant::InitialContext],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub suite: String,
    pub variant: String,
    pub steps: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub fsim: f64,
}

/// Receives progress while a suite runs.
pub trait SuiteObserver {
    fn on_variant_start(&mut self, _variant: &Variant, _cfg: &RunConfig) -> Result<()> {
        Ok(())
    }

    fn training_observer(&mut self) -> Option<&mut dyn TrainObserver<f32>> {
        None
    }

    fn on_variant_done(&mut self, _variant: &Variant, _state: &TrainState<f32>) -> Result<()> {
        Ok(())
    }
}

impl SuiteObserver for () {}

/// Trains and evaluates every variant of `suite` from the same seed and
/// budget. The first row is the bicubic input.
pub fn run_suite(
    base: &RunConfig,
    suite: Suite,
    observer: &mut dyn SuiteObserver,
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let train_set = base.data.load(Split::Train)?;
    let val_set = base.data.load(Split::Test)?;
    let bicubic = bicubic_report(&val_set)?;
    let mut rows = vec![AblationRow {
        suite: suite.name().into(),
        variant: "bicubic".into(),
        steps: 0,
        psnr: bicubic.mean_psnr,
        ssim: bicubic.mean_ssim,
        fsim: bicubic.mean_fsim,
    }];
    for variant in suite_variants(base, suite) {
        let cfg = variant_config(base, &variant);
        observer.on_variant_start(&variant, &cfg)?;
        let mut state = init_state(&cfg)?;
        {
            let mut none = ();
            let obs: &mut dyn TrainObserver<f32> = match observer.training_observer() {
                Some(o) => o,
                None => &mut none,
            };
            train_run(&cfg, &mut state, &train_set, &val_set, obs)?;
        }
        observer.on_variant_done(&variant, &state)?;
        let report = evaluate_run(&cfg, &state.params, &val_set)?;
        rows.push(AblationRow {
            suite: suite.name().into(),
            variant: variant.label(),
            steps: cfg.episode.steps,
            psnr: report.mean_psnr,
            ssim: report.mean_ssim,
            fsim: report.mean_fsim,
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
