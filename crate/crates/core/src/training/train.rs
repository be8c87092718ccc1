use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamState, OptimizerConfig};
use super::objective::{accumulate_score, enhancer_step, step_target};
use super::reward::{terminal_reward, update_baseline, BaselineState};
use crate::autodiff::Scalar;
use crate::data::SamplePair;
use crate::episode::{rollout, ActionMode, EpisodeConfig, Selector, Trajectory};
use crate::error::{config_err, AfhError, Result};
use crate::metrics::mean_psnr;
use crate::nets::{enhance_forward, ParamGrads, ParamSet};

/// How the two parameter groups share iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Both groups step every iteration.
    Joint,
    /// Enhancer on even iterations, policy on odd ones.
    Alternating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_decay")]
    pub baseline_decay: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// When false the policy keeps its initial parameters.
    #[serde(default = "default_true")]
    pub train_policy: bool,
    /// Leading iterations during which only the enhancer is updated, so the
    /// policy starts learning against an enhancer that already helps.
    #[serde(default)]
    pub policy_warmup: u64,
    /// Validation PSNR every this many iterations (0 disables).
    #[serde(default)]
    pub validate_every: u64,
    /// Number of validation pairs used (0 means all).
    #[serde(default)]
    pub validation_size: usize,
    /// Checkpoint callback every this many iterations (0 disables).
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn default_decay() -> f64 {
    0.9
}

fn default_schedule() -> Schedule {
    Schedule::Joint
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            baseline_decay: default_decay(),
            schedule: Schedule::Joint,
            train_policy: true,
            policy_warmup: 0,
            validate_every: 0,
            validation_size: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        BaselineState::new(self.baseline_decay)?;
        Ok(())
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub params: ParamSet<T>,
    pub optimizer: AdamState<T>,
    pub baseline: BaselineState,
    /// Completed iterations.
    pub iteration: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: ParamSet<T>, baseline_decay: f64) -> Result<Self> {
        Ok(Self {
            optimizer: AdamState::new(&params),
            params,
            baseline: BaselineState::new(baseline_decay)?,
            iteration: 0,
        })
    }

    /// Checkpoint metadata: iteration counter and baseline.
    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "iteration": self.iteration,
            "baseline": self.baseline,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::nets::save_checkpoint(&self.params, Some(&self.optimizer), &self.meta(), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = crate::nets::load_checkpoint::<T>(path)?;
        let optimizer = match ck.optimizer {
            Some(o) => o,
            None => AdamState::new(&ck.params),
        };
        let iteration = ck.meta.get("iteration").and_then(|v| v.as_u64()).unwrap_or(0);
        let baseline = match ck.meta.get("baseline") {
            Some(b) => serde_json::from_value(b.clone())?,
            None => BaselineState::default(),
        };
        Ok(Self {
            params: ck.params,
            optimizer,
            baseline,
            iteration,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationStats {
    /// 1-based iteration number.
    pub iter: u64,
    pub enh_loss: f64,
    pub mean_return: f64,
    pub baseline: f64,
    pub val_psnr: Option<f64>,
}

pub trait TrainObserver<T> {
    fn on_iteration(&mut self, _stats: &IterationStats) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _state: &TrainState<T>) -> Result<()> {
        Ok(())
    }
}

impl<T> TrainObserver<T> for () {}

/// Collects every iteration's statistics in memory.
#[derive(Default, Debug)]
pub struct History {
    pub stats: Vec<IterationStats>,
}

impl<T> TrainObserver<T> for History {
    fn on_iteration(&mut self, stats: &IterationStats) -> Result<()> {
        self.stats.push(stats.clone());
        Ok(())
    }
}

/// CSV log with columns `iter,enh_loss,mean_return,baseline,val_psnr`.
pub struct CsvLog {
    writer: csv::Writer<std::fs::File>,
}

impl CsvLog {
    /// Appends when the file exists (resumed runs), otherwise writes a header.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !exists {
            writer.write_record(["iter", "enh_loss", "mean_return", "baseline", "val_psnr"])?;
            writer.flush()?;
        }
        Ok(Self { writer })
    }
}

impl<T> TrainObserver<T> for CsvLog {
    fn on_iteration(&mut self, s: &IterationStats) -> Result<()> {
        self.writer.write_record([
            s.iter.to_string(),
            s.enh_loss.to_string(),
            s.mean_return.to_string(),
            s.baseline.to_string(),
            s.val_psnr.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Fans events out to several observers.
pub struct Observers<'a, T>(pub Vec<&'a mut dyn TrainObserver<T>>);

impl<T> TrainObserver<T> for Observers<'_, T> {
    fn on_iteration(&mut self, stats: &IterationStats) -> Result<()> {
        self.0.iter_mut().try_for_each(|o| o.on_iteration(stats))
    }

    fn on_checkpoint(&mut self, state: &TrainState<T>) -> Result<()> {
        self.0.iter_mut().try_for_each(|o| o.on_checkpoint(state))
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dataset indices for 0-based iteration `iter`: consecutive slices of
/// per-epoch permutations, so the sequence is a pure function of the seed.
pub(crate) fn batch_indices(n: usize, batch: usize, seed: u64, iter: u64) -> Vec<usize> {
    let start = iter as usize * batch;
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for pos in start..start + batch {
        let epoch = pos / n;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(seed ^ 0x5eed_0f_ba7c4, epoch as u64));
            cached = Some((epoch, order));
        }
        out.push(cached.as_ref().expect("set above").1[pos % n]);
    }
    out
}

struct StepPlan {
    enhancer: bool,
    policy: bool,
}

fn plan(cfg: &TrainConfig, episode: &EpisodeConfig, iter: u64) -> StepPlan {
    let policy_trainable =
        cfg.train_policy && episode.selector == Selector::Learned && iter >= cfg.policy_warmup;
    match cfg.schedule {
        Schedule::Joint => StepPlan {
            enhancer: true,
            policy: policy_trainable,
        },
        Schedule::Alternating => StepPlan {
            enhancer: iter % 2 == 0,
            policy: policy_trainable && iter % 2 == 1,
        },
    }
}

/// One sampled episode whose enhancement steps also accumulate
/// `enh_scale * d(step loss)/d(theta_e)`.
fn training_episode<T: Scalar>(
    params: &ParamSet<T>,
    pair: &SamplePair,
    cfg: &EpisodeConfig,
    rng: &mut ChaCha8Rng,
    enh_scale: Option<f64>,
    acc: &mut ParamGrads<T>,
) -> Result<(Trajectory, f64)> {
    let mut loss = 0.0;
    let traj = rollout(params, &pair.lr_up, cfg, rng, |loc, before, ctx| {
        let (target, mask) = step_target(&pair.hr, loc, &cfg.geometry)?;
        match enh_scale {
            Some(scale) => {
                let (after, l) = enhancer_step(params, before, ctx, &target, &mask, scale, acc)?;
                loss += l;
                Ok(after)
            }
            None => {
                let after = enhance_forward(params, before, ctx)?;
                let d: f64 = after
                    .to_planar()
                    .iter()
                    .zip(&target)
                    .zip(&mask)
                    .filter(|(_, &m)| m)
                    .map(|((a, t), _)| (a - t) * (a - t))
                    .sum();
                let n = mask.iter().filter(|&&m| m).count().max(1);
                loss += d / n as f64;
                Ok(after)
            }
        }
    })?;
    let steps = traj.steps().max(1) as f64;
    Ok((traj, loss / steps))
}

/// Runs `cfg.optimizer.iterations` iterations (counted from
/// `state.iteration`, so resumed runs continue the numbering).
pub fn train<T: Scalar>(
    state: &mut TrainState<T>,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    episode: &EpisodeConfig,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver<T>,
) -> Result<()> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(AfhError::Dataset("training set is empty".into()));
    }
    if cfg.validate_every > 0 && val_set.is_empty() {
        return Err(config_err("training.validate_every", "no validation pairs"));
    }
    let sample_cfg = EpisodeConfig {
        mode: ActionMode::Sample,
        keep_patches: true,
        ..episode.clone()
    };
    let eval_cfg = EpisodeConfig {
        mode: ActionMode::Greedy,
        keep_patches: false,
        ..episode.clone()
    };
    let val_pairs = match cfg.validation_size {
        0 => val_set,
        k => &val_set[..k.min(val_set.len())],
    };
    let batch = cfg.optimizer.batch_size;
    let end = state.iteration + cfg.optimizer.iterations as u64;
    while state.iteration < end {
        let iter = state.iteration;
        let plan = plan(cfg, episode, iter);
        let mut rng = stream_rng(seed, iter);
        let idx = batch_indices(train_set.len(), batch, seed, iter);
        let mut acc = ParamGrads::zeros_for(&state.params);
        let mut trajectories = Vec::with_capacity(batch);
        let mut returns = Vec::with_capacity(batch);
        let mut enh_loss = 0.0;
        for &i in &idx {
            let pair = &train_set[i];
            let per_step: f64 = 1.0 / (batch * sample_cfg.steps.max(1)) as f64;
            let scale = plan.enhancer.then_some(per_step);
            let (traj, loss) =
                training_episode(&state.params, pair, &sample_cfg, &mut rng, scale, &mut acc)?;
            enh_loss += loss / batch as f64;
            returns.push(terminal_reward(&traj.final_image, &pair.hr)?);
            trajectories.push(traj);
        }
        let mean_return = returns.iter().sum::<f64>() / batch as f64;
        if !enh_loss.is_finite() || !mean_return.is_finite() {
            return Err(AfhError::Training(format!(
                "non-finite loss at iteration {}: enh_loss {enh_loss}, mean return {mean_return}",
                iter + 1
            )));
        }
        if plan.policy {
            let b = state.baseline.current().unwrap_or(mean_return);
            for (traj, &ret) in trajectories.iter().zip(&returns) {
                accumulate_score(&state.params, traj, -(ret - b) / batch as f64, &mut acc)?;
            }
        }
        if !acc.is_finite() {
            return Err(AfhError::Training(format!(
                "non-finite gradient at iteration {}",
                iter + 1
            )));
        }
        let opt = &cfg.optimizer;
        if plan.enhancer {
            state
                .optimizer
                .enhancer
                .step(&mut state.params.enhancer, &acc.enhancer, opt)?;
        }
        if plan.policy {
            state
                .optimizer
                .policy
                .step(&mut state.params.policy, &acc.policy, &opt.for_policy())?;
        }
        if !state.params.is_finite() {
            return Err(AfhError::Training(format!(
                "parameters became non-finite at iteration {}",
                iter + 1
            )));
        }
        state.baseline = update_baseline(state.baseline, mean_return);
        state.iteration += 1;
        let val_psnr = if cfg.validate_every > 0 && state.iteration % cfg.validate_every == 0 {
            Some(mean_psnr(&state.params, val_pairs, &eval_cfg, seed)?)
        } else {
            None
        };
        observer.on_iteration(&IterationStats {
            iter: state.iteration,
            enh_loss,
            mean_return,
            baseline: state.baseline.value,
            val_psnr,
        })?;
        if cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(state)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_epoch_permutations() {
        let seen: Vec<usize> = (0..5).flat_map(|i| batch_indices(10, 2, 3, i)).collect();
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(batch_indices(10, 4, 3, 7), batch_indices(10, 4, 3, 7));
        let crossing = batch_indices(10, 4, 3, 2);
        assert_eq!(crossing.len(), 4);
    }

    #[test]
    fn fused_rollout_matches_replay() {
        use crate::data::SamplePair;
        use crate::image::{Image, PatchGeometry};
        use crate::nets::{init_params, ConvLayer, EnhancerConfig, PolicyConfig};
        use crate::training::{enhancement_gradient, enhancement_loss};
        use rand::Rng;

        let (h, w, c) = (12, 12, 3);
        let mut pc = PolicyConfig::new(h, w, c);
        pc.encoder_width = 8;
        pc.lstm_hidden = 6;
        let mut ec = EnhancerConfig::new(h, w, c, 6, 5);
        ec.global_fc_width = 6;
        ec.conv_spec = vec![ConvLayer::new(4, 3), ConvLayer::new(c, 3)];
        let mut params = init_params::<f64>(&pc, &ec, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for e in params.enhancer.entries_mut() {
            for v in e.tensor.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let hr = Image::from_fn(h, w, c, |y, x, ch| ((y * 5 + x * 3 + ch) % 11) as f64 / 10.0);
        let pair = SamplePair::from_hr("p", hr, 2).unwrap();
        let cfg = EpisodeConfig {
            steps: 4,
            geometry: PatchGeometry::new(6, 5),
            mode: ActionMode::Sample,
            keep_patches: true,
            ..EpisodeConfig::default()
        };
        let mut acc = ParamGrads::zeros_for(&params);
        let (traj, loss) = training_episode(
            &params,
            &pair,
            &cfg,
            &mut stream_rng(7, 0),
            Some(0.25),
            &mut acc,
        )
        .unwrap();
        let (replay_loss, grad) = enhancement_gradient(&params, &traj, &pair.hr).unwrap();
        assert!((loss - replay_loss).abs() < 1e-12);
        assert!((enhancement_loss(&traj, &pair.hr).unwrap() - replay_loss).abs() < 1e-12);
        for (a, b) in acc.enhancer.entries().iter().zip(grad.entries()) {
            for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
                assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{}: {x} vs {y}", a.name);
            }
        }
        let mut no_grad = ParamGrads::zeros_for(&params);
        let (same, _) =
            training_episode(&params, &pair, &cfg, &mut stream_rng(7, 0), None, &mut no_grad).unwrap();
        assert_eq!(same.locations(), traj.locations());
        assert_eq!(same.final_image, traj.final_image);
    }
}
