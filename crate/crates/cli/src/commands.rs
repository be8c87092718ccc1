use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use afh_core::config::RunConfig;
use afh_core::data::Split;
use afh_core::episode::{export_trajectory, read_trajectory, run_episode, ActionMode, EpisodeConfig};
use afh_core::error::{config_err, AfhError, Result};
use afh_core::image::{read_png, resize_bicubic, write_png, Image};
use afh_core::metrics::{bicubic_report, MetricReport};
use afh_core::nets::{load_checkpoint, Checkpoint, ParamSet};
use afh_core::runner::{
    embedded_run_config, evaluate_run, init_state, run_suite, save_run_checkpoint, train_run,
    write_ablation_csv, Suite, SuiteObserver, Variant,
};
use afh_core::training::{CsvLog, IterationStats, TrainObserver, TrainState};
use afh_core::visualize::render_trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::manifest;
use crate::ConfigArgs;

pub const EFFECTIVE_CONFIG: &str = "config.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Resolution order: --config, --preset, the checkpoint's embedded config,
/// the `toy` preset. Overrides are applied last.
fn resolve_config(args: &ConfigArgs, embedded: Option<RunConfig>) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset, embedded) {
        (Some(path), _, _) => RunConfig::load(path)?,
        (None, Some(name), _) => RunConfig::preset(name)?,
        (None, None, Some(cfg)) => cfg,
        (None, None, None) => RunConfig::toy(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_model(cfg: &RunConfig, params: &ParamSet<f32>) -> Result<()> {
    if params.policy_config != cfg.policy || params.enhancer_config != cfg.enhancer {
        return Err(AfhError::Checkpoint(
            "checkpoint networks differ from the configured model".into(),
        ));
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Checkpoint<f32>> {
    if !path.exists() {
        return Err(AfhError::Checkpoint(format!("{} does not exist", path.display())));
    }
    load_checkpoint::<f32>(path)
}

/// Prints progress and writes the CSV log and periodic checkpoints.
struct TrainProgress<'a> {
    cfg: &'a RunConfig,
    log: CsvLog,
    checkpoint_dir: PathBuf,
    written: Vec<PathBuf>,
    report_every: u64,
    started: Instant,
}

impl TrainObserver<f32> for TrainProgress<'_> {
    fn on_iteration(&mut self, s: &IterationStats) -> Result<()> {
        TrainObserver::<f32>::on_iteration(&mut self.log, s)?;
        if s.val_psnr.is_some() || s.iter % self.report_every == 0 {
            let val = s.val_psnr.map(|v| format!(" val_psnr {v:.3}")).unwrap_or_default();
            eprintln!(
                "iter {} ({:.0}s) enh_loss {:.5} return {:.5} baseline {:.5}{val}",
                s.iter,
                self.started.elapsed().as_secs_f64(),
                s.enh_loss,
                s.mean_return,
                s.baseline
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState<f32>) -> Result<()> {
        fs::create_dir_all(&self.checkpoint_dir)?;
        let path = self.checkpoint_dir.join(format!("iter_{:07}.ckpt", state.iteration));
        save_run_checkpoint(self.cfg, state, &path)?;
        self.written.push(path);
        Ok(())
    }
}

pub fn train(args: &ConfigArgs, checkpoint: Option<PathBuf>, iterations: Option<usize>) -> Result<()> {
    let mut cfg = resolve_config(args, None)?;
    if let Some(n) = iterations {
        cfg.training.optimizer.iterations = n;
    }
    if checkpoint.is_some() {
        cfg.resume_from = checkpoint;
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let mut state = match &cfg.resume_from {
        Some(path) => {
            let state = TrainState::<f32>::load(path)?;
            check_model(&cfg, &state.params)?;
            eprintln!("resuming from {} at iteration {}", path.display(), state.iteration);
            state
        }
        None => init_state(&cfg)?,
    };
    let config_path = out.join(EFFECTIVE_CONFIG);
    cfg.save(&config_path)?;
    let train_set = cfg.data.load(Split::Train)?;
    let val_set = if cfg.training.validate_every > 0 {
        cfg.data.load(Split::Test)?
    } else {
        Vec::new()
    };
    // The budget counts total iterations, so a resumed run finishes it.
    let mut budget = cfg.clone();
    budget.training.optimizer.iterations = cfg
        .training
        .optimizer
        .iterations
        .saturating_sub(state.iteration as usize);
    let log_path = out.join(TRAIN_LOG);
    let mut progress = TrainProgress {
        cfg: &cfg,
        log: CsvLog::open(&log_path)?,
        checkpoint_dir: out.join("checkpoints"),
        written: Vec::new(),
        report_every: (cfg.training.optimizer.iterations as u64 / 20).max(1),
        started: Instant::now(),
    };
    train_run(&budget, &mut state, &train_set, &val_set, &mut progress)?;
    let final_path = out.join(FINAL_CHECKPOINT);
    save_run_checkpoint(&cfg, &state, &final_path)?;
    let mut written = std::mem::take(&mut progress.written);
    written.extend([config_path, log_path, final_path.clone()]);
    manifest::record(&out, &written)?;
    eprintln!("trained to iteration {}; wrote {}", state.iteration, final_path.display());
    Ok(())
}

/// Mean wall-clock seconds of one greedy episode over `inputs`.
fn episode_latency(params: &ParamSet<f32>, cfg: &EpisodeConfig, inputs: &[&Image], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let started = Instant::now();
    for input in inputs {
        run_episode(params, input, cfg, &mut rng)?;
    }
    Ok(started.elapsed().as_secs_f64() / inputs.len().max(1) as f64)
}

fn write_summary(path: &Path, rows: &[(&str, &MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "psnr", "ssim", "fsim"])?;
    for (name, r) in rows {
        w.write_record([
            name.to_string(),
            r.mean_psnr.to_string(),
            r.mean_ssim.to_string(),
            r.mean_fsim.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(args: &ConfigArgs, checkpoint: &Path, time: bool) -> Result<()> {
    let ck = load_model(checkpoint)?;
    let cfg = resolve_config(args, embedded_run_config(&ck.meta)?)?;
    check_model(&cfg, &ck.params)?;
    let pairs = cfg.data.load(Split::Test)?;
    let report = evaluate_run(&cfg, &ck.params, &pairs)?;
    let bicubic = bicubic_report(&pairs)?;
    let dir = cfg.output_dir.join("eval");
    fs::create_dir_all(&dir)?;
    let per_image = dir.join("metrics.csv");
    report.write_csv(&per_image)?;
    let summary = dir.join("summary.csv");
    write_summary(&summary, &[("bicubic", &bicubic), ("attention_fh", &report)])?;
    manifest::record(&cfg.output_dir, &[per_image, summary])?;
    println!("method,psnr,ssim,fsim");
    for (name, r) in [("bicubic", &bicubic), ("attention_fh", &report)] {
        println!("{name},{:.4},{:.4},{:.4}", r.mean_psnr, r.mean_ssim, r.mean_fsim);
    }
    if time {
        let greedy = EpisodeConfig {
            mode: ActionMode::Greedy,
            keep_patches: false,
            ..cfg.episode.clone()
        };
        let inputs: Vec<&Image> = pairs.iter().map(|p| &p.lr_up).collect();
        let secs = episode_latency(&ck.params, &greedy, &inputs, cfg.seed)?;
        eprintln!("mean episode latency {:.2} ms over {} images", secs * 1e3, inputs.len());
    }
    Ok(())
}

/// Upsamples `input` by the integer factor that maps it onto `(h, w)`.
fn upsample_to_model(input: &Image, h: usize, w: usize, channels: usize) -> Result<Image> {
    let (ih, iw) = (input.height(), input.width());
    let same_factor = h % ih == 0 && w % iw == 0 && h / ih == w / iw;
    if !same_factor {
        return Err(AfhError::Dimension(format!(
            "input {ih}x{iw} is not an integer downscaling of the model resolution {h}x{w}"
        )));
    }
    let input = input.expand_channels(channels)?;
    if (ih, iw) == (h, w) {
        return Ok(input);
    }
    resize_bicubic(&input, h, w)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn hallucinate(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    config: Option<&Path>,
    dump: Option<&Path>,
    time: bool,
) -> Result<()> {
    let ck = load_model(checkpoint)?;
    let cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => embedded_run_config(&ck.meta)?.ok_or_else(|| {
            config_err("config", "the checkpoint stores no run config; pass --config")
        })?,
    };
    check_model(&cfg, &ck.params)?;
    let lr = read_png(input)?;
    let p = &cfg.policy;
    let up = upsample_to_model(&lr, p.image_height, p.image_width, p.channels)?;
    let episode = EpisodeConfig {
        mode: ActionMode::Greedy,
        keep_patches: dump.is_some(),
        ..cfg.episode.clone()
    };
    let started = Instant::now();
    let traj = run_episode(&ck.params, &up, &episode, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let elapsed = started.elapsed().as_secs_f64();
    write_png(&traj.final_image, output)?;
    let mut written = vec![output.to_path_buf()];
    if let Some(dir) = dump {
        written.extend(export_trajectory(&traj, dir)?);
    }
    manifest::record(&parent_dir(output), &written)?;
    if time {
        eprintln!("episode latency {:.2} ms ({} steps)", elapsed * 1e3, traj.steps());
    }
    Ok(())
}

/// Saves each variant's trained model and forwards training progress.
struct AblationProgress {
    dir: PathBuf,
    current: Option<RunConfig>,
    written: Vec<PathBuf>,
}

impl SuiteObserver for AblationProgress {
    fn on_variant_start(&mut self, variant: &Variant, cfg: &RunConfig) -> Result<()> {
        eprintln!(
            "training {} ({} steps, {} iterations)",
            variant.label(),
            cfg.episode.steps,
            cfg.training.optimizer.iterations
        );
        self.current = Some(cfg.clone());
        Ok(())
    }

    fn on_variant_done(&mut self, variant: &Variant, state: &TrainState<f32>) -> Result<()> {
        let cfg = self.current.take().expect("variant started");
        fs::create_dir_all(&self.dir)?;
        let name: String = variant
            .label()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '_')
            .collect();
        let path = self.dir.join(format!("{name}.ckpt"));
        save_run_checkpoint(&cfg, state, &path)?;
        self.written.push(path);
        Ok(())
    }
}

pub fn ablate(args: &ConfigArgs, suite: &str) -> Result<()> {
    let suite: Suite = suite.parse()?;
    let cfg = resolve_config(args, None)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let mut progress = AblationProgress {
        dir: out.join("ablation").join(suite.name()),
        current: None,
        written: Vec::new(),
    };
    let rows = run_suite(&cfg, suite, &mut progress)?;
    let table = out.join(format!("ablation_{}.csv", suite.name()));
    write_ablation_csv(&rows, &table)?;
    let config_path = out.join(format!("ablation_{}_config.json", suite.name()));
    cfg.save(&config_path)?;
    let mut written = progress.written;
    written.extend([table, config_path]);
    manifest::record(&out, &written)?;
    println!("suite,variant,steps,psnr,ssim,fsim");
    for r in &rows {
        println!(
            "{},{},{},{:.4},{:.4},{:.4}",
            r.suite, r.variant, r.steps, r.psnr, r.ssim, r.fsim
        );
    }
    Ok(())
}

pub fn visualize(trajectory_dir: &Path, output: &Path) -> Result<()> {
    let traj = read_trajectory(trajectory_dir)?;
    let rendering = render_trajectory(&traj)?;
    write_png(&rendering.image, output)?;
    manifest::record(&parent_dir(output), &[output.to_path_buf()])?;
    Ok(())
}
