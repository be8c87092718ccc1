//! Sequential select, crop, enhance, replace rollouts.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{AfhError, Result};
use crate::image::{
    crop_patch, read_png, replace_patch_in_place, write_png, Image, PatchGeometry, PatchLocation,
};
use crate::nets::{enhance_forward, policy_forward, ParamSet, ProbMap, RecurrentMemory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// Where patch locations come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Learned,
    UniformRandom,
    /// Always the image center; pair with a full-image geometry.
    FullImage,
}

/// Image fed to the policy and to the enhancer's global encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    Current,
    Initial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub steps: usize,
    pub geometry: PatchGeometry,
    pub mode: ActionMode,
    #[serde(default = "default_selector")]
    pub selector: Selector,
    #[serde(default = "default_context")]
    pub context: ContextSource,
    /// Store pre/post patches per step. Required for training replays.
    #[serde(default = "default_true")]
    pub keep_patches: bool,
    /// Greedy mode only: skip locations already covered by an earlier
    /// patch of the episode, unless every location is covered.
    #[serde(default)]
    pub suppress_revisits: bool,
}

fn default_selector() -> Selector {
    Selector::Learned
}

fn default_context() -> ContextSource {
    ContextSource::Current
}

fn default_true() -> bool {
    true
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            geometry: PatchGeometry::default(),
            mode: ActionMode::Greedy,
            selector: Selector::Learned,
            context: ContextSource::Current,
            keep_patches: true,
            suppress_revisits: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepPatches {
    pub before: Image,
    pub after: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    pub loc: PatchLocation,
    /// Natural log of the probability of `loc`; absent for greedy and
    /// fixed-location steps.
    pub log_prob: Option<f64>,
    pub patches: Option<StepPatches>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial: Image,
    pub records: Vec<StepRecord>,
    pub final_image: Image,
    pub geometry: PatchGeometry,
    pub selector: Selector,
    pub mode: ActionMode,
    pub context: ContextSource,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn locations(&self) -> Vec<PatchLocation> {
        self.records.iter().map(|r| r.loc).collect()
    }

    /// `I_0 ..= I_T`, rebuilt from the initial image and the stored
    /// enhanced patches.
    pub fn states(&self) -> Result<Vec<Image>> {
        let mut states = Vec::with_capacity(self.records.len() + 1);
        let mut cur = self.initial.clone();
        states.push(cur.clone());
        for r in &self.records {
            let p = r.patches.as_ref().ok_or_else(|| {
                AfhError::Training("trajectory was recorded without patches".into())
            })?;
            replace_patch_in_place(&mut cur, r.loc, &p.after, &self.geometry)?;
            states.push(cur.clone());
        }
        Ok(states)
    }

    /// Context image seen at each step (`I_{t-1}` or `I_0`).
    pub fn contexts(&self) -> Result<Vec<Image>> {
        let mut states = self.states()?;
        states.pop();
        if self.context == ContextSource::Initial {
            for s in &mut states {
                s.clone_from(&self.initial);
            }
        }
        Ok(states)
    }
}

/// Draws a location with probability `pm[y, x]` and returns its log-probability.
pub fn sample_location<R: Rng + ?Sized>(pm: &ProbMap, rng: &mut R) -> Result<(PatchLocation, f64)> {
    if pm.probs().iter().any(|p| !p.is_finite()) {
        return Err(AfhError::ProbMap("non-finite entry".into()));
    }
    let dist = WeightedIndex::new(pm.probs()).map_err(|e| AfhError::ProbMap(e.to_string()))?;
    let i = dist.sample(rng);
    Ok((PatchLocation::from_flat(i, pm.width()), pm.probs()[i].ln()))
}

/// Most probable location; ties go to the smallest row-major index.
pub fn argmax_location(pm: &ProbMap) -> PatchLocation {
    let mut best = 0;
    for (i, &p) in pm.probs().iter().enumerate() {
        if p > pm.probs()[best] {
            best = i;
        }
    }
    PatchLocation::from_flat(best, pm.width())
}

/// Most probable location with `excluded[i] == false`; plain
/// [`argmax_location`] when every location is excluded.
pub fn argmax_location_excluding(pm: &ProbMap, excluded: &[bool]) -> PatchLocation {
    let mut best: Option<usize> = None;
    for (i, &p) in pm.probs().iter().enumerate() {
        if !excluded[i] && best.map_or(true, |b| p > pm.probs()[b]) {
            best = Some(i);
        }
    }
    match best {
        Some(i) => PatchLocation::from_flat(i, pm.width()),
        None => argmax_location(pm),
    }
}

fn mark_covered(covered: &mut [bool], loc: PatchLocation, geom: &PatchGeometry, h: usize, w: usize) {
    let (ys, xs) = geom.footprint(loc, h, w);
    for y in ys {
        covered[y * w + xs.start..y * w + xs.end].fill(true);
    }
}

pub(crate) fn check_episode(
    pc: (usize, usize, usize),
    input: &Image,
    cfg: &EpisodeConfig,
) -> Result<()> {
    if input.dims() != pc {
        return Err(AfhError::Dimension(format!(
            "episode input {:?} does not match model image {pc:?}",
            input.dims()
        )));
    }
    cfg.geometry.validate_for(input.height(), input.width())?;
    if cfg.selector == Selector::FullImage
        && (cfg.geometry.patch_height, cfg.geometry.patch_width) != (input.height(), input.width())
    {
        return Err(AfhError::Geometry(
            "full-image selector requires the patch to equal the image".into(),
        ));
    }
    Ok(())
}

/// Runs `cfg.steps` steps from `input` (the upsampled low-resolution image).
pub fn run_episode<T: Scalar, R: Rng + ?Sized>(
    params: &ParamSet<T>,
    input: &Image,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    rollout(params, input, cfg, rng, |_, before, context| {
        enhance_forward(params, before, context)
    })
}

/// Episode driver with a pluggable enhancement step
/// `(location, patch, context) -> enhanced patch`.
pub(crate) fn rollout<T: Scalar, R: Rng + ?Sized>(
    params: &ParamSet<T>,
    input: &Image,
    cfg: &EpisodeConfig,
    rng: &mut R,
    mut enhance: impl FnMut(PatchLocation, &Image, &Image) -> Result<Image>,
) -> Result<Trajectory> {
    let pc = &params.policy_config;
    check_episode((pc.image_height, pc.image_width, pc.channels), input, cfg)?;
    let (h, w) = (input.height(), input.width());
    let mut mem = RecurrentMemory::zeros(pc.lstm_hidden);
    let mut prev = None;
    let mut cur = input.clone();
    let mut records = Vec::with_capacity(cfg.steps);
    let mut covered = vec![false; h * w];
    for step in 1..=cfg.steps {
        let context = match cfg.context {
            ContextSource::Current => &cur,
            ContextSource::Initial => input,
        };
        let (loc, log_prob) = match cfg.selector {
            Selector::Learned => {
                let (pm, next) = policy_forward(params, context, &mem, prev)?;
                mem = next;
                match cfg.mode {
                    ActionMode::Sample => {
                        let (l, lp) = sample_location(&pm, rng)?;
                        (l, Some(lp))
                    }
                    ActionMode::Greedy if cfg.suppress_revisits => {
                        (argmax_location_excluding(&pm, &covered), None)
                    }
                    ActionMode::Greedy => (argmax_location(&pm), None),
                }
            }
            Selector::UniformRandom => {
                let l = PatchLocation::new(rng.gen_range(1..=w), rng.gen_range(1..=h));
                (l, Some(-((h * w) as f64).ln()))
            }
            Selector::FullImage => (PatchLocation::image_center(h, w), None),
        };
        let before = crop_patch(&cur, loc, &cfg.geometry)?;
        let after = enhance(loc, &before, context)?;
        replace_patch_in_place(&mut cur, loc, &after, &cfg.geometry)?;
        mark_covered(&mut covered, loc, &cfg.geometry, h, w);
        records.push(StepRecord {
            step,
            loc,
            log_prob,
            patches: cfg.keep_patches.then_some(StepPatches { before, after }),
        });
        prev = Some(loc);
    }
    Ok(Trajectory {
        initial: input.clone(),
        records,
        final_image: cur,
        geometry: cfg.geometry,
        selector: cfg.selector,
        mode: cfg.mode,
        context: cfg.context,
    })
}

/// Row-major `height x width` mask of pixels touched by any step.
pub fn coverage_mask(traj: &Trajectory, height: usize, width: usize) -> Vec<bool> {
    let mut mask = vec![false; height * width];
    for r in &traj.records {
        mark_covered(&mut mask, r.loc, &traj.geometry, height, width);
    }
    mask
}

/// One row of a trajectory manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub step: usize,
    pub x: usize,
    pub y: usize,
    pub log_prob: Option<f64>,
    pub patch_height: usize,
    pub patch_width: usize,
    pub pad_value: f64,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn state_file(t: usize) -> String {
    format!("state_{t:03}.png")
}

pub fn patch_file(t: usize) -> String {
    format!("patch_{t:03}.png")
}

/// Writes `state_000.png ..= state_T.png` (`I_0 ..= I_T`), the cropped patch
/// of every step as `patch_t.png`, and `manifest.csv`.
pub fn export_trajectory(traj: &Trajectory, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (t, s) in traj.states()?.iter().enumerate() {
        let p = dir.join(state_file(t));
        write_png(s, &p)?;
        written.push(p);
    }
    let g = traj.geometry;
    let mut wtr = csv::Writer::from_path(dir.join(MANIFEST_FILE))?;
    for r in &traj.records {
        let patches = r.patches.as_ref().expect("states() checked patches");
        let p = dir.join(patch_file(r.step));
        write_png(&patches.before, &p)?;
        written.push(p);
        wtr.serialize(ManifestRow {
            step: r.step,
            x: r.loc.x,
            y: r.loc.y,
            log_prob: r.log_prob,
            patch_height: g.patch_height,
            patch_width: g.patch_width,
            pad_value: g.pad_value,
        })?;
    }
    wtr.flush()?;
    written.push(dir.join(MANIFEST_FILE));
    Ok(written)
}

/// Exported trajectory read back from disk.
#[derive(Clone, Debug)]
pub struct ExportedTrajectory {
    pub rows: Vec<ManifestRow>,
    pub states: Vec<Image>,
    pub patches: Vec<Image>,
}

pub fn read_trajectory(dir: impl AsRef<Path>) -> Result<ExportedTrajectory> {
    let dir = dir.as_ref();
    let mut rdr = csv::Reader::from_path(dir.join(MANIFEST_FILE))
        .map_err(|e| AfhError::Manifest(e.to_string()))?;
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row.map_err(|e| AfhError::Manifest(e.to_string()))?;
        if row.step != rows.len() + 1 {
            return Err(AfhError::Manifest(format!(
                "expected step {}, found {}",
                rows.len() + 1,
                row.step
            )));
        }
        rows.push(row);
    }
    let mut states = Vec::with_capacity(rows.len() + 1);
    for t in 0..=rows.len() {
        states.push(read_png(dir.join(state_file(t)))?);
    }
    let (h, w) = (states[0].height(), states[0].width());
    let mut patches = Vec::with_capacity(rows.len());
    for r in &rows {
        PatchLocation::new(r.x, r.y)
            .validate(h, w)
            .map_err(|e| AfhError::Manifest(e.to_string()))?;
        let p = read_png(dir.join(patch_file(r.step)))?;
        if (p.height(), p.width()) != (r.patch_height, r.patch_width) {
            return Err(AfhError::Manifest(format!(
                "patch {} has size {}x{}, manifest says {}x{}",
                r.step,
                p.height(),
                p.width(),
                r.patch_height,
                r.patch_width
            )));
        }
        patches.push(p);
    }
    Ok(ExportedTrajectory {
        rows,
        states,
        patches,
    })
}
