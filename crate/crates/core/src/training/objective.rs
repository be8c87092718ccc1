use crate::autodiff::{Scalar, Tensor};
use crate::episode::{ActionMode, Selector, Trajectory};
use crate::error::{AfhError, Result};
use crate::image::{crop_patch, Image, PatchGeometry, PatchLocation};
use crate::nets::{accumulate_gradients, planar_to_image, ParamGrads, ParamSet, TensorSet, Trainable};

/// Planar ground-truth patch at `loc` and the matching in-bounds mask.
pub(crate) fn step_target(
    gt: &Image,
    loc: PatchLocation,
    geom: &PatchGeometry,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let target = crop_patch(gt, loc, geom)?.to_planar();
    let mask = geom
        .in_bounds_mask(loc, gt.height(), gt.width())
        .repeat(gt.channels());
    Ok((target, mask))
}

fn masked_mse(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&x, &y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn check_gt(traj: &Trajectory, gt: &Image) -> Result<()> {
    if !traj.initial.same_dims(gt) {
        return Err(AfhError::Dimension(format!(
            "ground truth {:?} does not match trajectory images {:?}",
            gt.dims(),
            traj.initial.dims()
        )));
    }
    Ok(())
}

/// Mean over steps of the in-bounds MSE between each enhanced patch and the
/// ground-truth patch at the same location. Zero for an empty trajectory.
pub fn enhancement_loss(traj: &Trajectory, gt: &Image) -> Result<f64> {
    check_gt(traj, gt)?;
    if traj.records.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in &traj.records {
        let p = r
            .patches
            .as_ref()
            .ok_or_else(|| AfhError::Training("trajectory was recorded without patches".into()))?;
        let (target, mask) = step_target(gt, r.loc, &traj.geometry)?;
        total += masked_mse(&p.after.to_planar(), &target, &mask);
    }
    Ok(total / traj.records.len() as f64)
}

/// Differentiable enhancement of one patch. Adds `scale * d(mse)/d(theta_e)`
/// into `acc` and returns the enhanced patch with its loss.
pub(crate) fn enhancer_step<T: Scalar>(
    params: &ParamSet<T>,
    before: &Image,
    context: &Image,
    target: &[f64],
    mask: &[bool],
    scale: f64,
    acc: &mut ParamGrads<T>,
) -> Result<(Image, f64)> {
    let cfg = &params.enhancer_config;
    let mut out = Vec::new();
    let target: Vec<T> = target.iter().map(|&v| T::from_f64(v)).collect();
    let loss = accumulate_gradients(params, Trainable::ENHANCER, T::from_f64(scale), acc, |g, ops| {
        let y = ops.enhance(g, before, context);
        out = g.value(y).to_f64();
        g.masked_mse(y, target, mask.to_vec())
    })?;
    let after = planar_to_image(&out, cfg.patch_height, cfg.patch_width, cfg.channels);
    Ok((after, loss.as_f64()))
}

/// Replays the trajectory and returns the enhancement loss together with its
/// gradient with respect to the enhancer parameters.
pub fn enhancement_gradient<T: Scalar>(
    params: &ParamSet<T>,
    traj: &Trajectory,
    gt: &Image,
) -> Result<(f64, TensorSet<T>)> {
    check_gt(traj, gt)?;
    let mut acc = ParamGrads::zeros_for(params);
    let steps = traj.records.len();
    if steps == 0 {
        return Ok((0.0, acc.enhancer));
    }
    let contexts = traj.contexts()?;
    let mut total = 0.0;
    for (r, ctx) in traj.records.iter().zip(&contexts) {
        let before = &r.patches.as_ref().expect("contexts() checked patches").before;
        let (target, mask) = step_target(gt, r.loc, &traj.geometry)?;
        let (_, loss) = enhancer_step(params, before, ctx, &target, &mask, 1.0 / steps as f64, &mut acc)?;
        total += loss;
    }
    Ok((total / steps as f64, acc.enhancer))
}

fn check_sampled(traj: &Trajectory) -> Result<()> {
    if traj.selector != Selector::Learned || traj.mode != ActionMode::Sample {
        return Err(AfhError::Training(
            "policy gradients need trajectories sampled from the learned policy".into(),
        ));
    }
    if traj.records.iter().any(|r| r.log_prob.is_none()) {
        return Err(AfhError::Training("trajectory step without a log-probability".into()));
    }
    Ok(())
}

/// Adds `scale * sum_t grad log pi(l_t | s_{t-1})` into `acc`, replaying the
/// stored states through the policy.
pub(crate) fn accumulate_score<T: Scalar>(
    params: &ParamSet<T>,
    traj: &Trajectory,
    scale: f64,
    acc: &mut ParamGrads<T>,
) -> Result<()> {
    check_sampled(traj)?;
    if scale == 0.0 || traj.records.is_empty() {
        return Ok(());
    }
    let contexts = traj.contexts()?;
    let width = params.policy_config.image_width;
    accumulate_gradients(params, Trainable::POLICY, T::from_f64(scale), acc, |g, ops| {
        let (mut h, mut c) = ops.zero_memory(g);
        let mut prev = None;
        let mut total = None;
        for (r, ctx) in traj.records.iter().zip(&contexts) {
            let (lp, h2, c2) = ops.policy_log_probs(g, ctx, h, c, prev);
            let term = g.pick(lp, r.loc.flat_index(width));
            total = Some(match total {
                Some(t) => g.add(t, term),
                None => term,
            });
            (h, c, prev) = (h2, c2, Some(r.loc));
        }
        total.unwrap_or_else(|| g.input(Tensor::scalar(T::zero())))
    })?;
    Ok(())
}

/// REINFORCE estimate of the gradient of `-E[R]` with respect to the policy
/// parameters: `-(1/N) sum_i (R_i - b) sum_t grad log pi(l_t)`.
pub fn reinforce_gradient<T: Scalar>(
    params: &ParamSet<T>,
    batch: &[Trajectory],
    returns: &[f64],
    baseline: f64,
) -> Result<TensorSet<T>> {
    if batch.len() != returns.len() {
        return Err(AfhError::Training(format!(
            "{} trajectories but {} returns",
            batch.len(),
            returns.len()
        )));
    }
    if batch.is_empty() {
        return Err(AfhError::Training("empty batch".into()));
    }
    let mut acc = ParamGrads::zeros_for(params);
    let n = batch.len() as f64;
    for (traj, &ret) in batch.iter().zip(returns) {
        check_sampled(traj)?;
        accumulate_score(params, traj, -(ret - baseline) / n, &mut acc)?;
    }
    Ok(acc.policy)
}
