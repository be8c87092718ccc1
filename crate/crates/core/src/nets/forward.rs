//! Forward passes of the policy and enhancement networks, expressed on a
//! [`Graph`] so the same code serves inference and differentiation.

use super::config::{EnhancerConfig, PolicyConfig};
use super::params::{ParamGrads, ParamSet, TensorSet};
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{dim_err, AfhError, Result};
use crate::image::{Image, PatchLocation};

/// LSTM hidden and cell state carried across an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentMemory {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentMemory {
    pub fn zeros(size: usize) -> Self {
        Self {
            hidden: vec![0.0; size],
            cell: vec![0.0; size],
        }
    }

    pub fn size(&self) -> usize {
        self.hidden.len()
    }
}

/// Probability of every pixel location, row-major `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != height * width || probs.is_empty() {
            return Err(AfhError::ProbMap(format!(
                "{} entries for a {height}x{width} grid",
                probs.len()
            )));
        }
        if probs.iter().any(|p| p.is_nan()) {
            return Err(AfhError::ProbMap("contains NaN".into()));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(AfhError::ProbMap("negative or infinite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(AfhError::ProbMap(format!("sums to {sum}")));
        }
        Ok(Self {
            height,
            width,
            probs,
        })
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Softmax of row-major logits, in double precision.
    pub fn from_logits(height: usize, width: usize, logits: &[f64]) -> Result<Self> {
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Self::new(height, width, exps.into_iter().map(|e| e / z).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, loc: PatchLocation) -> f64 {
        self.probs[loc.flat_index(self.width)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Input of the fully-connected image encoders: pixels shifted to
/// `[-0.5, 0.5]`.
pub(crate) fn image_tensor<T: Scalar>(img: &Image) -> Tensor<T> {
    let centered: Vec<f64> = img.data().iter().map(|v| v - 0.5).collect();
    Tensor::from_f64(&[centered.len()], &centered)
}

pub(crate) struct PolicyVars {
    enc_w: Var,
    enc_b: Var,
    lstm_w: Var,
    lstm_b: Var,
    head_w: Var,
    head_b: Var,
}

pub(crate) fn bind_policy<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    set: &'p TensorSet<T>,
    trainable: bool,
) -> PolicyVars {
    let mut v = (0..6).map(|i| g.param(set.tensor(i), trainable));
    let mut next = || v.next().expect("policy tensor");
    PolicyVars {
        enc_w: next(),
        enc_b: next(),
        lstm_w: next(),
        lstm_b: next(),
        head_w: next(),
        head_b: next(),
    }
}

/// One policy step: image encoder, LSTM update, location logits.
/// Returns `(logits, hidden, cell)`.
pub(crate) fn policy_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    vars: &PolicyVars,
    cfg: &PolicyConfig,
    img: &Image,
    hidden: Var,
    cell: Var,
    prev: Option<PatchLocation>,
) -> (Var, Var, Var) {
    let h = cfg.lstm_hidden;
    let x = g.input(image_tensor(img));
    let enc = g.linear(vars.enc_w, Some(vars.enc_b), x);
    let enc = g.relu(enc);
    let lstm_in = if cfg.feed_prev_action {
        let emb = match prev {
            Some(l) => [
                l.x as f64 / cfg.image_width as f64,
                l.y as f64 / cfg.image_height as f64,
            ],
            None => [0.0, 0.0],
        };
        let emb = g.input(Tensor::from_f64(&[2], &emb));
        g.concat(&[enc, emb, hidden], &[cfg.lstm_input() + h])
    } else {
        g.concat(&[enc, hidden], &[cfg.lstm_input() + h])
    };
    let gates = g.linear(vars.lstm_w, Some(vars.lstm_b), lstm_in);
    let i = g.slice(gates, 0, h);
    let f = g.slice(gates, h, h);
    let c_hat = g.slice(gates, 2 * h, h);
    let o = g.slice(gates, 3 * h, h);
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let c_hat = g.tanh(c_hat);
    let o = g.sigmoid(o);
    let keep = g.mul(f, cell);
    let write = g.mul(i, c_hat);
    let cell = g.add(keep, write);
    let tc = g.tanh(cell);
    let hidden = g.mul(o, tc);
    let logits = g.linear(vars.head_w, Some(vars.head_b), hidden);
    (logits, hidden, cell)
}

pub(crate) fn check_policy_inputs(cfg: &PolicyConfig, img: &Image, mem: &RecurrentMemory) -> Result<()> {
    let want = (cfg.image_height, cfg.image_width, cfg.channels);
    if img.dims() != want {
        return Err(dim_err(format!(
            "policy expects image {want:?}, got {:?}",
            img.dims()
        )));
    }
    if mem.hidden.len() != cfg.lstm_hidden || mem.cell.len() != cfg.lstm_hidden {
        return Err(dim_err(format!(
            "policy expects memory of size {}, got {}/{}",
            cfg.lstm_hidden,
            mem.hidden.len(),
            mem.cell.len()
        )));
    }
    Ok(())
}

/// Action distribution over all pixel locations for the current image and
/// recurrent memory, plus the updated memory.
pub fn policy_forward<T: Scalar>(
    params: &ParamSet<T>,
    img: &Image,
    mem: &RecurrentMemory,
    prev: Option<PatchLocation>,
) -> Result<(ProbMap, RecurrentMemory)> {
    let cfg = &params.policy_config;
    check_policy_inputs(cfg, img, mem)?;
    if let Some(l) = prev {
        l.validate(cfg.image_height, cfg.image_width)?;
    }
    let mut g = Graph::new();
    let vars = bind_policy(&mut g, &params.policy, false);
    let h0 = g.input(Tensor::from_f64(&[mem.size()], &mem.hidden));
    let c0 = g.input(Tensor::from_f64(&[mem.size()], &mem.cell));
    let (logits, h1, c1) = policy_step(&mut g, &vars, cfg, img, h0, c0, prev);
    let pm = ProbMap::from_logits(cfg.image_height, cfg.image_width, &g.value(logits).to_f64())?;
    let mem = RecurrentMemory {
        hidden: g.value(h1).to_f64(),
        cell: g.value(c1).to_f64(),
    };
    Ok((pm, mem))
}

pub(crate) struct EnhancerVars {
    g1_w: Var,
    g1_b: Var,
    g2_w: Var,
    g2_b: Var,
    conv: Vec<(Var, Var)>,
}

pub(crate) fn bind_enhancer<'p, T: Scalar>(
    g: &mut Graph<'p, T>,
    set: &'p TensorSet<T>,
    trainable: bool,
) -> EnhancerVars {
    let n = set.len();
    let vars: Vec<Var> = (0..n).map(|i| g.param(set.tensor(i), trainable)).collect();
    EnhancerVars {
        g1_w: vars[0],
        g1_b: vars[1],
        g2_w: vars[2],
        g2_b: vars[3],
        conv: vars[4..].chunks_exact(2).map(|c| (c[0], c[1])).collect(),
    }
}

/// Residual map `[C, ph, pw]` for `patch` given the whole image as context.
pub(crate) fn enhancer_residual<T: Scalar>(
    g: &mut Graph<'_, T>,
    vars: &EnhancerVars,
    cfg: &EnhancerConfig,
    patch_planar: Var,
    whole: &Image,
) -> Var {
    let (ph, pw, c) = (cfg.patch_height, cfg.patch_width, cfg.channels);
    let x = g.input(image_tensor(whole));
    let z = g.linear(vars.g1_w, Some(vars.g1_b), x);
    let z = g.relu(z);
    let ctx = g.linear(vars.g2_w, Some(vars.g2_b), z);
    let mut h = g.concat(&[patch_planar, ctx], &[c + 1, ph, pw]);
    let last = vars.conv.len() - 1;
    for (i, &(w, b)) in vars.conv.iter().enumerate() {
        h = g.conv2d(h, w, b);
        if i != last {
            h = g.relu(h);
        }
    }
    h
}

pub(crate) fn check_enhancer_inputs(cfg: &EnhancerConfig, patch: &Image, whole: &Image) -> Result<()> {
    let want_patch = (cfg.patch_height, cfg.patch_width, cfg.channels);
    if patch.dims() != want_patch {
        return Err(dim_err(format!(
            "enhancer expects patch {want_patch:?}, got {:?}",
            patch.dims()
        )));
    }
    let want_whole = (cfg.image_height, cfg.image_width, cfg.channels);
    if whole.dims() != want_whole {
        return Err(dim_err(format!(
            "enhancer expects image {want_whole:?}, got {:?}",
            whole.dims()
        )));
    }
    Ok(())
}

pub(crate) fn planar_to_image(planar: &[f64], h: usize, w: usize, c: usize) -> Image {
    let plane = h * w;
    Image::from_fn(h, w, c, |y, x, ch| planar[ch * plane + y * w + x])
}

/// Enhanced patch: `clamp(patch + residual(patch, whole), 0, 1)`. The sum is
/// formed in double precision, so a zero residual returns `patch` exactly.
pub fn enhance_forward<T: Scalar>(params: &ParamSet<T>, patch: &Image, whole: &Image) -> Result<Image> {
    let cfg = &params.enhancer_config;
    check_enhancer_inputs(cfg, patch, whole)?;
    let mut g = Graph::new();
    let vars = bind_enhancer(&mut g, &params.enhancer, false);
    let planar = patch.to_planar();
    let p = g.input(Tensor::from_f64(
        &[cfg.channels, cfg.patch_height, cfg.patch_width],
        &planar,
    ));
    let res = enhancer_residual(&mut g, &vars, cfg, p, whole);
    let sum: Vec<f64> = planar
        .iter()
        .zip(g.value(res).data())
        .map(|(&a, &r)| a + r.as_f64())
        .collect();
    Ok(planar_to_image(&sum, cfg.patch_height, cfg.patch_width, cfg.channels))
}

/// Graph-level network operations available to loss closures.
pub struct NetOps<'a, T: Scalar> {
    params: &'a ParamSet<T>,
    policy: PolicyVars,
    enhancer: EnhancerVars,
    /// Parameter leaves in `ParamSet::iter` order.
    leaves: Vec<(String, Var)>,
}

impl<'a, T: Scalar> NetOps<'a, T> {
    pub fn param(&self, name: &str) -> Option<Var> {
        self.leaves.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    /// Differentiable policy step; returns `(log_probs, hidden, cell)`.
    pub fn policy_log_probs(
        &self,
        g: &mut Graph<'_, T>,
        img: &Image,
        hidden: Var,
        cell: Var,
        prev: Option<PatchLocation>,
    ) -> (Var, Var, Var) {
        let (logits, h, c) = policy_step(
            g,
            &self.policy,
            &self.params.policy_config,
            img,
            hidden,
            cell,
            prev,
        );
        (g.log_softmax(logits), h, c)
    }

    pub fn zero_memory(&self, g: &mut Graph<'_, T>) -> (Var, Var) {
        let n = self.params.policy_config.lstm_hidden;
        (g.input(Tensor::zeros(&[n])), g.input(Tensor::zeros(&[n])))
    }

    /// Differentiable enhanced patch in planar `[C, ph, pw]` layout.
    pub fn enhance(&self, g: &mut Graph<'_, T>, patch: &Image, whole: &Image) -> Var {
        let cfg = &self.params.enhancer_config;
        let p = g.input(Tensor::from_f64(
            &[cfg.channels, cfg.patch_height, cfg.patch_width],
            &patch.to_planar(),
        ));
        let res = enhancer_residual(g, &self.enhancer, cfg, p, whole);
        let sum = g.add(p, res);
        g.clamp01(sum)
    }
}

/// Reverse-mode gradients of a scalar built by `loss_fn` with respect to
/// every parameter tensor. Returns the loss value alongside. Errors if the
/// returned variable is not a scalar.
pub fn gradients<T: Scalar, F>(params: &ParamSet<T>, loss_fn: F) -> Result<(T, ParamGrads<T>)>
where
    F: for<'g> FnOnce(&mut Graph<'g, T>, &NetOps<'_, T>) -> Var,
{
    let mut out = ParamGrads::zeros_for(params);
    let value = accumulate_gradients(params, Trainable::ALL, T::one(), &mut out, loss_fn)?;
    Ok((value, out))
}

/// Parameter groups that receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Trainable {
    pub policy: bool,
    pub enhancer: bool,
}

impl Trainable {
    pub const ALL: Self = Self {
        policy: true,
        enhancer: true,
    };
    pub const POLICY: Self = Self {
        policy: true,
        enhancer: false,
    };
    pub const ENHANCER: Self = Self {
        policy: false,
        enhancer: true,
    };
}

/// Adds `scale * d(loss)/d(param)` into `acc` for the trainable groups and
/// returns the loss value.
pub(crate) fn accumulate_gradients<T: Scalar, F>(
    params: &ParamSet<T>,
    trainable: Trainable,
    scale: T,
    acc: &mut ParamGrads<T>,
    loss_fn: F,
) -> Result<T>
where
    F: for<'g> FnOnce(&mut Graph<'g, T>, &NetOps<'_, T>) -> Var,
{
    let mut g = Graph::new();
    let first = g.len();
    let policy = bind_policy(&mut g, &params.policy, trainable.policy);
    let enhancer = bind_enhancer(&mut g, &params.enhancer, trainable.enhancer);
    let leaves: Vec<(String, Var)> = params
        .iter()
        .enumerate()
        .map(|(i, e)| (e.name.clone(), Var::from_index(first + i)))
        .collect();
    let ops = NetOps {
        params,
        policy,
        enhancer,
        leaves,
    };
    let loss = loss_fn(&mut g, &ops);
    let grads = g
        .backward(loss)
        .ok_or_else(|| dim_err("loss must be a scalar"))?;
    let value = g.scalar(loss);
    for (entry, (_, var)) in acc
        .policy
        .entries_mut()
        .iter_mut()
        .chain(acc.enhancer.entries_mut())
        .zip(&ops.leaves)
    {
        if let Some(gr) = grads.get(*var) {
            crate::autodiff::axpy(scale, gr, entry.tensor.data_mut());
        }
    }
    Ok(value)
}
