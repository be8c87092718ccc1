use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{AfhError, Result};
use crate::nets::{ParamGrads, ParamSet, TensorSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// First-moment decay; the "momentum term" of the original setup.
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub iterations: usize,
    /// Learning rate of the policy group; `learning_rate` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_learning_rate: Option<f64>,
}

fn default_lr() -> f64 {
    2e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            batch_size: default_batch(),
            iterations: 0,
            policy_learning_rate: None,
        }
    }
}

impl OptimizerConfig {
    /// The same settings with the policy learning rate as the main one.
    pub fn for_policy(&self) -> Self {
        Self {
            learning_rate: self.policy_learning_rate.unwrap_or(self.learning_rate),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(AfhError::Config {
                field: format!("optimizer.{field}"),
                reason: reason.into(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if let Some(lr) = self.policy_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("policy_learning_rate", "must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        Ok(())
    }
}

/// First/second moment estimates for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments<T> {
    pub step: u64,
    pub m: TensorSet<T>,
    pub v: TensorSet<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn new(like: &TensorSet<T>) -> Self {
        Self {
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    /// One bias-corrected ADAM update of `params` along `grads`.
    pub fn step(&mut self, params: &mut TensorSet<T>, grads: &TensorSet<T>, cfg: &OptimizerConfig) -> Result<()> {
        grads.check_layout(params)?;
        self.step += 1;
        let t = self.step as i32;
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = T::from_f64(cfg.learning_rate);
        let eps = T::from_f64(cfg.epsilon);
        let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
        let (c1t, c2t) = (T::from_f64(c1), T::from_f64(c2));
        for (((p, g), m), v) in params
            .entries_mut()
            .iter_mut()
            .zip(grads.entries())
            .zip(self.m.entries_mut())
            .zip(self.v.entries_mut())
        {
            let pd = p.tensor.data_mut();
            let gd = g.tensor.data();
            let md = m.tensor.data_mut();
            let vd = v.tensor.data_mut();
            for i in 0..pd.len() {
                let gi = gd[i];
                md[i] = b1t * md[i] + (T::one() - b1t) * gi;
                vd[i] = b2t * vd[i] + (T::one() - b2t) * gi * gi;
                let mhat = md[i] / c1t;
                let vhat = vd[i] / c2t;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// ADAM state for both parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub policy: AdamMoments<T>,
    pub enhancer: AdamMoments<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            policy: AdamMoments::new(&params.policy),
            enhancer: AdamMoments::new(&params.enhancer),
        }
    }
}

/// Applies one ADAM step to both groups.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamGrads<T>,
    state: &mut AdamState<T>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    state.policy.step(&mut params.policy, &grads.policy, cfg)?;
    state.enhancer.step(&mut params.enhancer, &grads.enhancer, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::nets::NamedTensor;

    fn scalar_set(v: f64) -> TensorSet<f64> {
        TensorSet::new(vec![NamedTensor {
            name: "w".into(),
            tensor: Tensor::from_vec(&[1], vec![v]),
        }])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_set(0.3);
        let mut st = AdamMoments::new(&p);
        st.step(&mut p, &scalar_set(0.0), &OptimizerConfig::default()).unwrap();
        assert_eq!(p.tensor(0).data()[0], 0.3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: mhat = g, vhat = g^2, update = lr * g / (|g| + eps).
        let cfg = OptimizerConfig::default();
        let mut p = scalar_set(1.0);
        let mut st = AdamMoments::new(&p);
        st.step(&mut p, &scalar_set(1.0), &cfg).unwrap();
        let expected = 1.0 - cfg.learning_rate / (1.0 + cfg.epsilon);
        assert!((p.tensor(0).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_calls_identical_results() {
        let cfg = OptimizerConfig::default();
        let run = || {
            let mut p = scalar_set(0.5);
            let mut st = AdamMoments::new(&p);
            for g in [0.1, -0.4, 0.7] {
                st.step(&mut p, &scalar_set(g), &cfg).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar_set(0.5);
        let mut st = AdamMoments::new(&p);
        let bad = TensorSet::new(vec![NamedTensor {
            name: "w".into(),
            tensor: Tensor::from_vec(&[2], vec![0.0, 0.0]),
        }]);
        assert!(st.step(&mut p, &bad, &OptimizerConfig::default()).is_err());
    }
}
