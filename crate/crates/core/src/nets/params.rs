use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{check_model_pair, EnhancerConfig, PolicyConfig};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{AfhError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered, uniquely named tensors for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSet<T> {
    entries: Vec<NamedTensor<T>>,
}

impl<T: Scalar> TensorSet<T> {
    pub fn new(entries: Vec<NamedTensor<T>>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[NamedTensor<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: Tensor::zeros(e.tensor.shape()),
                })
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    /// Elementwise `self += scale * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &TensorSet<T>, scale: T) {
        assert_eq!(self.entries.len(), other.entries.len());
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            assert_eq!(a.tensor.shape(), b.tensor.shape(), "{}", a.name);
            for (x, &y) in a.tensor.data_mut().iter_mut().zip(b.tensor.data()) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for e in &mut self.entries {
            e.tensor.scale(s);
        }
    }

    pub fn cast<U: Scalar>(&self) -> TensorSet<U> {
        TensorSet {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: Tensor::from_vec(
                        e.tensor.shape(),
                        e.tensor.data().iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    ),
                })
                .collect(),
        }
    }

    /// Checks that names and shapes match `reference` entry by entry.
    pub fn check_layout(&self, reference: &TensorSet<T>) -> Result<()> {
        if self.entries.len() != reference.entries.len() {
            return Err(AfhError::Checkpoint(format!(
                "expected {} tensors, found {}",
                reference.entries.len(),
                self.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&reference.entries) {
            if a.name != b.name {
                return Err(AfhError::Checkpoint(format!(
                    "expected tensor `{}`, found `{}`",
                    b.name, a.name
                )));
            }
            if a.tensor.shape() != b.tensor.shape() {
                return Err(AfhError::Shape {
                    name: a.name.clone(),
                    expected: b.tensor.shape().to_vec(),
                    found: a.tensor.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// All learnable parameters: policy network and enhancement network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub policy_config: PolicyConfig,
    pub enhancer_config: EnhancerConfig,
    pub policy: TensorSet<T>,
    pub enhancer: TensorSet<T>,
}

/// Gradients (or any per-parameter quantity) mirroring a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub policy: TensorSet<T>,
    pub enhancer: TensorSet<T>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_for(params: &ParamSet<T>) -> Self {
        Self {
            policy: params.policy.zeros_like(),
            enhancer: params.enhancer.zeros_like(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor<T>> {
        self.policy.entries().iter().chain(self.enhancer.entries())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.policy.get(name).or_else(|| self.enhancer.get(name))
    }

    pub fn add_scaled(&mut self, other: &ParamGrads<T>, scale: T) {
        self.policy.add_scaled(&other.policy, scale);
        self.enhancer.add_scaled(&other.enhancer, scale);
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.enhancer.is_finite()
    }
}

// Fixed tensor order; graph binding relies on these indices.
pub(crate) const POLICY_NAMES: [&str; 6] = [
    "policy.encoder.weight",
    "policy.encoder.bias",
    "policy.lstm.weight",
    "policy.lstm.bias",
    "policy.head.weight",
    "policy.head.bias",
];

pub(crate) const ENHANCER_GLOBAL_NAMES: [&str; 4] = [
    "enhancer.global1.weight",
    "enhancer.global1.bias",
    "enhancer.global2.weight",
    "enhancer.global2.bias",
];

impl<T: Scalar> ParamSet<T> {
    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor<T>> {
        self.policy.entries().iter().chain(self.enhancer.entries())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.policy.get(name).or_else(|| self.enhancer.get(name))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        if self.policy.get(name).is_some() {
            self.policy.get_mut(name)
        } else {
            self.enhancer.get_mut(name)
        }
    }

    pub fn num_params(&self) -> usize {
        self.policy.num_values() + self.enhancer.num_values()
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.enhancer.is_finite()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            policy_config: self.policy_config.clone(),
            enhancer_config: self.enhancer_config.clone(),
            policy: self.policy.cast(),
            enhancer: self.enhancer.cast(),
        }
    }

    /// Zero-filled parameter set with the layout implied by the configs.
    pub fn zeros(policy_config: &PolicyConfig, enhancer_config: &EnhancerConfig) -> Result<Self> {
        check_model_pair(policy_config, enhancer_config)?;
        let named = |name: String, shape: Vec<usize>| NamedTensor {
            name,
            tensor: Tensor::zeros(&shape),
        };
        let pc = policy_config;
        let h = pc.lstm_hidden;
        let policy_shapes = [
            vec![pc.encoder_width, pc.image_len()],
            vec![pc.encoder_width],
            vec![4 * h, pc.lstm_input() + h],
            vec![4 * h],
            vec![pc.action_count(), h],
            vec![pc.action_count()],
        ];
        let policy = TensorSet::new(
            POLICY_NAMES
                .iter()
                .zip(policy_shapes)
                .map(|(n, s)| named(n.to_string(), s))
                .collect(),
        );

        let ec = enhancer_config;
        let mut enh = vec![
            named(ENHANCER_GLOBAL_NAMES[0].into(), vec![ec.global_fc_width, ec.image_len()]),
            named(ENHANCER_GLOBAL_NAMES[1].into(), vec![ec.global_fc_width]),
            named(ENHANCER_GLOBAL_NAMES[2].into(), vec![ec.patch_area(), ec.global_fc_width]),
            named(ENHANCER_GLOBAL_NAMES[3].into(), vec![ec.patch_area()]),
        ];
        let mut cin = ec.channels + 1;
        for (i, l) in ec.conv_spec.iter().enumerate() {
            enh.push(named(
                format!("enhancer.conv{}.weight", i + 1),
                vec![l.out_channels, cin, l.kernel, l.kernel],
            ));
            enh.push(named(format!("enhancer.conv{}.bias", i + 1), vec![l.out_channels]));
            cin = l.out_channels;
        }
        Ok(Self {
            policy_config: policy_config.clone(),
            enhancer_config: enhancer_config.clone(),
            policy,
            enhancer: TensorSet::new(enh),
        })
    }
}

/// Deterministic initialization: fan-in-scaled uniform weights, zero biases,
/// LSTM forget-gate bias 1, and a zero output convolution so the untrained
/// enhancer is the identity.
pub fn init_params<T: Scalar>(
    policy_config: &PolicyConfig,
    enhancer_config: &EnhancerConfig,
    seed: u64,
) -> Result<ParamSet<T>> {
    let mut params = ParamSet::<T>::zeros(policy_config, enhancer_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |t: &mut Tensor<T>, bound: f64| {
        for v in t.data_mut() {
            *v = T::from_f64(rng.gen_range(-bound..bound));
        }
    };

    let pc = policy_config;
    let h = pc.lstm_hidden;
    let entries = params.policy.entries_mut();
    // He-uniform for layers followed by ReLU; 1/sqrt(fan_in) elsewhere.
    fill(&mut entries[0].tensor, (6.0 / pc.image_len() as f64).sqrt());
    fill(&mut entries[2].tensor, 1.0 / (h as f64).sqrt());
    for v in &mut entries[3].tensor.data_mut()[h..2 * h] {
        *v = T::one();
    }
    fill(&mut entries[4].tensor, 1.0 / (h as f64).sqrt());

    let ec = enhancer_config;
    let entries = params.enhancer.entries_mut();
    fill(&mut entries[0].tensor, (6.0 / ec.image_len() as f64).sqrt());
    fill(&mut entries[2].tensor, (1.0 / ec.global_fc_width as f64).sqrt());
    let n_conv = ec.conv_spec.len();
    for i in 0..n_conv - 1 {
        let w = &mut entries[4 + 2 * i].tensor;
        let fan_in: usize = w.shape()[1..].iter().product();
        fill(w, (6.0 / fan_in as f64).sqrt());
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfgs() -> (PolicyConfig, EnhancerConfig) {
        let mut p = PolicyConfig::new(8, 8, 1);
        p.encoder_width = 6;
        p.lstm_hidden = 5;
        let mut e = EnhancerConfig::new(8, 8, 1, 4, 4);
        e.global_fc_width = 7;
        e.conv_spec = vec![super::super::ConvLayer::new(3, 3), super::super::ConvLayer::new(1, 3)];
        (p, e)
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let (p, e) = cfgs();
        let a = init_params::<f32>(&p, &e, 3).unwrap();
        let b = init_params::<f32>(&p, &e, 3).unwrap();
        assert_eq!(a, b);
        let c = init_params::<f32>(&p, &e, 4).unwrap();
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.tensor != y.tensor));
    }

    #[test]
    fn output_conv_and_forget_bias() {
        let (p, e) = cfgs();
        let a = init_params::<f64>(&p, &e, 1).unwrap();
        let last = e.conv_spec.len();
        assert!(a.get(&format!("enhancer.conv{last}.weight")).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a.get(&format!("enhancer.conv{last}.bias")).unwrap().data().iter().all(|&v| v == 0.0));
        let b = a.get("policy.lstm.bias").unwrap().data();
        assert!(b[..5].iter().all(|&v| v == 0.0));
        assert!(b[5..10].iter().all(|&v| v == 1.0));
        assert!(a.is_finite());
        let names: std::collections::HashSet<_> = a.iter().map(|e| e.name.clone()).collect();
        assert_eq!(names.len(), a.iter().count());
    }

    #[test]
    fn mismatched_image_dims_rejected() {
        let (p, mut e) = cfgs();
        e.image_width = 9;
        assert!(init_params::<f32>(&p, &e, 0).is_err());
    }
}
