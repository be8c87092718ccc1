use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::image::Image;

/// Negative mean squared error over all pixels and channels.
pub fn terminal_reward(final_image: &Image, gt: &Image) -> Result<f64> {
    Ok(-final_image.mse(gt)?)
}

/// Undiscounted, terminal-only reward: `r_t = 0` for `t < T` and
/// `r_T = -MSE(I_T, I_hr)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub discount: f64,
    pub terminal_only: bool,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            discount: 1.0,
            terminal_only: true,
        }
    }
}

impl RewardSpec {
    /// Reward at 1-based step `t` of a `steps`-step episode ending in `final_image`.
    pub fn reward(&self, t: usize, steps: usize, final_image: &Image, gt: &Image) -> Result<f64> {
        if t < steps {
            Ok(0.0)
        } else {
            terminal_reward(final_image, gt)
        }
    }

    /// `sum_t discount^(t-1) r_t`.
    pub fn episode_return(&self, steps: usize, final_image: &Image, gt: &Image) -> Result<f64> {
        let mut total = 0.0;
        for t in 1..=steps {
            let r = self.reward(t, steps, final_image, gt)?;
            total += self.discount.powi(t as i32 - 1) * r;
        }
        Ok(total)
    }
}

/// Scalar exponential moving average of episode returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub value: f64,
    pub decay: f64,
    pub initialized: bool,
}

impl Default for BaselineState {
    fn default() -> Self {
        Self::new(0.9).expect("valid default decay")
    }
}

impl BaselineState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(config_err("training.baseline_decay", "must lie in (0, 1)"));
        }
        Ok(Self {
            value: 0.0,
            decay,
            initialized: false,
        })
    }

    pub fn current(&self) -> Option<f64> {
        self.initialized.then_some(self.value)
    }
}

/// First call adopts `batch_mean_return`; later calls blend it in with
/// weight `1 - decay`.
pub fn update_baseline(baseline: BaselineState, batch_mean_return: f64) -> BaselineState {
    let value = if baseline.initialized {
        baseline.decay * baseline.value + (1.0 - baseline.decay) * batch_mean_return
    } else {
        batch_mean_return
    };
    BaselineState {
        value,
        initialized: true,
        ..baseline
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_closed_forms() {
        let gt = Image::filled(4, 4, 3, 0.0);
        let fin = Image::filled(4, 4, 3, 0.1);
        assert_eq!(terminal_reward(&gt, &gt).unwrap(), 0.0);
        assert!((terminal_reward(&fin, &gt).unwrap() + 0.01).abs() < 1e-15);
        let spec = RewardSpec::default();
        for t in 1..6 {
            assert_eq!(spec.reward(t, 6, &fin, &gt).unwrap(), 0.0);
        }
        assert_eq!(
            spec.episode_return(6, &fin, &gt).unwrap(),
            terminal_reward(&fin, &gt).unwrap()
        );
        assert!(terminal_reward(&fin, &Image::filled(4, 5, 3, 0.0)).is_err());
    }

    #[test]
    fn baseline_ema() {
        let b = update_baseline(BaselineState::default(), -0.04);
        assert_eq!(b.value, -0.04);
        let b = update_baseline(b, -0.02);
        assert!((b.value + 0.038).abs() < 1e-15);
        let mut b = BaselineState::default();
        for _ in 0..400 {
            b = update_baseline(b, -0.3);
        }
        assert!((b.value + 0.3).abs() < 1e-12);
        assert!(BaselineState::new(1.0).is_err());
    }
}
