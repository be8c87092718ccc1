use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    #[serde(default = "default_encoder_width")]
    pub encoder_width: usize,
    #[serde(default = "default_lstm_hidden")]
    pub lstm_hidden: usize,
    /// Feed the previous location `(x/W, y/H)` into the LSTM input.
    #[serde(default = "default_true")]
    pub feed_prev_action: bool,
}

fn default_encoder_width() -> usize {
    256
}

fn default_lstm_hidden() -> usize {
    512
}

fn default_true() -> bool {
    true
}

impl PolicyConfig {
    pub fn new(image_height: usize, image_width: usize, channels: usize) -> Self {
        Self {
            image_height,
            image_width,
            channels,
            encoder_width: default_encoder_width(),
            lstm_hidden: default_lstm_hidden(),
            feed_prev_action: true,
        }
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width * self.channels
    }

    /// Size of the action grid (one action per pixel).
    pub fn action_count(&self) -> usize {
        self.image_height * self.image_width
    }

    pub fn lstm_input(&self) -> usize {
        self.encoder_width + if self.feed_prev_action { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        positive("policy.image_height", self.image_height)?;
        positive("policy.image_width", self.image_width)?;
        positive("policy.encoder_width", self.encoder_width)?;
        positive("policy.lstm_hidden", self.lstm_hidden)?;
        if !matches!(self.channels, 1 | 3) {
            return Err(config_err("policy.channels", "must be 1 or 3"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvLayer {
    pub const fn new(out_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            kernel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancerConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    #[serde(default = "default_encoder_width")]
    pub global_fc_width: usize,
    pub conv_spec: Vec<ConvLayer>,
}

impl EnhancerConfig {
    /// The eight-layer cascade: 16@3, 32@7, 64@7 x3, 32@7, 16@3, C@5.
    pub fn full_conv_spec(channels: usize) -> Vec<ConvLayer> {
        vec![
            ConvLayer::new(16, 3),
            ConvLayer::new(32, 7),
            ConvLayer::new(64, 7),
            ConvLayer::new(64, 7),
            ConvLayer::new(64, 7),
            ConvLayer::new(32, 7),
            ConvLayer::new(16, 3),
            ConvLayer::new(channels, 5),
        ]
    }

    pub fn new(
        image_height: usize,
        image_width: usize,
        channels: usize,
        patch_height: usize,
        patch_width: usize,
    ) -> Self {
        Self {
            image_height,
            image_width,
            channels,
            patch_height,
            patch_width,
            global_fc_width: default_encoder_width(),
            conv_spec: Self::full_conv_spec(channels),
        }
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width * self.channels
    }

    pub fn patch_area(&self) -> usize {
        self.patch_height * self.patch_width
    }

    pub fn validate(&self) -> Result<()> {
        positive("enhancer.image_height", self.image_height)?;
        positive("enhancer.image_width", self.image_width)?;
        positive("enhancer.patch_height", self.patch_height)?;
        positive("enhancer.patch_width", self.patch_width)?;
        positive("enhancer.global_fc_width", self.global_fc_width)?;
        if !matches!(self.channels, 1 | 3) {
            return Err(config_err("enhancer.channels", "must be 1 or 3"));
        }
        if self.patch_height > 2 * self.image_height || self.patch_width > 2 * self.image_width {
            return Err(config_err(
                "enhancer.patch_height",
                "patch may not exceed twice the image size",
            ));
        }
        let Some(last) = self.conv_spec.last() else {
            return Err(config_err("enhancer.conv_spec", "must not be empty"));
        };
        for (i, l) in self.conv_spec.iter().enumerate() {
            if l.kernel % 2 == 0 || l.kernel == 0 {
                return Err(config_err(
                    format!("enhancer.conv_spec[{i}].kernel"),
                    "kernel size must be odd",
                ));
            }
            positive(&format!("enhancer.conv_spec[{i}].out_channels"), l.out_channels)?;
        }
        if last.out_channels != self.channels {
            return Err(config_err(
                "enhancer.conv_spec",
                format!(
                    "last layer must output {} channels, found {}",
                    self.channels, last.out_channels
                ),
            ));
        }
        Ok(())
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(config_err(field, "must be at least 1"))
    } else {
        Ok(())
    }
}

/// Policy and enhancer must agree on the image they operate on.
pub fn check_model_pair(policy: &PolicyConfig, enhancer: &EnhancerConfig) -> Result<()> {
    policy.validate()?;
    enhancer.validate()?;
    let p = (policy.image_height, policy.image_width, policy.channels);
    let e = (enhancer.image_height, enhancer.image_width, enhancer.channels);
    if p != e {
        return Err(config_err(
            "enhancer.image_height",
            format!("enhancer image {e:?} does not match policy image {p:?}"),
        ));
    }
    Ok(())
}
