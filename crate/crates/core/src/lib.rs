//! Attention-aware face hallucination: a recurrent policy picks patches of
//! a bicubic-upsampled face, a local network enhances them in place, and the
//! two are trained jointly with a supervised loss and REINFORCE.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod episode;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nets;
pub mod runner;
pub mod training;
pub mod visualize;

pub use error::{AfhError, Result};
