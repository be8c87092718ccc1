//! Recurrent policy network, local enhancement network, parameter storage
//! and checkpointing.

mod checkpoint;
mod config;
mod forward;
mod params;


pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    Checkpoint, MAGIC,
};
pub use config::{check_model_pair, ConvLayer, EnhancerConfig, PolicyConfig};
pub use forward::{enhance_forward, gradients, policy_forward, NetOps, ProbMap, RecurrentMemory};
pub(crate) use forward::{accumulate_gradients, planar_to_image, Trainable};
pub use params::{init_params, NamedTensor, ParamGrads, ParamSet, TensorSet};
