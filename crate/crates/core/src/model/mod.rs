//! The shared-trunk network: VGG-style convolutional trunk with a tap at
//! conv-3-1, a fully convolutional classification head and a Gaussian
//! readout predicting neural responses from the tap.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::{
    eval_accuracy, eval_classes, eval_log_probs, eval_responses, eval_tap, prepare_image,
    ModelCheckpoint, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::{put_string, Reader};
pub use config::{
    BlockConfig, HeadConfig, ModelConfig, ReadoutConfig, TapLayer, TrunkConfig, TrunkProfile,
};
pub use network::{
    batch_tensor, clamp_readout_positions, classify, forward_trunk, readout_neural,
    update_running_stats, ForwardOptions, Mode, TrunkOutput,
};
pub use params::{
    conv_prefix, head_prefix, init_params, is_buffer, is_decayed, is_head, is_readout,
    is_through_tap, is_trunk, is_uncertainty, trunk_position, Bound, ParameterSet, INPUT_MEAN,
    INPUT_STD, LOG_SIGMA_C, LOG_SIGMA_N, READOUT_BIAS, READOUT_MU, READOUT_WEIGHT,
};
