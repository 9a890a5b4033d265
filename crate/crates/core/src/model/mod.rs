//! The segmentation model: architecture, loss, optimizer, checkpoints and
//! inference.

mod check;
mod checkpoint;
mod config;
mod infer;
mod net;
mod params;
mod train;


pub use check::{gradcheck_config, gradcheck_joint_loss, gradcheck_joint_loss_with, random_sample};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{format_f64, parse, parse_list, Fusion, ModelConfig};
pub use infer::{infer, infer_logits, logits_to_mask, scaled_size};
pub use net::{
    clip_loss_var, decode, encode, forward, frame_forward, joint_loss, prior_fuse, prior_generate, prior_predict,
    ClipTargets, ForwardOutput, FrameVars, LossBreakdown, LossVars, ParamVars,
};
pub use params::{names, param_specs, AdamState, ModelParams, ParamSpec};
pub use train::{
    adamw_update, batch_gradients, batch_gradients_threaded, train_step, train_step_threaded, TrainHyper, TrainSample,
};
