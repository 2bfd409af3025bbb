//! Selective-scan state-space classifier.

mod block;
mod checkpoint;
mod config;
mod gradcheck;
mod model;
mod params;
mod scan;
mod tensor;

pub use block::block_forward;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, file_sha256, load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, STAGES};
pub use gradcheck::{
    grad_check, grad_check_with, rel_error, GradCheckReport, TensorCheck, GRADCHECK_EPS, GRADCHECK_FRAMES,
    GRADCHECK_MIN_SAMPLES,
};
pub use model::{
    backbone_backward, backbone_forward, backbone_forward_train, forward_frames, forward_frames_train, stage_lengths,
    Activation,
};
pub use params::{BlockParams, ModelParams, ScanParams};
pub use scan::{selective_scan, selective_scan_into, ScanInputs};
pub use tensor::{ParamSet, Tensor};
