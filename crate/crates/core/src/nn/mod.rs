//! Position-free transformer encoder, its output heads, the optimiser and checkpoint files.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod gradcheck;
pub mod heads;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::EncoderConfig;
pub use encoder::{encode, encode_backward};
pub use heads::{
    mtp_loss, ncp_loss, ncp_predict, oa_head, oa_loss, oa_predict, oo_head, oo_loss, oo_predict, pretrain_loss,
    PretrainLoss,
};
pub use optim::{Adam, AdamConfig};
pub use params::ModelParams;
pub use tensor::{Matrix, Real};
