//! The adaptation network, its losses and the classifier head it feeds.

mod checkpoint;
pub mod gradcheck;
mod head;
mod layers;
mod loss;
mod model;
mod params;

pub use checkpoint::{decode_tensors, encode_tensors, read_checkpoint, write_checkpoint};
pub use head::{softmax, HeadConfig};
pub use layers::{
    apply_perm_matrix, integrate, pixel_shuffle, pixel_unshuffle, subnet_forward, SubnetParams,
};
pub use loss::{
    loss_ce, loss_s, loss_s_grad_single, loss_s_single, loss_total, loss_u, loss_u_grad, one_hot,
    CeLoss, Lambdas, LossBreakdown, PROB_EPS,
};
pub use model::{
    adaptnet_forward, argmax, BatchOutcome, FrontEnd, Model, ModelConfig, SampleOutput,
    SubnetInput, Tape,
};
pub use params::{ParamSet, Tensor};
