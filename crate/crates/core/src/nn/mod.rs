//! Point-set networks with hand-written reverse-mode gradients.

pub mod arch;
pub mod checkpoint;
pub mod loss;
pub mod net;
pub mod optim;
pub mod sample;
pub mod train;

pub use arch::{ArchDescriptor, Head, LayerSlice, ModelParams, ParamsView};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader};
pub use loss::{cross_entropy_per_point, smooth_l1, softmax, softmax_cross_entropy};
pub use net::{
    backward, backward_traced, forward_seg, forward_traced, forward_vec, loss_and_gradient, points_to_matrix,
    pooled_feature, LossSpec, Mode, Trace,
};
pub use optim::{adam_step, lr_at, AdamState, TrainConfig};
pub use sample::{sample_fixed_points, scatter_max, FixedSample};
pub use train::{fit, mean_gradient, Objective, TrainHistory};
