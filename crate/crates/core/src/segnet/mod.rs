//! Trainable encoder/decoder segmenter: tensors with hand-written
//! reverse-mode kernels, a U-shaped network, Adam and a binary
//! checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod net;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::{backward, build_net, forward, loss, Architecture, NetworkParams};
pub use tensor::Tensor;
pub use train::{
    pad_reflect, pad_reflect_mask, predict_mask, probability_map, train, train_with, SampleSource,
    TrainConfig, TrainOutput,
};
