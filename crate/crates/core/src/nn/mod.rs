//! Layer stacks, backpropagation, losses and the Adam trainer.

mod adam;
mod backward;
mod checkpoint;
mod forward;
mod loss;
mod spec;
mod train;
mod weights;

pub use adam::{adam_step, AdamState};
pub use backward::{backward, Gradients};
pub use checkpoint::{from_container, load_checkpoint, save_checkpoint, to_container, NETWORK_TAG};
pub use forward::{forward, forward_to, Tape};
pub use loss::{loss, loss_and_grad, LossKind};
pub use spec::{LayerKind, LayerSpec, NetworkSpec};
pub use train::{
    apply_batch_stats, balanced_batches, evaluate_loss, predict, predict_to, train, train_with,
    Dataset, EpochRecord, Targets, TrainConfig, TrainHistory,
};
pub(crate) use weights::mix_seed;
pub use weights::{LayerParams, ModelWeights};
