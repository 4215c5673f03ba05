//! A small multilayer perceptron with hand-written backpropagation and the
//! training schedule for every loss in [`crate::losses`].

mod checkpoint;
mod history;
mod mlp;
mod objective;
mod train;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use history::{history_csv, read_history, write_history, EpochRecord, History, LambdaCalibration, HISTORY_HEADER};
pub use mlp::{softmax, softmax_backward, ForwardPass, Head, HeadOutput, Layer, Mlp, NetConfig};
pub use objective::{sample_loss, LossKind, Phase, SampleLoss, SinkhornParams};
pub use train::{
    accumulate_dataset_features, decode_class, predict_labels, sgd_momentum_step, train, DistanceSource, LambdaMode,
    ModelState, TrainConfig, DEFAULT_LAMBDA_RATIO,
};
