//! Depth-one trainable pipeline: convolutional features, correlation filter,
//! calibrated score and logistic loss.

pub mod checkpoint;
pub mod conv;
pub mod loss;
pub mod model;
pub mod pairs;
pub mod synth;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{conv_backward, conv_forward, FeatureGrads, FeatureNetParams};
pub use loss::{logistic_loss, LabelMap};
pub use pairs::pairs_from_sequences;
pub use model::{backward_loss, forward_loss, Model, ModelGradients, NetConfig, TrainPair};
pub use synth::{make_synthetic_dataset, synth_sequence, DatasetConfig, SceneConfig, SyntheticSequence};
pub use train::{sgd_train, TrainConfig, TrainOutcome};
