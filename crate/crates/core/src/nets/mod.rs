//! Convolutional networks written against plain `Vec<f64>` tensors: the
//! boundary-distance regressor, the pixel classifier on top of it, losses,
//! Adam and the training loop.

pub mod adam;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use layers::{LayerKind, LayerSpec};
pub use loss::{loss_crossentropy, loss_distance, loss_distance_mean, loss_multi, schedule};
pub use model::{image_tensor, InitScheme, Model, NetConfig, Pass, Sequential, Tape};
pub use tensor::Tensor;
pub use gradcheck::{grad_check, CheckLoss};
pub use train::{train, StepRecord, TrainConfig, TrainMode, TrainOutcome};
pub use io::{decode_model, encode_model, load_model, save_model};
