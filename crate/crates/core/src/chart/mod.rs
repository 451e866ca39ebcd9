//! Chart network: a small CNN from CIR magnitudes to 2D positions, its
//! losses and the training loop. Gradients are computed by hand-written
//! reverse-mode passes.

mod io;
mod loss;
mod model;
mod scalar;
mod train;

pub use io::{decode_model, encode_model, read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use loss::{
    hinge_loss, laser_loss, lift3d, pair_loss_and_grad, pair_toa_loss, toa_sample_loss,
    total_pair_loss, LossParams, LossVariant, PairMeasurements, Point, NORM_EPS,
};
pub use model::{default_layers, Activation, ChartModel, Layer, Workspace};
pub use scalar::Scalar;
pub use train::{
    sample_pairs, train, train_with_progress, EpochStats, PairBatch, TrainConfig, TrainOutcome,
};
