//! Base-CNN and wide-CNN construction, training and inference.

mod network;
mod params;
mod spec;
mod train;

pub use network::{accuracy, argmax, evaluate, predict_proba, Network};
pub use params::{init_params, ModelParams, NamedTensor};
pub use spec::{
    build_base_cnn, build_hcnn, count_params, CnnSpec, LayerDesc, ParamShape, HCNN_TOLERANCE,
};
pub use train::{make_batch, train, EpochRecord, TrainConfig, TrainHistory};
