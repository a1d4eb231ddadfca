//! Deep-kernel regression backbone: an MLP feature extractor with one sparse
//! variational GP head per effect dimension, trained by mini-batch ELBO.

pub mod adam;
pub mod checkpoint;
pub mod exact_gp;
pub mod feature_net;
pub mod linalg;
pub mod model;
pub mod svgp;

pub use checkpoint::Checkpoint;
pub use exact_gp::ExactGp;
pub use feature_net::FeatureNet;
pub use model::{Model, ModelConfig, Prediction, Sample, INPUT_DIM, OUTPUT_DIM};
pub use svgp::SvgpHead;
