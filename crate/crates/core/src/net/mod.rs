//! Multi-stream point-set classifier with hand-written backpropagation.

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod train;

pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use encoder::{encode_stream, Encoder, EncoderShape, SetAbstractionLevel};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{Dense, Mlp, Scalar};
pub use model::{softmax, Arch, MultiStreamModel, Output, StreamInputs};
pub use train::{augment, evaluate, train, AugmentRanges, EpochMetrics, EvalReport, Sample, TrainConfig};
