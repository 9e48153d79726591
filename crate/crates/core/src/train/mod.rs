//! Optimization, decoding and checkpoints.

pub mod beam;
pub mod checkpoint;
pub mod optim;
pub mod postprocess;
pub mod trainer;

pub use beam::{beam_search, beam_search_with, encode_memory, BeamConfig, Hypothesis, Memory, SearchSpace};
pub use checkpoint::{load_model, save_model, Sidecar};
pub use optim::Adagrad;
pub use postprocess::postprocess_types;
pub use trainer::{
    decode_one, decode_set, prepare_example, prepare_examples, teacher_forced, train, train_regressors, Conditioning,
    Decoded, Prepared, TrainConfig, TrainEvent, TrainReport,
};
