//! Tokenization, labels, dataset ingestion and caption preparation.

pub mod dataset;
pub mod hypernym;
pub mod labels;
pub mod prepare;
pub mod vocab;
pub mod words;

pub use dataset::{load_dataset, open_dataset, Example, FeatureShape, FeatureSource, Record};
pub use hypernym::{selective_hypernymize, to_type_caption, verify_surjectivity, PrepStats, SurjectivityReport};
pub use labels::{ObjectLabel, WebEntity};
pub use prepare::prepare_record;
pub use vocab::{build_vocab, Vocabulary};
