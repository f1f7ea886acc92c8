//! Few-shot multi-label intent detection.
//!
//! Label representations are prototypes of support embeddings pulled toward
//! label-name anchors; each query's threshold interpolates its own score range
//! and is calibrated by a kernel regression over the support set's label counts.
//!
//! The crate is embedding-agnostic: token vectors come from an FSML interchange
//! file or from the deterministic toy embedder in [`embeddings`].

pub mod corpus;
pub mod embeddings;
pub mod episodes;
pub mod error;
pub mod evaluation;
pub mod labelrep;
pub mod linalg;
pub mod model;
pub mod prepared;
pub mod rng;
pub mod scoring;
pub mod thresholding;
pub mod training;

pub use corpus::{Domain, LabelSpace, LabeledUtterance, SynthSpec, Utterance};
pub use embeddings::{EmbeddingTable, TokenMatrix};
pub use episodes::{Episode, EpisodeRecord, SupportSet};
pub use error::{Error, Result};
pub use evaluation::EvalReport;
pub use labelrep::LabelReps;
pub use model::ModelParams;
pub use prepared::PreparedEpisode;
pub use scoring::RelevanceScores;
pub use thresholding::{Lexicons, Mode, Prediction, RawFeatures, ThresholdParams};
pub use training::TrainConfig;
