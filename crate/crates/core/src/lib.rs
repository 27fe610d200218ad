//! Chain-free neural dynamic topic model.
//!
//! Topics are embeddings per time slice, scored against word embeddings to
//! form topic-word distributions. Topic evolution is tied across slices by
//! a contrastive loss instead of a Markov chain, and words absent from a
//! slice are pushed away from that slice's topics.
//!
//! Typical flow: [`corpus::build_corpus`] → [`trainer::train`] →
//! [`evaluation::evaluate_dynamic_topics`] / [`trainer::export_topics`].

pub mod checkpoint;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod synthetic;
pub mod trainer;

mod rng;

pub use corpus::{build_corpus, BowDocument, CorpusOptions, RawDocument, SliceRule, Stopwords, TimeSlicedCorpus, Timestamp, VocabularyIndex};
pub use error::{Error, Result};
pub use evaluation::{evaluate_downstream, evaluate_dynamic_topics, EvalReport};
pub use model::{ModelParams, TopicWordDistribution};
pub use objectives::LossConfig;
pub use trainer::{train, EpochLog, ModelState, TrainConfig};
