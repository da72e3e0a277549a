//! ICD-10 coding of death-certificate lines with an encoder-decoder LSTM.
//!
//! The pipeline: free-text certificate lines are tokenized and embedded,
//! encoded by a bidirectional LSTM, the encoded state is concatenated with a
//! cosine-similarity vector against per-code TF-IDF dictionary documents, and
//! a left-to-right LSTM decoder emits a softmax distribution over the code
//! vocabulary at each output step. Training, five-fold cross-validation,
//! micro-averaged evaluation, and a synthetic data generator are included so
//! the whole system can be exercised end to end.

pub mod check;
pub mod corpus;
pub mod datasynth;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod model;
pub mod prior;
pub mod rng;
pub mod tensor;
pub mod train;

pub use corpus::{CodeVocab, EncodedRecord, IcdCode, Record, Vocab};
pub use embeddings::EmbeddingMatrix;
pub use error::{Error, Result};
pub use eval::{MetricsReport, Prediction};
pub use model::{LstmCellParams, ModelConfig, Seq2SeqModel};
pub use prior::TfIdfIndex;
pub use rng::Rng;
pub use tensor::Tensor;
pub use train::{AdamState, Checkpoint, TrainConfig};
