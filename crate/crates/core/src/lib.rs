//! Multi-hop reasoning chain recovery: a conditional passage ranker trained
//! with distant-supervision rewards, a cooperative linking-entity reasoner,
//! and the evaluation harness around them.

pub mod corpus;
pub mod eval;
pub mod gradsuite;
pub mod nn;
pub mod ranker;
pub mod reasoner;
pub mod tensor;
pub mod training;

use corpus::CorpusError;
use nn::NnError;
use tensor::TensorError;

/// Errors raised by the model, training and evaluation layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("step {step}: every passage is masked")]
    NoCandidate { step: usize },
    #[error("empty candidate chain set for {0:?}")]
    EmptyCandidates(String),
    #[error("passage {0:?} mentions no entity")]
    NoEntity(String),
    #[error("policy gradient step needs at least one episode")]
    EmptyBatch,
    #[error("question {0:?} appears on one side only")]
    IdMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, Error>;
