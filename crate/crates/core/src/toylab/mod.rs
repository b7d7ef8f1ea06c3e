//! Desk-scale length-preference experiments.
//!
//! A [`ToyPolicy`] is a prompt-conditioned bigram table over a small
//! vocabulary with a distinguished end-of-sequence token. Its gradients are
//! exact, so every objective can be trained and finite-difference checked
//! end to end. [`make_synthetic_corpus`] builds rollouts whose correct
//! answers come in a short and a long family, which is all the trainer needs
//! to show the length distribution moving left.

mod corpus;
mod policy;
mod train;

pub use corpus::{make_synthetic_corpus, CorpusConfig, DifficultyMix, SyntheticCorpus, VocabLayout};
pub use policy::{Sample, SampleConfig, ToyPolicy, CONTEXT_ORDER, EOS};
pub use train::{
    finite_diff_check, finite_diff_check_with_reference, length_distribution, pair_gradient, sample_classes,
    token_pairs, train, ClassMap, ClassSamples, LengthStats, TokenPair, TrainConfig, TrainTrace, FD_SCALE_FLOOR,
};

use crate::{datapipe, objectives};

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error("vocabulary size {0} is outside 2..=64")]
    BadVocab(usize),
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    OutOfVocabulary { token: u32, vocab: usize },
    #[error("prompt class {class} is outside 0..{classes}")]
    UnknownClass { class: usize, classes: usize },
    #[error("sequence must be non-empty and end with the end-of-sequence token only at its last position")]
    BadTermination,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("no training pairs")]
    NoPairs,
    #[error("pair for question {0} has no token ids")]
    MissingTokenIds(String),
    #[error("question {0} has no prompt class")]
    UnmappedQuestion(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Objective(#[from] objectives::ObjectiveError),
    #[error(transparent)]
    Data(#[from] datapipe::DataError),
}

pub type Result<T> = std::result::Result<T, ToyError>;

/// Independent stream seed for `(base, stream)` via a SplitMix64 finalizer.
pub(crate) fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
