use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::mask::Modality;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure reported by a value function for a single evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("score is not finite")]
    NonFinite,
    #[error("timed out after {millis} ms")]
    Timeout { millis: u64 },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl EvalError {
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            EvalError::OutOfRange(_) | EvalError::NonFinite | EvalError::Protocol(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("instance {id}: {reason}")]
    InvalidInstance { id: String, reason: &'static str },

    #[error("instance {instance}: {modality} mask has length {found}, expected {expected}")]
    MaskMismatch {
        instance: String,
        modality: Modality,
        expected: usize,
        found: usize,
    },

    #[error("{modality} key index {index} out of range for length {len}")]
    KeyOutOfRange {
        modality: Modality,
        index: usize,
        len: usize,
    },

    #[error("invalid synthetic model: {0}")]
    InvalidModel(&'static str),

    #[error("invalid corpus specification: {0}")]
    InvalidCorpus(&'static str),

    #[error("{features} features exceed the exhaustive table limit of {limit}")]
    TooLarge { features: usize, limit: usize },

    #[error("instance {instance}: {modality} attribution has length {found}, expected {expected}")]
    AttributionLength {
        instance: String,
        modality: Modality,
        expected: usize,
        found: usize,
    },

    #[error("{modality} attribution score at index {index} is not finite")]
    NonFiniteAttribution { modality: Modality, index: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),

    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),

    #[error("evaluation failed at {context}: {source}")]
    Evaluation { context: String, source: EvalError },

    #[error("pair ({i}, {j}) with context {context:?} violates the dividend contract")]
    DividendContract {
        i: usize,
        j: usize,
        context: Vec<usize>,
    },

    #[error("{players} players exceed the exhaustive enumeration bound of {limit}")]
    TooManyPlayers { players: usize, limit: usize },

    #[error("game needs at least 2 players, got {0}")]
    TooFewPlayers(usize),

    #[error("player payloads must partition the feature set: {0}")]
    InvalidPartition(&'static str),

    #[error("degenerate macro-game at k = {k}: {reason}")]
    DegeneratePartition { k: f64, reason: &'static str },

    #[error("need at least {needed} observations, got {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("paired inputs differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("correlation undefined for a constant input")]
    ConstantInput,

    #[error("factor {factor} needs at least 2 levels, found {found}")]
    TooFewLevels { factor: String, found: usize },

    #[error("rank-deficient design; aliased levels: {levels:?}")]
    RankDeficient { levels: Vec<String> },

    #[error("reference level {0} not present")]
    MissingReference(String),

    #[error("numerical failure: {0}")]
    Numerical(&'static str),
}
