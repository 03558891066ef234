use alloc::boxed::Box;
use alloc::string::String;

use serde::Serialize;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Which way a perfectly separated logistic fit diverges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationDirection {
    /// Outcome is 1 exactly where the predictor is high.
    Positive,
    /// Outcome is 1 exactly where the predictor is low.
    Negative,
    /// Separated along a combination of predictors.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dataset has no persons or no items")]
    EmptyData,
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("nominal item `{item}` has no key")]
    MissingKey { item: String },
    #[error("key `{key}` of item `{item}` is not among its response codes")]
    InvalidKey { item: String, key: String },
    #[error("item `{item}`, person {person}: code `{code}` is not a valid score")]
    InvalidCode {
        item: String,
        person: usize,
        code: String,
    },
    #[error("level `{0}` is not observed in the factor")]
    UnknownLevel(String),
    #[error("no positive levels selected")]
    EmptySelection,
    #[error("{what}: need at least {needed}, found {found}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("{0} is constant")]
    Constant(&'static str),
    #[error("outcome contains a single class")]
    DegenerateOutcome,
    #[error("complete separation ({0:?})")]
    Separation(SeparationDirection),
    #[error("group indicator contains a single group")]
    SingleGroup,
    #[error("submodel fit failed: {0}")]
    Test(Box<Error>),
    #[error("EM failed at cycle {cycle}: non-finite likelihood")]
    EmFailure { cycle: usize },
    #[error("model is not identified: {0}")]
    Unidentified(&'static str),
    #[error("item pool is empty")]
    EmptyPool,
    #[error("item subset is empty")]
    EmptySubset,
    #[error("response vector has no observed responses")]
    NoResponses,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("unknown item `{0}`")]
    UnknownItem(String),
}
