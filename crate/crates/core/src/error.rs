use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid residue {found:?} at index {index}")]
    InvalidResidue { index: usize, found: char },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid mutation space: {0}")]
    InvalidSpace(String),

    #[error("invalid liability motif {pattern:?}: {reason}")]
    InvalidMotif { pattern: String, reason: String },

    #[error("no feasible repair found for {sequence} after {attempts} attempts")]
    RepairFailure { sequence: String, attempts: usize },

    #[error("mutation space holds {available} candidate sequences, {requested} requested")]
    SpaceTooSmall { requested: usize, available: u128 },

    #[error("mutation space holds {size} sequences, above the enumeration cap of {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },

    #[error("sequence of length {len} is shorter than the n-gram size {n}")]
    SequenceTooShort { len: usize, n: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embeddings come from different encoders ({left} vs {right})")]
    EncoderMismatch { left: String, right: String },

    #[error("tanimoto similarity is undefined for two zero vectors")]
    ZeroVectors,

    #[error("no embedding available for sequence {0}")]
    MissingEmbedding(String),

    #[error("eigendecomposition failed: {0}")]
    DecompositionFailure(String),

    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },

    #[error("expected {expected} objectives, found {found}")]
    WrongObjectiveCount { expected: usize, found: usize },

    #[error("hypervolume supports 1 to 4 objectives, got {0}")]
    UnsupportedDimension(usize),

    #[error("oracle budget exhausted: {requested} novel sequences requested, {remaining} calls left")]
    BudgetExhausted { requested: usize, remaining: usize },

    #[error("mutation space exhausted: no unscored feasible sequence left")]
    SpaceExhausted,

    #[error("oracle {oracle} failed: {message}")]
    OracleFailure { oracle: String, message: String },

    #[error("failed to launch oracle {oracle}: {message}")]
    SpawnFailure { oracle: String, message: String },

    #[error("oracle {oracle} did not complete the handshake within {seconds} s")]
    HandshakeTimeout { oracle: String, seconds: f64 },

    #[error("oracle {oracle} violated the protocol ({reason}): {line:?}")]
    ProtocolViolation { oracle: String, reason: String, line: String },

    #[error("no weight for residue {residue} at position {position}")]
    MissingWeight { position: usize, residue: char },

    #[error("brute-force enumeration refuses external oracle {0}")]
    ExternalOracleRefused(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures that originate at the oracle boundary.
    pub fn is_oracle_failure(&self) -> bool {
        matches!(
            self,
            Error::OracleFailure { .. }
                | Error::SpawnFailure { .. }
                | Error::HandshakeTimeout { .. }
                | Error::ProtocolViolation { .. }
        )
    }
}
