//! Crate-wide error type.
//!
//! All fallible operations in this crate share one error enum so that
//! failures can cross module boundaries without conversion noise and so
//! the command-line tool can report a stable machine-readable code for
//! each failure class (see [`Error::code`]).

use thiserror::Error;

/// Anything that can go wrong while validating, rewriting, matching,
/// checking, or evaluating graphs.
#[derive(Debug, Error)]
pub enum Error {
    /// A signature failed validation; the detail holds the first
    /// diagnostic.
    #[error("invalid signature: {0}")]
    InvalidSignature(String),

    /// A graph does not type over its signature's typing graph.
    #[error("graph is not typed by the signature: {0}")]
    TypegraphMismatch(String),

    /// A graph failed structural validation (string-graph or
    /// pattern-graph conditions); the detail holds the first diagnostic.
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// A morphism expected to be injective is not.
    #[error("morphism is not mono: {0}")]
    NotMono(String),

    /// A pushout complement does not exist; the payload names the first
    /// dangling edge in name order.
    #[error("no pushout complement: edge {0} would dangle")]
    NoComplement(String),

    /// A graph exceeded the size cap of an exponential-cost routine.
    #[error("graph with {size} vertices exceeds the limit of {cap}")]
    SizeLimit { size: usize, cap: usize },

    /// A claimed subgraph is not in fact a subgraph.
    #[error("not a subgraph: {0}")]
    NotSubgraph(String),

    /// A vertex name was not found in the graph.
    #[error("unknown vertex: {0}")]
    UnknownVertex(String),

    /// A box operation was applied to a fixed `!`-vertex, or fixing was
    /// attempted at positive depth.
    #[error("operation not permitted on fixed vertex: {0}")]
    FixedVertex(String),

    /// The preconditions of a merge were not met.
    #[error("boxes cannot be merged: {0}")]
    NotMergable(String),

    /// An instantiation did not produce a concrete graph.
    #[error("graph is not concrete: {0}")]
    NotConcrete(String),

    /// The two sides of an equation do not share a well-formed
    /// interface.
    #[error("equation sides do not share an interface: {0}")]
    NotShared(String),

    /// A morphism fails to reflect box membership.
    #[error("morphism does not reflect box membership: {0}")]
    DoesNotReflect(String),

    /// A purported matching violates one of the matching conditions.
    #[error("not a matching: {0}")]
    NotAMatching(String),

    /// A pattern contains a wild box (one that can be replicated without
    /// bound while matching nothing), so match enumeration would not
    /// terminate.
    #[error("wild box in pattern: {0}")]
    WildBangBox(String),

    /// A single proof step failed to check.
    #[error("proof step rejected at {path}: {detail}")]
    StepRejected { path: String, detail: String },

    /// A proof failed to check.
    #[error("proof rejected at {path}: {detail}")]
    Rejected { path: String, detail: String },

    /// Tensor contraction was asked to join incompatible index labels.
    #[error("tensor label mismatch: {0}")]
    LabelMismatch(String),

    /// A valuation is missing an entry needed to evaluate a graph.
    #[error("valuation is incomplete: {0}")]
    IncompleteValuation(String),

    /// A negatively-signed boundary frame was requested (unsupported).
    #[error("negative frame signs are not supported: {0}")]
    NegativeSign(String),

    /// An unknown built-in theory name was requested.
    #[error("unknown theory: {0}")]
    UnknownTheory(String),

    /// A fresh name collided with an existing vertex or edge name.
    #[error("name clash: {0}")]
    NameClash(String),

    /// I/O failure (command-line tool only).
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON parse or print failure (command-line tool only).
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code for this failure class, as reported
    /// by the command-line tool.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSignature(_) => "InvalidSignature",
            Error::TypegraphMismatch(_) => "TypegraphMismatch",
            Error::InvalidGraph(_) => "InvalidGraph",
            Error::NotMono(_) => "NotMono",
            Error::NoComplement(_) => "NoComplement",
            Error::SizeLimit { .. } => "SizeLimit",
            Error::NotSubgraph(_) => "NotSubgraph",
            Error::UnknownVertex(_) => "UnknownVertex",
            Error::FixedVertex(_) => "FixedVertex",
            Error::NotMergable(_) => "NotMergable",
            Error::NotConcrete(_) => "NotConcrete",
            Error::NotShared(_) => "NotShared",
            Error::DoesNotReflect(_) => "DoesNotReflect",
            Error::NotAMatching(_) => "NotAMatching",
            Error::WildBangBox(_) => "WildBangBox",
            Error::StepRejected { .. } => "StepRejected",
            Error::Rejected { .. } => "Rejected",
            Error::LabelMismatch(_) => "LabelMismatch",
            Error::IncompleteValuation(_) => "IncompleteValuation",
            Error::NegativeSign(_) => "NegativeSign",
            Error::UnknownTheory(_) => "UnknownTheory",
            Error::NameClash(_) => "NameClash",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
