use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: unsupported factor arity {arity}")]
    UnsupportedArity { line: usize, arity: usize },

    #[error("line {line}: table length mismatch (expected {expected}, found {found})")]
    TableLength {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate edge ({i}, {j})")]
    DuplicateEdge { line: usize, i: usize, j: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model graph is disconnected")]
    Disconnected,

    #[error("state space of {states} configurations exceeds enumeration cap {cap}")]
    StateSpaceTooLarge { states: f64, cap: u64 },

    #[error("parameters are nonzero on off-tree edge ({0}, {1})")]
    OffTreeSupport(usize, usize),

    #[error("missing pairwise marginal for edge ({0}, {1})")]
    MissingPairwise(usize, usize),

    #[error("non-finite message on edge {from}->{to} at iteration {iteration}")]
    NonFinite {
        from: usize,
        to: usize,
        iteration: usize,
    },

    #[error("invalid edge appearance {value} on edge ({i}, {j})")]
    InvalidEdgeAppearance { i: usize, j: usize, value: f64 },

    #[error("mean-field edge ({i}, {j}) carries mutual information {mi}")]
    MeanFieldCorrelation { i: usize, j: usize, mi: f64 },

    #[error("zero marginal entry at {0}")]
    ZeroMarginal(String),

    #[error("ensemble member {0} has zero weight")]
    ZeroWeight(usize),

    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("edge ({0}, {1}) is not covered by any ensemble member")]
    Uncovered(usize, usize),

    #[error("not a grid: {0}")]
    NotGrid(String),

    #[error("skeleton is not v-acyclic: adding edge ({0}, {1}) closes a cycle")]
    NotVAcyclic(usize, usize),

    #[error("unsupported: {0}")]
    Unsupported(String),
}
