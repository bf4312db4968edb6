//! Small systematic LDPC erasure codes.
//!
//! A file is cut into `n` data blocks; each of the `m` coding blocks is the
//! XOR of a subset of the data blocks given by a [`TannerGraph`]. Reading
//! needs only the data blocks when they are all present. Otherwise missing
//! data blocks are recovered by peeling: a coding block with exactly one
//! unknown neighbour yields that neighbour.
//!
//! Graph quality is measured by the worst-case block count `f_max_blocks`
//! (any that many blocks decode) and the average overhead `f_avg`, and good
//! graphs are found by random search.

mod graph;
mod metrics;
mod peel;

pub use graph::{BlockSet, TannerGraph, MAX_BLOCKS};
pub use metrics::{
    compute_fmax, estimate_avg_overhead, evaluate_graph, generate_graph, search_best_graph,
    AvgOverhead, CodeMetrics, FmaxReport, SearchConfig, FMAX_BLOCK_LIMIT,
};
pub use peel::{encode, is_decodable, peel_decode, peel_recover, recoverable, xor_into, PeelOutcome};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph text line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid block set: {0}")]
    InvalidBlockSet(String),
    #[error("expected {expected} data blocks, got {got}")]
    BlockCount { expected: usize, got: usize },
    #[error("block {index} has length {got}, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("not decodable: data blocks {missing:?} cannot be recovered")]
    NotDecodable { missing: Vec<usize> },
    #[error("{blocks} blocks exceed the exhaustive-search limit of {limit}")]
    SizeLimitExceeded { blocks: usize, limit: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// The shipped (8, 6) code: any 11 of its 14 blocks decode.
pub const DEFAULT_GRAPH_TEXT: &str = include_str!("default_graph.txt");

pub fn default_graph() -> TannerGraph {
    DEFAULT_GRAPH_TEXT.parse().expect("shipped graph is valid")
}
