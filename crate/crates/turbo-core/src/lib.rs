//! A self-contained transformer micro-runtime built around
//! informativity-guided token merging.
//!
//! Tokens that are highly redundant (near-duplicates of other tokens) and
//! semantically light (little classifier attention) are merged into their
//! nearest neighbours mid-pipeline, with per-token size bookkeeping that
//! keeps attention mathematically equivalent to running on the full
//! sequence of duplicates. The crate provides:
//!
//! - dense f32 numerics with softmax, size-biased attention, and FFN blocks
//!   ([`numerics`], [`attention`]);
//! - redundancy/semantic scoring and the fusion strategies that rank merge
//!   candidates ([`informativity`]);
//! - the merge/restore engine with size tracking and threshold clamping
//!   ([`merge`]);
//! - understanding and generation pipelines with FLOP accounting and
//!   wall-clock measurement ([`pipeline`], [`report`]);
//! - deterministic synthetic data and a binary tensor format ([`synth`],
//!   [`tmt1`]);
//! - independent 64-bit reference implementations and randomized
//!   verification suites ([`oracle`], [`verify`]).
//!
//! Everything is deterministic per seed: same seed and configuration, same
//! bits, same report checksum.

pub mod attention;
pub mod error;
pub mod informativity;
pub mod merge;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod sequence;
pub mod synth;
pub mod tmt1;
pub mod verify;

pub use attention::{attend, cross_attend, ffn, init_weights, AttentionTrace, BlockWeights};
pub use error::{Error, Result};
pub use informativity::{FusionStrategy, StrategyKind};
pub use merge::{
    partition, turbo_merge, turbo_merge_guided, turbo_restore, MergeMap, RestoreRule,
    SimilarityFeature, TurboConfig, TurboMode,
};
pub use numerics::Matrix;
pub use pipeline::{
    cls_divergence, flops, measure_throughput, run_generation, run_understanding, ModelConfig,
    PipelineMode,
};
pub use report::{BlockStats, RunReport};
pub use sequence::TokenSequence;
