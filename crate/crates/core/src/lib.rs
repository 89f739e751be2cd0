//! Relative contrastive learning for sequential recommendation.
//!
//! Same-target sequences act as strong positives and similarity-ranked
//! sequences as weak positives. A small causal self-attention encoder is
//! trained on next-item prediction jointly with a contrastive loss in which
//! every weak-pair loss is clamped from below by the strong-pair loss.

// Negated comparisons such as `!(x > 0.0)` are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod model;
pub mod optim;
pub mod selection;
pub mod similarity;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use config::TrainConfig;
pub use corpus::{build_sequences, k_core_filter, load_interactions, InputFormat, InteractionCorpus, SequenceRecord, SequenceSet};
pub use error::{RclError, Result};
pub use eval::{evaluate, EvalReport};
pub use losses::{LossBreakdown, LossVariant};
pub use model::{ModelConfig, ModelParams};
pub use similarity::{build_topk_index, Metric, SimilarityIndex};
pub use trainer::{train, TrainOutcome};
