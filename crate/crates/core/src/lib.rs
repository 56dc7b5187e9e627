//! Membership-inference scoring and evaluation over exported next-token
//! distributions.
//!
//! The crate consumes per-position next-token log-probability records
//! ([`records`]), resolves logit slices over them ([`slicing`]), computes the
//! Rényi-entropy family and the usual baseline attack metrics ([`entropy`],
//! [`metrics`]), and evaluates attack quality with ROC/AUC and TPR at a fixed
//! FPR ([`eval`]). [`toylab`] provides a character-level n-gram target model
//! and a synthetic member/non-member corpus so the whole loop runs offline.

pub mod entropy;
pub mod eval;
pub mod metrics;
pub mod numfmt;
pub mod records;
pub mod slicing;
pub mod toylab;

#[cfg(test)]
mod properties;

pub use entropy::{Alpha, DensifyError, EntropyError};
pub use eval::{EvalError, EvalResult, Report, ReportLayout, ReportRow};
pub use metrics::{
    GridSpec, MetricError, MetricKind, MetricSpec, Orientation, ScoredSample, SpecError,
};
pub use records::{
    Dataset, Label, ParseError, ParseMode, ParseOutcome, PositionDistribution, Segment,
    SequenceSample, SparseDistribution, TailPolicy, ValidationReport,
};
pub use slicing::{SliceError, SliceSpec, SliceView};
pub use toylab::{LabConfig, NgramModel};

/// Tool version stamped into provenance headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
