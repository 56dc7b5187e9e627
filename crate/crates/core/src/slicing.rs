//! Logit slices: which rows of a record a metric reads, and which next-token
//! target each row is scored against.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::records::SequenceSample;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SliceError {
    #[error("unknown segment {0:?}")]
    UnknownSegment(String),
    #[error("segment {0:?} is out of sample order or repeated")]
    OutOfOrder(String),
    #[error("empty slice name")]
    Empty,
}

/// Ordered list of segment names joined with `+`, e.g. `inst+desp`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SliceSpec {
    names: Vec<String>,
}

impl SliceSpec {
    pub fn new<I, S>(names: I) -> Result<Self, SliceError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() || names.iter().any(|n| n.is_empty()) {
            return Err(SliceError::Empty);
        }
        Ok(SliceSpec { names })
    }

    pub fn single(name: &str) -> Self {
        SliceSpec::new([name]).expect("non-empty name")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl fmt::Display for SliceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names.join("+"))
    }
}

impl FromStr for SliceSpec {
    type Err = SliceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SliceSpec::new(s.split('+').map(str::trim))
    }
}

/// Rows selected by a slice, each with the token it predicts when known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceView {
    pub indices: Vec<usize>,
    pub targets: Vec<Option<u32>>,
}

impl SliceView {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Resolves `spec` against the sample's segment map. Row `i` is paired with
/// `token_ids[i + 1]`, so the last row of a segment is scored against the
/// first token of the next one and the final row never has a target.
pub fn resolve_slice(sample: &SequenceSample, spec: &SliceSpec) -> Result<SliceView, SliceError> {
    let mut indices = Vec::new();
    let mut last_order: Option<usize> = None;
    for name in spec.names() {
        let (order, seg) = sample
            .segments
            .iter()
            .enumerate()
            .find(|(_, s)| &s.name == name)
            .ok_or_else(|| SliceError::UnknownSegment(name.clone()))?;
        if last_order.is_some_and(|prev| order <= prev) {
            return Err(SliceError::OutOfOrder(name.clone()));
        }
        last_order = Some(order);
        indices.extend(seg.range());
    }
    let targets = indices
        .iter()
        .map(|&i| sample.token_ids.get(i + 1).copied().flatten())
        .collect();
    Ok(SliceView { indices, targets })
}

/// `(row index, target)` for the rows of `view` that have a target, in order.
pub fn targeted_pairs(view: &SliceView) -> Vec<(usize, u32)> {
    view.indices
        .iter()
        .zip(&view.targets)
        .filter_map(|(&i, t)| t.map(|t| (i, t)))
        .collect()
}
