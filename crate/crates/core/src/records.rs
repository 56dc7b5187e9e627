//! Probability records: the data model every other module consumes, the
//! line-delimited JSON wire format, and record validation.
//!
//! One line holds one [`SequenceSample`]. Lines that start with `#` are
//! comments; a comment of the form `# key: value` is kept as dataset metadata.
//! Blank lines are skipped. Floating-point values are written with 17
//! significant digits so they parse back to the same doubles.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{self, densify_topk, DensifyError, SPARSE_MASS_TOL};
use crate::metrics::{self, MetricSpec};
use crate::numfmt;

/// Tolerance on `Σ exp(logp) = 1` for dense rows.
pub const DENSE_MASS_TOL: f64 = 1e-6;
/// Tolerance when checking that a greedy target is an argmax.
const ARGMAX_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Member,
    Nonmember,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Member => "member",
            Label::Nonmember => "nonmember",
            Label::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "member" => Some(Label::Member),
            "nonmember" => Some(Label::Nonmember),
            "unknown" => Some(Label::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the probability mass not covered by a top-k row is distributed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailPolicy {
    Uniform,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseDistribution {
    pub ids: Vec<u32>,
    pub logp: Vec<f64>,
    pub tail: TailPolicy,
}

/// One next-token distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum PositionDistribution {
    /// Natural-log probabilities over the whole vocabulary.
    Dense(Vec<f64>),
    /// Top-k entries plus a tail policy; the vocabulary size lives on the
    /// owning sample.
    Sparse(SparseDistribution),
}

impl PositionDistribution {
    /// Builds a dense row from probabilities, flooring each at
    /// [`entropy::PROB_FLOOR`] before the log.
    pub fn from_probs(probs: &[f64]) -> Self {
        PositionDistribution::Dense(
            probs
                .iter()
                .map(|p| p.max(entropy::PROB_FLOOR).ln())
                .collect(),
        )
    }

    /// Dense log-probabilities, borrowing when the row is already dense.
    pub fn to_dense(&self, vocab_size: usize) -> Result<Cow<'_, [f64]>, DensifyError> {
        match self {
            PositionDistribution::Dense(v) => Ok(Cow::Borrowed(v)),
            PositionDistribution::Sparse(s) => {
                densify_topk(&s.ids, &s.logp, vocab_size, s.tail).map(Cow::Owned)
            }
        }
    }

    fn check(&self, vocab_size: usize) -> Result<(), String> {
        match self {
            PositionDistribution::Dense(v) => {
                if v.len() != vocab_size {
                    return Err(format!(
                        "dense row has {} entries, vocab_size is {vocab_size}",
                        v.len()
                    ));
                }
                if let Some(bad) = v.iter().find(|l| !l.is_finite()) {
                    return Err(format!("dense row has non-finite entry {bad}"));
                }
                let mass: f64 = v.iter().map(|l| l.exp()).sum();
                if (mass - 1.0).abs() > DENSE_MASS_TOL {
                    return Err(format!("dense row probabilities sum to {mass}"));
                }
                Ok(())
            }
            PositionDistribution::Sparse(s) => {
                let mass: f64 = s.logp.iter().map(|l| l.exp()).sum();
                if mass > 1.0 + SPARSE_MASS_TOL {
                    return Err(format!("top-k probabilities sum to {mass}"));
                }
                densify_topk(&s.ids, &s.logp, vocab_size, s.tail)
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            }
        }
    }
}

/// A named, contiguous block of positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(name: impl Into<String>, start: usize, len: usize) -> Self {
        Segment {
            name: name.into(),
            start,
            len,
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// One labeled query to a target model.
///
/// `positions[i]` is the next-token distribution after reading the input
/// token `token_ids[i]`, so row `i` predicts `token_ids[i + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub id: String,
    pub label: Label,
    pub vocab_size: usize,
    pub positions: Vec<PositionDistribution>,
    pub token_ids: Vec<Option<u32>>,
    pub text: Option<String>,
    pub greedy_generated: bool,
    pub segments: Vec<Segment>,
    /// Sibling records ("lowercase", "aug_0", ...). One level deep.
    pub variants: BTreeMap<String, SequenceSample>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Variants whose name starts with `aug_`, in name order.
    pub fn augmentations(&self) -> impl Iterator<Item = &SequenceSample> {
        self.variants
            .iter()
            .filter(|(name, _)| name.starts_with("aug_"))
            .map(|(_, v)| v)
    }

    /// Checks every record invariant; the error names the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.check_self()?;
        for (name, variant) in &self.variants {
            if name.is_empty() {
                return Err("variant with empty name".into());
            }
            if !variant.variants.is_empty() {
                return Err(format!("variant {name:?} has nested variants"));
            }
            if variant.vocab_size != self.vocab_size {
                return Err(format!(
                    "variant {name:?} has vocab_size {}, expected {}",
                    variant.vocab_size, self.vocab_size
                ));
            }
            variant
                .check_self()
                .map_err(|e| format!("variant {name:?}: {e}"))?;
        }
        Ok(())
    }

    fn check_self(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.vocab_size == 0 {
            return Err("vocab_size must be positive".into());
        }

        let mut cursor = 0;
        let mut names = HashSet::new();
        for seg in &self.segments {
            if !names.insert(seg.name.as_str()) {
                return Err(format!("segment {:?} listed twice", seg.name));
            }
            if seg.start != cursor {
                return Err(format!(
                    "segment {:?} starts at {}, expected {cursor}",
                    seg.name, seg.start
                ));
            }
            cursor += seg.len;
        }
        if cursor != self.positions.len() {
            return Err(format!(
                "segments cover {cursor} positions, record has {}",
                self.positions.len()
            ));
        }

        if self.token_ids.len() != self.positions.len() {
            return Err(format!(
                "token_ids has {} entries, record has {} positions",
                self.token_ids.len(),
                self.positions.len()
            ));
        }
        if let Some(bad) = self
            .token_ids
            .iter()
            .flatten()
            .find(|&&t| t as usize >= self.vocab_size)
        {
            return Err(format!("token id {bad} >= vocab_size {}", self.vocab_size));
        }

        for (i, pos) in self.positions.iter().enumerate() {
            pos.check(self.vocab_size)
                .map_err(|e| format!("position {i}: {e}"))?;
        }

        if self.greedy_generated {
            self.check_greedy()?;
        }
        Ok(())
    }

    fn check_greedy(&self) -> Result<(), String> {
        let Some(desp) = self.segment("desp") else {
            return Err("greedy record has no \"desp\" segment".into());
        };
        let range = desp.range();
        for i in range.start..range.end.saturating_sub(1) {
            let target = self.token_ids[i + 1]
                .ok_or_else(|| format!("greedy record lacks token id at {}", i + 1))?;
            let row = self.positions[i]
                .to_dense(self.vocab_size)
                .map_err(|e| e.to_string())?;
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if row[target as usize] < max - ARGMAX_TOL {
                return Err(format!(
                    "greedy record: token {target} at {} is not an argmax of row {i}",
                    i + 1
                ));
            }
        }
        Ok(())
    }
}

/// A collection of samples plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SequenceSample>,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(samples: Vec<SequenceSample>) -> Self {
        Dataset {
            samples,
            metadata: BTreeMap::new(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Evaluation needs both classes present.
    pub fn has_both_classes(&self) -> bool {
        self.count(Label::Member) > 0 && self.count(Label::Nonmember) > 0
    }

    /// Writes metadata as `# key: value` lines followed by one record per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}: {v}")?;
        }
        for sample in &self.samples {
            let wire = WireRecord::from_sample(sample);
            let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17Formatter);
            wire.serialize(&mut ser).map_err(io::Error::other)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParseMode {
    /// Abort on the first bad line.
    #[default]
    Strict,
    /// Skip bad lines and report them.
    Lenient,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("line {line_no}: sample {sample_id:?}: {reason}")]
    InvariantViolation {
        line_no: usize,
        sample_id: String,
        reason: String,
    },
    #[error("line {line_no}: duplicate sample id {id:?}")]
    DuplicateId { line_no: usize, id: String },
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

impl ParseError {
    pub fn line_no(&self) -> Option<usize> {
        match self {
            ParseError::MalformedLine { line_no, .. }
            | ParseError::InvariantViolation { line_no, .. }
            | ParseError::DuplicateId { line_no, .. } => Some(*line_no),
            ParseError::Io(_) => None,
        }
    }
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub dataset: Dataset,
    /// Lines skipped in lenient mode; always empty in strict mode.
    pub rejected: Vec<ParseError>,
}

/// Parses line-delimited records. Each line is accepted or rejected as a
/// whole; a rejection never touches samples accepted earlier.
pub fn parse_records<R: BufRead>(
    mut input: R,
    mode: ParseMode,
) -> Result<ParseOutcome, ParseError> {
    let mut dataset = Dataset::default();
    let mut rejected = Vec::new();
    let mut ids = HashSet::new();
    let mut buf = Vec::new();
    let mut line_no = 0;

    loop {
        buf.clear();
        if input.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        match parse_line(&buf, line_no, &ids) {
            Ok(Line::Blank) => {}
            Ok(Line::Meta(k, v)) => {
                dataset.metadata.insert(k, v);
            }
            Ok(Line::Record(sample)) => {
                ids.insert(sample.id.clone());
                dataset.samples.push(*sample);
            }
            Err(e) => match mode {
                ParseMode::Strict => return Err(e),
                ParseMode::Lenient => rejected.push(e),
            },
        }
    }
    Ok(ParseOutcome { dataset, rejected })
}

/// Strict parse of an in-memory string.
pub fn parse_str(input: &str) -> Result<Dataset, ParseError> {
    parse_records(input.as_bytes(), ParseMode::Strict).map(|o| o.dataset)
}

enum Line {
    Blank,
    Meta(String, String),
    Record(Box<SequenceSample>),
}

fn parse_line(raw: &[u8], line_no: usize, seen: &HashSet<String>) -> Result<Line, ParseError> {
    let malformed = |reason: String| ParseError::MalformedLine { line_no, reason };
    let text = std::str::from_utf8(raw).map_err(|e| malformed(format!("invalid UTF-8: {e}")))?;
    let text = text.trim_end_matches(['\n', '\r']);
    if text.trim().is_empty() {
        return Ok(Line::Blank);
    }
    if let Some(comment) = text.strip_prefix('#') {
        return Ok(match comment.split_once(':') {
            Some((k, v)) if !k.trim().is_empty() && !k.trim().contains(' ') => {
                Line::Meta(k.trim().to_string(), v.trim().to_string())
            }
            _ => Line::Blank,
        });
    }

    let wire: WireRecord = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let sample = wire.into_sample(true).map_err(malformed)?;
    if seen.contains(&sample.id) {
        return Err(ParseError::DuplicateId {
            line_no,
            id: sample.id,
        });
    }
    sample
        .check_invariants()
        .map_err(|reason| ParseError::InvariantViolation {
            line_no,
            sample_id: sample.id.clone(),
            reason,
        })?;
    Ok(Line::Record(Box::new(sample)))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    id: String,
    label: Label,
    vocab_size: usize,
    segments: Vec<Segment>,
    greedy: bool,
    token_ids: Vec<Option<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    positions: Vec<WirePosition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variants: Option<BTreeMap<String, WireRecord>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
enum WirePosition {
    #[serde(rename = "dense")]
    Dense(Vec<f64>),
    #[serde(rename = "topk")]
    Topk(WireTopk),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTopk {
    ids: Vec<u32>,
    logp: Vec<f64>,
    tail: TailPolicy,
}

impl WireRecord {
    fn from_sample(s: &SequenceSample) -> Self {
        WireRecord {
            id: s.id.clone(),
            label: s.label,
            vocab_size: s.vocab_size,
            segments: s.segments.clone(),
            greedy: s.greedy_generated,
            token_ids: s.token_ids.clone(),
            text: s.text.clone(),
            positions: s
                .positions
                .iter()
                .map(|p| match p {
                    PositionDistribution::Dense(v) => WirePosition::Dense(v.clone()),
                    PositionDistribution::Sparse(sp) => WirePosition::Topk(WireTopk {
                        ids: sp.ids.clone(),
                        logp: sp.logp.clone(),
                        tail: sp.tail,
                    }),
                })
                .collect(),
            variants: if s.variants.is_empty() {
                None
            } else {
                Some(
                    s.variants
                        .iter()
                        .map(|(k, v)| (k.clone(), WireRecord::from_sample(v)))
                        .collect(),
                )
            },
        }
    }

    fn into_sample(self, allow_variants: bool) -> Result<SequenceSample, String> {
        let mut variants = BTreeMap::new();
        if let Some(vs) = self.variants {
            if !allow_variants {
                return Err("variants may not be nested".into());
            }
            for (name, v) in vs {
                variants.insert(name, v.into_sample(false)?);
            }
        }
        let positions = self
            .positions
            .into_iter()
            .map(|p| match p {
                WirePosition::Dense(v) => PositionDistribution::Dense(v),
                WirePosition::Topk(t) => PositionDistribution::Sparse(SparseDistribution {
                    ids: t.ids,
                    logp: t.logp,
                    tail: t.tail,
                }),
            })
            .collect();
        Ok(SequenceSample {
            id: self.id,
            label: self.label,
            vocab_size: self.vocab_size,
            positions,
            token_ids: self.token_ids,
            text: self.text,
            greedy_generated: self.greedy,
            segments: self.segments,
            variants,
        })
    }
}

/// Compact JSON with every double written at 17 significant digits.
struct Sig17Formatter;

impl serde_json::ser::Formatter for Sig17Formatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(numfmt::sig17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Per-sample computability of the requested metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub metrics: Vec<MetricSpec>,
    pub samples: Vec<SampleValidation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleValidation {
    pub sample_id: String,
    /// One entry per requested metric, in request order; `Err` holds the
    /// missing prerequisite.
    pub metrics: Vec<Result<(), String>>,
}

impl ValidationReport {
    pub fn computable_count(&self, metric_index: usize) -> usize {
        self.samples
            .iter()
            .filter(|s| s.metrics[metric_index].is_ok())
            .count()
    }

    pub fn all_computable(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.metrics.iter().all(Result::is_ok))
    }
}

/// Reports, per sample, which of `required` can be computed. Never fails.
pub fn validate_dataset(dataset: &Dataset, required: &[MetricSpec]) -> ValidationReport {
    let samples = dataset
        .samples
        .iter()
        .map(|sample| SampleValidation {
            sample_id: sample.id.clone(),
            metrics: required
                .iter()
                .map(|spec| metrics::prerequisites(sample, spec))
                .collect(),
        })
        .collect();
    ValidationReport {
        metrics: required.to_vec(),
        samples,
    }
}
