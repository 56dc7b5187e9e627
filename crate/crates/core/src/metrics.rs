//! Attack metrics. Each produces one scalar per (sample, slice) and carries
//! the direction in which the score indicates membership.
//!
//! Target-based metrics read the probability of the realized next token and
//! therefore only the rows returned by [`targeted_pairs`]; target-free metrics
//! read every row of the slice.

use std::borrow::Cow;
use std::fmt;
use std::io::Write;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use rayon::prelude::*;
use thiserror::Error;

use crate::entropy::{self, Alpha, DensifyError, EntropyError};
use crate::records::{Dataset, Label, SequenceSample};
use crate::slicing::{resolve_slice, targeted_pairs, SliceError, SliceSpec, SliceView};

/// DEFLATE level used for the zlib baseline.
pub const ZLIB_LEVEL: u32 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Perplexity,
    PplZlib,
    PplLowercase,
    MinKProb,
    MaxProbGap,
    MaxRenyiK,
    MinRenyiK,
    ModRenyi,
    AugKl,
}

impl MetricKind {
    pub const ALL: [MetricKind; 9] = [
        MetricKind::Perplexity,
        MetricKind::PplZlib,
        MetricKind::PplLowercase,
        MetricKind::MinKProb,
        MetricKind::MaxProbGap,
        MetricKind::AugKl,
        MetricKind::ModRenyi,
        MetricKind::MaxRenyiK,
        MetricKind::MinRenyiK,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Perplexity => "perplexity",
            MetricKind::PplZlib => "ppl_zlib",
            MetricKind::PplLowercase => "ppl_lowercase",
            MetricKind::MinKProb => "min_k_prob",
            MetricKind::MaxProbGap => "max_prob_gap",
            MetricKind::MaxRenyiK => "max_renyi_k",
            MetricKind::MinRenyiK => "min_renyi_k",
            MetricKind::ModRenyi => "mod_renyi",
            MetricKind::AugKl => "aug_kl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MetricKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn needs_alpha(self) -> bool {
        matches!(
            self,
            MetricKind::MaxRenyiK | MetricKind::MinRenyiK | MetricKind::ModRenyi
        )
    }

    pub fn needs_k(self) -> bool {
        matches!(
            self,
            MetricKind::MinKProb | MetricKind::MaxRenyiK | MetricKind::MinRenyiK
        )
    }

    /// Reads the probability of the realized next token.
    pub fn is_target_based(self) -> bool {
        matches!(
            self,
            MetricKind::Perplexity
                | MetricKind::PplZlib
                | MetricKind::PplLowercase
                | MetricKind::MinKProb
                | MetricKind::ModRenyi
        )
    }

    pub fn default_orientation(self) -> Orientation {
        match self {
            MetricKind::MinKProb | MetricKind::MaxProbGap => Orientation::MemberHigh,
            _ => Orientation::MemberLow,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Direction in which a score indicates membership.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    /// Smaller scores indicate members.
    MemberLow,
    /// Larger scores indicate members.
    MemberHigh,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::MemberLow => "member_low",
            Orientation::MemberHigh => "member_high",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "member_low" => Some(Orientation::MemberLow),
            "member_high" => Some(Orientation::MemberHigh),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::MemberLow => Orientation::MemberHigh,
            Orientation::MemberHigh => Orientation::MemberLow,
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("{0} requires alpha")]
    MissingAlpha(MetricKind),
    #[error("{0} takes no alpha")]
    UnexpectedAlpha(MetricKind),
    #[error("{0} requires k_percent")]
    MissingK(MetricKind),
    #[error("{0} takes no k_percent")]
    UnexpectedK(MetricKind),
    #[error("k_percent must lie in [0, 100], got {0}")]
    KOutOfRange(f64),
    #[error("mod_renyi is only defined for finite alpha")]
    AlphaInfinite,
}

/// A metric with its parameters, the slice it reads, and its orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub alpha: Option<Alpha>,
    pub k_percent: Option<f64>,
    pub slice: SliceSpec,
    pub orientation: Orientation,
}

impl MetricSpec {
    pub fn new(
        kind: MetricKind,
        alpha: Option<Alpha>,
        k_percent: Option<f64>,
        slice: SliceSpec,
    ) -> Result<Self, SpecError> {
        match (kind.needs_alpha(), alpha) {
            (true, None) => return Err(SpecError::MissingAlpha(kind)),
            (false, Some(_)) => return Err(SpecError::UnexpectedAlpha(kind)),
            _ => {}
        }
        if kind == MetricKind::ModRenyi && alpha.is_some_and(Alpha::is_infinite) {
            return Err(SpecError::AlphaInfinite);
        }
        match (kind.needs_k(), k_percent) {
            (true, None) => return Err(SpecError::MissingK(kind)),
            (false, Some(_)) => return Err(SpecError::UnexpectedK(kind)),
            (true, Some(k)) if !(0.0..=100.0).contains(&k) => {
                return Err(SpecError::KOutOfRange(k))
            }
            _ => {}
        }
        Ok(MetricSpec {
            kind,
            alpha,
            k_percent,
            slice,
            orientation: kind.default_orientation(),
        })
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    /// Row label without the slice, e.g. `max_renyi_k a=0.5 K=10`.
    pub fn row_label(&self) -> String {
        let mut s = self.kind.name().to_string();
        if let Some(a) = self.alpha {
            s.push_str(&format!(" a={a}"));
        }
        if let Some(k) = self.k_percent {
            s.push_str(&format!(" K={k}"));
        }
        s
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}",
            self.row_label(),
            self.slice,
            self.orientation
        )
    }
}

/// The `(kinds × α × K) per slice` product used when no explicit metric list
/// is given.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub kinds: Vec<MetricKind>,
    pub alphas: Vec<Alpha>,
    pub k_percents: Vec<f64>,
    pub slices: Vec<SliceSpec>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            kinds: MetricKind::ALL.to_vec(),
            alphas: vec![
                Alpha::new(0.5).unwrap(),
                Alpha::SHANNON,
                Alpha::new(2.0).unwrap(),
                Alpha::INFINITY,
            ],
            k_percents: vec![0.0, 10.0, 100.0],
            slices: ["img", "inst", "desp", "inst+desp"]
                .iter()
                .map(|s| s.parse().unwrap())
                .collect(),
        }
    }
}

impl GridSpec {
    pub fn expand(&self) -> Result<Vec<MetricSpec>, SpecError> {
        let mut out = Vec::new();
        for slice in &self.slices {
            for &kind in &self.kinds {
                let alphas: Vec<Option<Alpha>> = if kind.needs_alpha() {
                    self.alphas
                        .iter()
                        .filter(|a| !(kind == MetricKind::ModRenyi && a.is_infinite()))
                        .map(|&a| Some(a))
                        .collect()
                } else {
                    vec![None]
                };
                let ks: Vec<Option<f64>> = if kind.needs_k() {
                    self.k_percents.iter().map(|&k| Some(k)).collect()
                } else {
                    vec![None]
                };
                for &alpha in &alphas {
                    for &k in &ks {
                        out.push(MetricSpec::new(kind, alpha, k, slice.clone())?);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no rows to score")]
    EmptyInput,
    #[error("text is empty or absent")]
    EmptyText,
    #[error("missing variant {0:?}")]
    MissingVariant(String),
    #[error("lowercase perplexity is 1")]
    DivisionByZero,
    #[error("augmented slice has {got} rows, original has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("distribution has fewer than two entries")]
    DegenerateVocab,
    #[error("non-finite score value")]
    NonFinite,
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Densify(#[from] DensifyError),
    #[error(transparent)]
    Slice(#[from] SliceError),
}

/// One score for one sample under one metric; `score` is `None` when the
/// metric is not computable for the sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub sample_id: String,
    pub label: Label,
    pub metric: MetricSpec,
    pub score: Option<f64>,
}

impl ScoredSample {
    pub fn computable(&self) -> bool {
        self.score.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtremeMode {
    Largest,
    Smallest,
}

/// Mean of the `K%` most extreme values.
///
/// `K = 0` selects the single extreme element; otherwise
/// `max(1, floor(K/100 · n))` elements are averaged, so `K = 100` is the
/// plain mean.
pub fn select_k_extreme(
    values: &[f64],
    k_percent: f64,
    mode: ExtremeMode,
) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(MetricError::NonFinite);
    }
    let n = values.len();
    let take = if k_percent <= 0.0 {
        1
    } else {
        ((k_percent * n as f64 / 100.0).floor() as usize).clamp(1, n)
    };
    let mut sorted = values.to_vec();
    match mode {
        ExtremeMode::Largest => sorted.sort_by(|a, b| b.total_cmp(a)),
        ExtremeMode::Smallest => sorted.sort_by(f64::total_cmp),
    }
    let sum: f64 = sorted[..take].iter().sum();
    Ok(sum / take as f64)
}

fn mean(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean negative log-likelihood of the targets, i.e. log-perplexity.
fn mean_nll(target_logp: &[f64]) -> Result<f64, MetricError> {
    Ok(-mean(target_logp)?)
}

/// `exp(-mean target log-probability)`.
pub fn perplexity(target_logp: &[f64]) -> Result<f64, MetricError> {
    Ok(mean_nll(target_logp)?.exp())
}

/// Bit length of the zlib stream (DEFLATE level [`ZLIB_LEVEL`]) of the UTF-8
/// bytes of `text`.
pub fn compress_bits(text: &str) -> Result<u64, MetricError> {
    if text.is_empty() {
        return Err(MetricError::EmptyText);
    }
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(ZLIB_LEVEL));
    enc.write_all(text.as_bytes()).expect("in-memory write");
    let bytes = enc.finish().expect("in-memory write");
    Ok(bytes.len() as u64 * 8)
}

/// Log-perplexity over the compressed bit length of the text.
pub fn ppl_zlib(target_logp: &[f64], text: &str) -> Result<f64, MetricError> {
    let nll = mean_nll(target_logp)?;
    let bits = compress_bits(text)?;
    Ok(zlib_ratio(nll, bits))
}

fn zlib_ratio(log_perplexity: f64, bits: u64) -> f64 {
    log_perplexity / bits as f64
}

/// Ratio of the log-perplexities of the original and lowercased inputs.
pub fn ppl_lowercase(orig_logp: &[f64], lower_logp: &[f64]) -> Result<f64, MetricError> {
    let num = mean_nll(orig_logp)?;
    let den = mean_nll(lower_logp)?;
    if den == 0.0 {
        return Err(MetricError::DivisionByZero);
    }
    Ok(num / den)
}

/// Mean of the smallest `K%` target log-probabilities.
pub fn min_k_prob(target_logp: &[f64], k_percent: f64) -> Result<f64, MetricError> {
    select_k_extreme(target_logp, k_percent, ExtremeMode::Smallest)
}

/// Mean over rows of the gap between the two largest probabilities.
pub fn max_prob_gap(rows: &[&[f64]]) -> Result<f64, MetricError> {
    let gaps = rows
        .iter()
        .map(|row| {
            if row.len() < 2 {
                return Err(MetricError::DegenerateVocab);
            }
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &l in row.iter() {
                if l > first {
                    second = first;
                    first = l;
                } else if l > second {
                    second = l;
                }
            }
            Ok(first.exp() - second.exp())
        })
        .collect::<Result<Vec<_>, _>>()?;
    mean(&gaps)
}

/// Per-row Rényi entropies averaged over the most extreme `K%` rows.
pub fn renyi_k(
    rows: &[&[f64]],
    alpha: Alpha,
    k_percent: f64,
    mode: ExtremeMode,
) -> Result<f64, MetricError> {
    let entropies = rows
        .iter()
        .map(|row| entropy::renyi_entropy(row, alpha))
        .collect::<Result<Vec<_>, _>>()?;
    select_k_extreme(&entropies, k_percent, mode)
}

pub fn max_renyi_k(rows: &[&[f64]], alpha: Alpha, k_percent: f64) -> Result<f64, MetricError> {
    renyi_k(rows, alpha, k_percent, ExtremeMode::Largest)
}

pub fn min_renyi_k(rows: &[&[f64]], alpha: Alpha, k_percent: f64) -> Result<f64, MetricError> {
    renyi_k(rows, alpha, k_percent, ExtremeMode::Smallest)
}

/// Mean modified Rényi entropy over `(row, target)` pairs.
pub fn mod_renyi_score(pairs: &[(&[f64], u32)], alpha: Alpha) -> Result<f64, MetricError> {
    let values = pairs
        .iter()
        .map(|(row, y)| entropy::modified_renyi(row, *y as usize, alpha))
        .collect::<Result<Vec<_>, _>>()?;
    mean(&values)
}

/// `KL(p ‖ q) = Σ p_j (log p_j - log q_j)` over log-distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(lp, _)| **lp > f64::NEG_INFINITY)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum()
}

/// Mean over augmentations of the mean row-wise `KL(original ‖ augmented)`.
pub fn aug_kl(orig: &[&[f64]], augs: &[Vec<&[f64]>]) -> Result<f64, MetricError> {
    if augs.is_empty() {
        return Err(MetricError::MissingVariant("aug_*".into()));
    }
    if orig.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let per_aug = augs
        .iter()
        .map(|aug| {
            if aug.len() != orig.len() {
                return Err(MetricError::LengthMismatch {
                    expected: orig.len(),
                    got: aug.len(),
                });
            }
            let kls: Vec<f64> = orig
                .iter()
                .zip(aug)
                .map(|(p, q)| kl_divergence(p, q))
                .collect();
            mean(&kls)
        })
        .collect::<Result<Vec<_>, _>>()?;
    mean(&per_aug)
}

fn dense_rows<'a>(
    sample: &'a SequenceSample,
    indices: impl IntoIterator<Item = usize>,
) -> Result<Vec<Cow<'a, [f64]>>, MetricError> {
    indices
        .into_iter()
        .map(|i| {
            sample.positions[i]
                .to_dense(sample.vocab_size)
                .map_err(Into::into)
        })
        .collect()
}

fn target_logps(sample: &SequenceSample, view: &SliceView) -> Result<Vec<f64>, MetricError> {
    targeted_pairs(view)
        .into_iter()
        .map(|(i, y)| {
            let row = sample.positions[i].to_dense(sample.vocab_size)?;
            Ok(row[y as usize])
        })
        .collect()
}

fn as_slices<'a>(rows: &'a [Cow<'a, [f64]>]) -> Vec<&'a [f64]> {
    rows.iter().map(|r| r.as_ref()).collect()
}

/// Checks that everything `spec` needs is present in `sample`. The error
/// string names the missing prerequisite.
pub fn prerequisites(sample: &SequenceSample, spec: &MetricSpec) -> Result<(), String> {
    check_prerequisites(sample, spec)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn check_prerequisites(
    sample: &SequenceSample,
    spec: &MetricSpec,
) -> Result<SliceView, MetricError> {
    let view = resolve_slice(sample, &spec.slice)?;
    if spec.kind.is_target_based() {
        if targeted_pairs(&view).is_empty() {
            return Err(MetricError::EmptyInput);
        }
    } else if view.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    match spec.kind {
        MetricKind::PplZlib => {
            if sample.text.as_deref().is_none_or(str::is_empty) {
                return Err(MetricError::EmptyText);
            }
        }
        MetricKind::PplLowercase => {
            let lower = sample
                .variants
                .get("lowercase")
                .ok_or_else(|| MetricError::MissingVariant("lowercase".into()))?;
            let lv = resolve_slice(lower, &spec.slice)?;
            if targeted_pairs(&lv).is_empty() {
                return Err(MetricError::EmptyInput);
            }
        }
        MetricKind::AugKl => {
            let mut any = false;
            for aug in sample.augmentations() {
                any = true;
                let av = resolve_slice(aug, &spec.slice)?;
                if av.len() != view.len() {
                    return Err(MetricError::LengthMismatch {
                        expected: view.len(),
                        got: av.len(),
                    });
                }
            }
            if !any {
                return Err(MetricError::MissingVariant("aug_*".into()));
            }
        }
        _ => {}
    }
    Ok(view)
}

fn compute(sample: &SequenceSample, spec: &MetricSpec) -> Result<f64, MetricError> {
    let view = check_prerequisites(sample, spec)?;
    let k = spec.k_percent.unwrap_or(100.0);
    let value = match spec.kind {
        MetricKind::Perplexity => perplexity(&target_logps(sample, &view)?)?,
        MetricKind::PplZlib => ppl_zlib(
            &target_logps(sample, &view)?,
            sample.text.as_deref().unwrap_or_default(),
        )?,
        MetricKind::PplLowercase => {
            let lower = &sample.variants["lowercase"];
            let lv = resolve_slice(lower, &spec.slice)?;
            ppl_lowercase(&target_logps(sample, &view)?, &target_logps(lower, &lv)?)?
        }
        MetricKind::MinKProb => min_k_prob(&target_logps(sample, &view)?, k)?,
        MetricKind::MaxProbGap => {
            let rows = dense_rows(sample, view.indices.iter().copied())?;
            max_prob_gap(&as_slices(&rows))?
        }
        MetricKind::MaxRenyiK | MetricKind::MinRenyiK => {
            let rows = dense_rows(sample, view.indices.iter().copied())?;
            let alpha = spec.alpha.expect("validated spec");
            let mode = if spec.kind == MetricKind::MaxRenyiK {
                ExtremeMode::Largest
            } else {
                ExtremeMode::Smallest
            };
            renyi_k(&as_slices(&rows), alpha, k, mode)?
        }
        MetricKind::ModRenyi => {
            let pairs = targeted_pairs(&view);
            let rows = dense_rows(sample, pairs.iter().map(|p| p.0))?;
            let with_targets: Vec<(&[f64], u32)> = rows
                .iter()
                .zip(&pairs)
                .map(|(r, p)| (r.as_ref(), p.1))
                .collect();
            mod_renyi_score(&with_targets, spec.alpha.expect("validated spec"))?
        }
        MetricKind::AugKl => {
            let orig = dense_rows(sample, view.indices.iter().copied())?;
            let mut aug_rows = Vec::new();
            for aug in sample.augmentations() {
                let av = resolve_slice(aug, &spec.slice)?;
                aug_rows.push(dense_rows(aug, av.indices)?);
            }
            let aug_slices: Vec<Vec<&[f64]>> = aug_rows.iter().map(|r| as_slices(r)).collect();
            aug_kl(&as_slices(&orig), &aug_slices)?
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(MetricError::NonFinite)
    }
}

/// Scores one sample. Missing prerequisites yield an uncomputable score;
/// only an unknown or misordered slice on the sample itself is an error.
pub fn score_sample(
    sample: &SequenceSample,
    spec: &MetricSpec,
) -> Result<ScoredSample, SliceError> {
    resolve_slice(sample, &spec.slice)?;
    Ok(ScoredSample {
        sample_id: sample.id.clone(),
        label: sample.label,
        metric: spec.clone(),
        score: compute(sample, spec).ok(),
    })
}

/// Scores every sample under every metric, sample-major. Samples are scored
/// in parallel on the current rayon pool; the output order and values do
/// not depend on the pool size.
pub fn score_dataset(
    dataset: &Dataset,
    metrics: &[MetricSpec],
) -> Result<Vec<ScoredSample>, SliceError> {
    let per_sample: Vec<Vec<ScoredSample>> = dataset
        .samples
        .par_iter()
        .map(|s| metrics.iter().map(|m| score_sample(s, m)).collect())
        .collect::<Result<_, _>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{PositionDistribution, Segment, SparseDistribution, TailPolicy};
    use std::collections::BTreeMap;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn logs(p: &[f64]) -> Vec<f64> {
        p.iter().map(|x| x.max(1e-300).ln()).collect()
    }

    #[test]
    fn select_k_extreme_fixtures() {
        let v = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(
            select_k_extreme(&v, 0.0, ExtremeMode::Largest).unwrap(),
            5.0
        );
        close(
            select_k_extreme(&v, 100.0, ExtremeMode::Largest).unwrap(),
            2.8,
            1e-12,
        );
        assert_eq!(
            select_k_extreme(&v, 40.0, ExtremeMode::Largest).unwrap(),
            4.5
        );
        assert_eq!(
            select_k_extreme(&v, 40.0, ExtremeMode::Smallest).unwrap(),
            1.0
        );
        assert_eq!(
            select_k_extreme(&[], 10.0, ExtremeMode::Largest),
            Err(MetricError::EmptyInput)
        );
        // floor(1% of 5) = 0 rounds up to one element
        assert_eq!(
            select_k_extreme(&v, 1.0, ExtremeMode::Smallest).unwrap(),
            1.0
        );
    }

    #[test]
    fn perplexity_fixtures() {
        close(
            perplexity(&[-1.0, -1.0, -1.0]).unwrap(),
            std::f64::consts::E,
            1e-12,
        );
        close(
            perplexity(&logs(&[0.5, 0.25])).unwrap(),
            2.0 * 2f64.sqrt(),
            1e-12,
        );
        assert_eq!(perplexity(&[0.0]).unwrap(), 1.0);
        assert_eq!(perplexity(&[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn zlib_fixtures() {
        // Frozen from both flate2 (miniz_oxide) and CPython zlib 1.2.11 at
        // level 6: 17 bytes.
        assert_eq!(compress_bits(&"a".repeat(1000)).unwrap(), 136);
        assert!(compress_bits("x").unwrap() >= 8);
        let t = "the quick brown fox";
        assert_eq!(compress_bits(t).unwrap(), compress_bits(t).unwrap());
        assert_eq!(compress_bits(""), Err(MetricError::EmptyText));
    }

    #[test]
    fn ratio_fixtures() {
        assert_eq!(zlib_ratio(1.0, 128), 0.0078125);
        // "abcdefghij" compresses to 18 bytes (pinned like the fixture above)
        let text = "abcdefghij";
        assert_eq!(compress_bits(text).unwrap(), 144);
        assert_eq!(ppl_zlib(&[-1.0], text).unwrap(), 1.0 / 144.0);
        assert_eq!(ppl_zlib(&[0.0, 0.0], text).unwrap(), 0.0);

        assert_eq!(ppl_lowercase(&[-0.3, -0.7], &[-0.3, -0.7]).unwrap(), 1.0);
        close(ppl_lowercase(&[-2.0], &[-1.0]).unwrap(), 2.0, 1e-15);
        assert_eq!(
            ppl_lowercase(&[-2.0], &[0.0]),
            Err(MetricError::DivisionByZero)
        );
    }

    #[test]
    fn min_k_fixtures() {
        let t = [-1.0, -3.0, -2.0];
        assert_eq!(min_k_prob(&t, 0.0).unwrap(), -3.0);
        assert_eq!(min_k_prob(&t, 100.0).unwrap(), -2.0);
        assert_eq!(min_k_prob(&t, 67.0).unwrap(), -2.5);
    }

    #[test]
    fn max_prob_gap_fixtures() {
        let a = logs(&[0.6, 0.3, 0.1]);
        let b = logs(&[0.5, 0.5, 0.0]);
        close(max_prob_gap(&[&a, &b]).unwrap(), 0.15, 1e-12);
        let hot = logs(&[0.0, 1.0, 0.0]);
        close(max_prob_gap(&[&hot, &hot]).unwrap(), 1.0, 1e-12);
        let uni = logs(&[0.25; 4]);
        assert_eq!(max_prob_gap(&[&uni]).unwrap(), 0.0);
        assert_eq!(
            max_prob_gap(&[&[0.0][..]]),
            Err(MetricError::DegenerateVocab)
        );
    }

    #[test]
    fn renyi_k_fixtures() {
        let a = logs(&[0.25; 4]);
        let b = logs(&[1.0, 0.0, 0.0, 0.0]);
        let c = logs(&[0.5, 0.25, 0.25]);
        let rows: Vec<&[f64]> = vec![&a, &b, &c];
        let h1 = Alpha::SHANNON;
        close(
            max_renyi_k(&rows, h1, 0.0).unwrap(),
            1.386_294_361_119_890_6,
            1e-9,
        );
        close(
            max_renyi_k(&rows, h1, 100.0).unwrap(),
            0.808_671_710_653_269_5,
            1e-9,
        );
        close(
            max_renyi_k(&rows, h1, 34.0).unwrap(),
            1.386_294_361_119_890_6,
            1e-9,
        );
        assert!(min_renyi_k(&rows, h1, 34.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn mod_renyi_fixtures() {
        let p = logs(&[0.7, 0.2, 0.1]);
        close(
            mod_renyi_score(&[(&p, 0)], Alpha::new(2.0).unwrap()).unwrap(),
            0.14,
            1e-12,
        );
        let hot = logs(&[0.0, 1.0]);
        assert_eq!(
            mod_renyi_score(&[(&hot, 1), (&hot, 1)], Alpha::SHANNON).unwrap(),
            0.0
        );
        // mean of the α = 2 and α = 1 values of the same pair at each order
        let two = mod_renyi_score(&[(&p, 0), (&p, 0)], Alpha::new(2.0).unwrap()).unwrap();
        close(two, 0.14, 1e-12);
        let one = mod_renyi_score(&[(&p, 0), (&hot, 1)], Alpha::SHANNON).unwrap();
        close(one, 0.162_167_245_010_244_3 / 2.0, 1e-12);
    }

    #[test]
    fn aug_kl_fixtures() {
        let p = logs(&[0.5, 0.5]);
        let q = logs(&[0.25, 0.75]);
        assert_eq!(aug_kl(&[&p], &[vec![&p]]).unwrap(), 0.0);
        close(
            aug_kl(&[&p], &[vec![&q]]).unwrap(),
            0.143_841_036_225_890_46,
            1e-12,
        );
        // two augmentations averaging to their mean
        let kl = kl_divergence(&p, &q);
        let two = aug_kl(&[&p], &[vec![&q], vec![&p]]).unwrap();
        close(two, kl / 2.0, 1e-15);
        assert!(matches!(
            aug_kl(&[&p], &[]),
            Err(MetricError::MissingVariant(_))
        ));
        assert!(matches!(
            aug_kl(&[&p], &[vec![&q, &q]]),
            Err(MetricError::LengthMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn metric_parameter_validation() {
        let s = SliceSpec::single("desp");
        assert!(MetricSpec::new(MetricKind::MaxRenyiK, None, Some(0.0), s.clone()).is_err());
        assert!(MetricSpec::new(
            MetricKind::Perplexity,
            Some(Alpha::SHANNON),
            None,
            s.clone()
        )
        .is_err());
        assert!(MetricSpec::new(MetricKind::MinKProb, None, Some(120.0), s.clone()).is_err());
        assert_eq!(
            MetricSpec::new(MetricKind::ModRenyi, Some(Alpha::INFINITY), None, s.clone()),
            Err(SpecError::AlphaInfinite)
        );
        let m = MetricSpec::new(MetricKind::MinKProb, None, Some(10.0), s).unwrap();
        assert_eq!(m.orientation, Orientation::MemberHigh);
    }

    #[test]
    fn default_grid_shape() {
        let grid = GridSpec::default().expand().unwrap();
        // per slice: 1+1+1+3+1+1 + 3 (mod) + 12 + 12
        assert_eq!(grid.len(), 4 * 35);
        assert!(grid
            .iter()
            .all(|m| !(m.kind == MetricKind::ModRenyi && m.alpha.unwrap().is_infinite())));
    }

    fn sample_with_sparse() -> SequenceSample {
        let vocab = 8;
        let positions = vec![
            PositionDistribution::Sparse(SparseDistribution {
                ids: vec![1, 2],
                logp: logs(&[0.5, 0.3]),
                tail: TailPolicy::Uniform,
            }),
            PositionDistribution::Sparse(SparseDistribution {
                ids: vec![3, 1],
                logp: logs(&[0.6, 0.1]),
                tail: TailPolicy::Uniform,
            }),
            PositionDistribution::from_probs(&[0.125; 8]),
        ];
        SequenceSample {
            id: "sp".into(),
            label: Label::Member,
            vocab_size: vocab,
            positions,
            token_ids: vec![Some(0), Some(1), Some(3)],
            text: Some("hello".into()),
            greedy_generated: false,
            segments: vec![
                Segment::new("img", 0, 0),
                Segment::new("inst", 0, 0),
                Segment::new("desp", 0, 3),
            ],
            variants: BTreeMap::new(),
        }
    }

    fn densified(s: &SequenceSample) -> SequenceSample {
        let mut d = s.clone();
        d.positions = s
            .positions
            .iter()
            .map(|p| PositionDistribution::Dense(p.to_dense(s.vocab_size).unwrap().into_owned()))
            .collect();
        d
    }

    #[test]
    fn sparse_scoring_equals_densified_scoring() {
        let s = sample_with_sparse();
        let d = densified(&s);
        let grid = GridSpec {
            slices: vec![SliceSpec::single("desp")],
            ..GridSpec::default()
        };
        for spec in grid.expand().unwrap() {
            let a = score_sample(&s, &spec).unwrap().score;
            let b = score_sample(&d, &spec).unwrap().score;
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits), "{spec}");
        }
    }

    #[test]
    fn prerequisite_gaps_are_uncomputable() {
        let mut s = sample_with_sparse();
        s.text = None;
        let desp = SliceSpec::single("desp");
        let zlib = MetricSpec::new(MetricKind::PplZlib, None, None, desp.clone()).unwrap();
        assert!(!score_sample(&s, &zlib).unwrap().computable());
        assert!(prerequisites(&s, &zlib).is_err());

        let img = SliceSpec::single("img");
        let ppl_img = MetricSpec::new(MetricKind::Perplexity, None, None, img).unwrap();
        assert!(!score_sample(&s, &ppl_img).unwrap().computable());

        let renyi = MetricSpec::new(
            MetricKind::MaxRenyiK,
            Some(Alpha::SHANNON),
            Some(10.0),
            desp.clone(),
        )
        .unwrap();
        let scored = score_sample(&s, &renyi).unwrap();
        assert!(scored.score.unwrap().is_finite());

        let lower = MetricSpec::new(MetricKind::PplLowercase, None, None, desp.clone()).unwrap();
        assert!(!score_sample(&s, &lower).unwrap().computable());
        let mut with_lower = s.clone();
        with_lower.variants.insert("lowercase".into(), s.clone());
        assert_eq!(score_sample(&with_lower, &lower).unwrap().score, Some(1.0));

        let unknown = MetricSpec::new(
            MetricKind::Perplexity,
            None,
            None,
            SliceSpec::single("audio"),
        )
        .unwrap();
        assert_eq!(
            score_sample(&s, &unknown),
            Err(SliceError::UnknownSegment("audio".into()))
        );
    }
}
