//! A self-contained target model and synthetic membership corpus.
//!
//! Members and non-members are i.i.d. uniform strings over a small alphabet;
//! the target model is an additively smoothed character n-gram fitted on the
//! members only. Emitted records use the text-detection layout: zero-length
//! `img` and `inst` segments and the string as `desp`.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`. Stream 0 draws the corpus, stream 1 the
//! augmentations, stream 2 the greedy prompts. A symbol is drawn from one
//! `next_u32()` by rejection: values at or above the largest multiple of the
//! alphabet size are redrawn, then taken modulo the alphabet size.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, EvalResult};
use crate::metrics::{self, GridSpec, MetricSpec, ScoredSample};
use crate::records::{Dataset, Label, PositionDistribution, Segment, SequenceSample};

/// Rendering of symbol indices as characters.
pub const SYMBOLS: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

const CORPUS_STREAM: u64 = 0;
const AUGMENT_STREAM: u64 = 1;
const PROMPT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("invalid lab config: {0}")]
    InvalidConfig(String),
    #[error("symbol {0:?} is not in the model alphabet")]
    UnknownSymbol(char),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabConfig {
    pub alphabet_size: usize,
    pub string_length: usize,
    pub n_member: usize,
    pub n_nonmember: usize,
    pub ngram_order: usize,
    pub smoothing_beta: f64,
    pub seed: u64,
    /// Number of `aug_*` variants per record, each with one symbol replaced.
    pub augmentations: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            alphabet_size: 16,
            string_length: 32,
            n_member: 500,
            n_nonmember: 500,
            ngram_order: 4,
            smoothing_beta: 1e-3,
            seed: 7,
            augmentations: 2,
        }
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: &str| Err(LabError::InvalidConfig(m.to_string()));
        if !(2..=SYMBOLS.len()).contains(&self.alphabet_size) {
            return bad("alphabet_size must lie in [2, 62]");
        }
        if self.string_length == 0 {
            return bad("string_length must be positive");
        }
        if self.ngram_order == 0 {
            return bad("ngram_order must be at least 1");
        }
        if !(self.smoothing_beta > 0.0 && self.smoothing_beta.is_finite()) {
            return bad("smoothing_beta must be positive and finite");
        }
        let space = (self.alphabet_size as f64).powi(self.string_length.min(64) as i32);
        if ((self.n_member + self.n_nonmember) as f64) > space / 2.0 {
            return bad("too many strings requested for the string space");
        }
        Ok(())
    }
}

/// A string as symbol indices.
pub type Symbols = Vec<u32>;

fn draw_symbol(rng: &mut ChaCha8Rng, alphabet: u32) -> u32 {
    let zone = u32::MAX - u32::MAX % alphabet;
    loop {
        let v = rng.next_u32();
        if v < zone {
            return v % alphabet;
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws disjoint member and non-member sets of distinct strings.
pub fn gen_corpus(cfg: &LabConfig) -> Result<(Vec<Symbols>, Vec<Symbols>), LabError> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, CORPUS_STREAM);
    let alphabet = cfg.alphabet_size as u32;
    let mut seen = HashSet::new();
    let mut draw_set = |n: usize| {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s: Symbols = (0..cfg.string_length)
                .map(|_| draw_symbol(&mut rng, alphabet))
                .collect();
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        out
    };
    let members = draw_set(cfg.n_member);
    let nonmembers = draw_set(cfg.n_nonmember);
    Ok((members, nonmembers))
}

pub fn render(symbols: &[u32]) -> String {
    symbols
        .iter()
        .map(|&s| SYMBOLS.as_bytes()[s as usize] as char)
        .collect()
}

pub fn parse_symbols(text: &str, alphabet_size: usize) -> Result<Symbols, LabError> {
    text.chars()
        .map(|c| {
            SYMBOLS[..alphabet_size]
                .find(c)
                .map(|i| i as u32)
                .ok_or(LabError::UnknownSymbol(c))
        })
        .collect()
}

/// Additively smoothed character n-gram model.
///
/// Contexts are the previous `order - 1` symbols, left-padded with a
/// begin marker (index `alphabet_size`). There is no end marker.
#[derive(Clone, Debug, PartialEq)]
pub struct NgramModel {
    pub order: usize,
    pub alphabet_size: usize,
    pub smoothing_beta: f64,
    pub counts: HashMap<Vec<u32>, Vec<u64>>,
}

pub fn fit_ngram(strings: &[Symbols], alphabet_size: usize, order: usize, beta: f64) -> NgramModel {
    assert!(order >= 1, "n-gram order must be at least 1");
    let bos = alphabet_size as u32;
    let mut counts: HashMap<Vec<u32>, Vec<u64>> = HashMap::new();
    for s in strings {
        let mut padded = vec![bos; order - 1];
        padded.extend_from_slice(s);
        for window in padded.windows(order) {
            let (ctx, next) = window.split_at(order - 1);
            counts
                .entry(ctx.to_vec())
                .or_insert_with(|| vec![0; alphabet_size])[next[0] as usize] += 1;
        }
    }
    NgramModel {
        order,
        alphabet_size,
        smoothing_beta: beta,
        counts,
    }
}

impl NgramModel {
    /// Context for predicting the symbol after `history`.
    pub fn context(&self, history: &[u32]) -> Vec<u32> {
        let width = self.order - 1;
        let bos = self.alphabet_size as u32;
        let have = history.len().min(width);
        let mut ctx = vec![bos; width - have];
        ctx.extend_from_slice(&history[history.len() - have..]);
        ctx
    }

    /// Log of `(count + β) / (total + β·|Σ|)` for every symbol.
    pub fn conditional_logp(&self, context: &[u32]) -> Vec<f64> {
        let beta = self.smoothing_beta;
        let a = self.alphabet_size;
        match self.counts.get(context) {
            None => vec![-(a as f64).ln(); a],
            Some(c) => {
                let total: u64 = c.iter().sum();
                let log_den = (total as f64 + beta * a as f64).ln();
                c.iter()
                    .map(|&n| (n as f64 + beta).ln() - log_den)
                    .collect()
            }
        }
    }

    pub fn next_logp(&self, history: &[u32]) -> Vec<f64> {
        self.conditional_logp(&self.context(history))
    }
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy continuation of `prefix` by `length` symbols; ties go to the
/// lowest symbol index. Returns the prefix followed by the continuation.
pub fn greedy_generate(model: &NgramModel, prefix: &[u32], length: usize) -> Symbols {
    let mut out = prefix.to_vec();
    for _ in 0..length {
        let next = argmax(&model.next_logp(&out));
        out.push(next);
    }
    out
}

/// Record for `prompt ⊕ text` with `prompt` as `inst` and `text` as `desp`.
/// Row `i` holds the distribution after reading symbol `i`.
pub fn emit_prompted_record(
    model: &NgramModel,
    id: &str,
    prompt: &[u32],
    text: &[u32],
    label: Label,
    greedy: bool,
) -> SequenceSample {
    let mut all = prompt.to_vec();
    all.extend_from_slice(text);
    let positions = (0..all.len())
        .map(|i| PositionDistribution::Dense(model.next_logp(&all[..=i])))
        .collect();
    SequenceSample {
        id: id.to_string(),
        label,
        vocab_size: model.alphabet_size,
        positions,
        token_ids: all.iter().map(|&s| Some(s)).collect(),
        text: Some(render(text)),
        greedy_generated: greedy,
        segments: vec![
            Segment::new("img", 0, 0),
            Segment::new("inst", 0, prompt.len()),
            Segment::new("desp", prompt.len(), text.len()),
        ],
        variants: BTreeMap::new(),
    }
}

/// Record for a plain string: empty `img` and `inst`, the string as `desp`.
pub fn emit_record(model: &NgramModel, id: &str, text: &[u32], label: Label) -> SequenceSample {
    emit_prompted_record(model, id, &[], text, label, false)
}

/// Copies of `text` with one position replaced by a different symbol.
fn augment(rng: &mut ChaCha8Rng, text: &[u32], alphabet: u32, count: usize) -> Vec<Symbols> {
    (0..count)
        .map(|_| {
            let mut t = text.to_vec();
            if !t.is_empty() {
                let pos = draw_symbol(rng, t.len() as u32) as usize;
                let shift = 1 + draw_symbol(rng, alphabet - 1);
                t[pos] = (t[pos] + shift) % alphabet;
            }
            t
        })
        .collect()
}

fn record_id(label: Label, i: usize) -> String {
    match label {
        Label::Member => format!("m{i:05}"),
        Label::Nonmember => format!("n{i:05}"),
        Label::Unknown => format!("u{i:05}"),
    }
}

/// `text` with upper-case letters mapped to their lower-case symbols.
pub fn lowercase(text: &[u32]) -> Symbols {
    text.iter()
        .map(|&s| if (26..52).contains(&s) { s - 26 } else { s })
        .collect()
}

/// Records for every member and non-member string, with a `lowercase`
/// variant and `aug_*` variants.
pub fn emit_dataset(
    model: &NgramModel,
    cfg: &LabConfig,
    members: &[Symbols],
    nonmembers: &[Symbols],
) -> Dataset {
    let mut rng = rng_for(cfg.seed, AUGMENT_STREAM);
    let alphabet = cfg.alphabet_size as u32;
    let mut samples = Vec::with_capacity(members.len() + nonmembers.len());
    for (label, set) in [(Label::Member, members), (Label::Nonmember, nonmembers)] {
        for (i, s) in set.iter().enumerate() {
            let id = record_id(label, i);
            let mut rec = emit_record(model, &id, s, label);
            rec.variants.insert(
                "lowercase".into(),
                emit_record(model, &id, &lowercase(s), label),
            );
            for (k, aug) in augment(&mut rng, s, alphabet, cfg.augmentations)
                .into_iter()
                .enumerate()
            {
                rec.variants
                    .insert(format!("aug_{k}"), emit_record(model, &id, &aug, label));
            }
            samples.push(rec);
        }
    }
    Dataset::new(samples)
}

/// Greedily generated records: a random prompt of `prompt_len` symbols
/// taken from the start of a member (or non-member) string, followed by a
/// greedy continuation of `gen_len` symbols. Half of the `n` records are
/// members.
pub fn greedy_dataset(
    model: &NgramModel,
    cfg: &LabConfig,
    members: &[Symbols],
    nonmembers: &[Symbols],
    n: usize,
    prompt_len: usize,
    gen_len: usize,
) -> Dataset {
    let mut rng = rng_for(cfg.seed, PROMPT_STREAM);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (label, set) = if i % 2 == 0 {
            (Label::Member, members)
        } else {
            (Label::Nonmember, nonmembers)
        };
        let source = &set[draw_symbol(&mut rng, set.len() as u32) as usize];
        let prompt = &source[..prompt_len.min(source.len())];
        let generated = greedy_generate(model, prompt, gen_len);
        let continuation = &generated[prompt.len()..];
        samples.push(emit_prompted_record(
            model,
            &format!("g{i:05}"),
            prompt,
            continuation,
            label,
            true,
        ));
    }
    Dataset::new(samples)
}

/// Everything one synthetic run produces.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub model: NgramModel,
    pub records: Dataset,
    pub scores: Vec<ScoredSample>,
    pub results: Vec<EvalResult>,
}

/// Generate, fit on members, emit, score `grid`, and evaluate.
pub fn run_experiment_with(
    cfg: &LabConfig,
    grid: &[MetricSpec],
    fpr_targets: &[f64],
) -> Result<Experiment, LabError> {
    let (members, nonmembers) = gen_corpus(cfg)?;
    let model = fit_ngram(
        &members,
        cfg.alphabet_size,
        cfg.ngram_order,
        cfg.smoothing_beta,
    );
    let records = emit_dataset(&model, cfg, &members, &nonmembers);
    let scores = metrics::score_dataset(&records, grid)
        .map_err(|e| LabError::InvalidConfig(e.to_string()))?;
    let results = eval::evaluate(&scores, fpr_targets)?;
    Ok(Experiment {
        model,
        records,
        scores,
        results,
    })
}

/// [`run_experiment_with`] over the default grid at 5% FPR.
pub fn run_experiment(cfg: &LabConfig) -> Result<Experiment, LabError> {
    let grid = GridSpec::default().expand().expect("default grid is valid");
    run_experiment_with(cfg, &grid, &[0.05])
}
