//! Rényi entropy of next-token distributions, its linearized and
//! target-modified variants, and completion of truncated top-k outputs.
//!
//! All functions take dense log-probability vectors (natural log) and return
//! values in nats. `f64::NEG_INFINITY` entries are accepted and read as zero
//! probability; NaN and `+inf` are rejected.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::records::TailPolicy;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;
/// `1 - p` is floored here in the α = 1 modified branch.
pub const COMPLEMENT_FLOOR: f64 = 1e-15;
/// Leftover tail mass below this switches densification to the floor policy.
pub const TAIL_FLOOR: f64 = 1e-12;
/// Tolerance on the listed mass of a sparse row.
pub const SPARSE_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntropyError {
    #[error("distribution contains NaN or +inf")]
    NonFiniteInput,
    #[error("distribution is empty or carries no mass")]
    EmptyDistribution,
    #[error("target {target} out of range for vocabulary of {vocab_size}")]
    TargetOutOfRange { target: usize, vocab_size: usize },
    #[error("order alpha = inf is not defined for this entropy")]
    AlphaInfinite,
    #[error("order alpha must be positive, got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensifyError {
    #[error("listed probability mass {0} exceeds 1")]
    MassExceedsOne(f64),
    #[error("listed probability mass {0} is not 1 and the tail policy is none")]
    MassDeficit(f64),
    #[error("{k} listed tokens leave no tail in a vocabulary of {vocab_size}")]
    VocabTooSmall { k: usize, vocab_size: usize },
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("token id {0} listed twice")]
    DuplicateId(u32),
    #[error("{ids} ids but {logp} log-probabilities")]
    LengthMismatch { ids: usize, logp: usize },
    #[error("log-probability {0} is not finite")]
    NonFinite(f64),
}

/// Order of a Rényi entropy: a positive real or infinity.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Alpha(f64);

impl Alpha {
    pub const SHANNON: Alpha = Alpha(1.0);
    pub const INFINITY: Alpha = Alpha(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self, EntropyError> {
        if value > 0.0 {
            Ok(Alpha(value))
        } else {
            Err(EntropyError::InvalidAlpha(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn is_shannon(self) -> bool {
        self.0 == 1.0
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Alpha {
    type Err = EntropyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "inf" | "+inf" | "infinity" | "∞" => Ok(Alpha::INFINITY),
            _ => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| EntropyError::InvalidAlpha(f64::NAN))?;
                Alpha::new(v)
            }
        }
    }
}

fn check_finite(logp: &[f64]) -> Result<(), EntropyError> {
    if logp.is_empty() {
        return Err(EntropyError::EmptyDistribution);
    }
    if logp.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(EntropyError::NonFiniteInput);
    }
    Ok(())
}

/// `log Σ exp(x_j)`, shifted by the maximum.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Shannon entropy `-Σ p_j log p_j`.
pub fn shannon_entropy(logp: &[f64]) -> Result<f64, EntropyError> {
    check_finite(logp)?;
    Ok(shannon_unchecked(logp))
}

fn shannon_unchecked(logp: &[f64]) -> f64 {
    -logp
        .iter()
        .filter(|l| **l > f64::NEG_INFINITY)
        .map(|&l| l.exp() * l)
        .sum::<f64>()
}

/// Min-entropy `-log max_j p_j`.
pub fn min_entropy(logp: &[f64]) -> Result<f64, EntropyError> {
    check_finite(logp)?;
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(EntropyError::EmptyDistribution);
    }
    Ok(-max)
}

/// Rényi entropy `H_α(p) = log(Σ_j p_j^α) / (1 - α)`, with the Shannon and
/// min-entropy limits at α = 1 and α = ∞.
pub fn renyi_entropy(logp: &[f64], alpha: Alpha) -> Result<f64, EntropyError> {
    if alpha.is_shannon() {
        return shannon_entropy(logp);
    }
    if alpha.is_infinite() {
        return min_entropy(logp);
    }
    check_finite(logp)?;
    let a = alpha.value();
    let scaled: Vec<f64> = logp.iter().map(|l| a * l).collect();
    let lse = logsumexp(&scaled);
    if lse == f64::NEG_INFINITY {
        return Err(EntropyError::EmptyDistribution);
    }
    Ok(lse / (1.0 - a))
}

/// Linearized Rényi entropy `(Σ_j p_j^α - 1) / (1 - α)`; Shannon at α = 1.
pub fn linearized_renyi(logp: &[f64], alpha: Alpha) -> Result<f64, EntropyError> {
    if alpha.is_infinite() {
        return Err(EntropyError::AlphaInfinite);
    }
    check_finite(logp)?;
    if alpha.is_shannon() {
        return Ok(shannon_unchecked(logp));
    }
    let a = alpha.value();
    let power_sum: f64 = logp.iter().map(|l| (a * l).exp()).sum();
    Ok((power_sum - 1.0) / (1.0 - a))
}

/// Modified Rényi entropy of a distribution given the realized next token.
///
/// For α ≠ 1 with `d = |α - 1|`:
///
/// ```text
/// -1/d · [ (1-p_y)(p_y^d - 1) + Σ_{j≠y} p_j((1-p_j)^d - 1) ]
/// ```
///
/// evaluated with `expm1`/`ln_1p` so it stays accurate as `d → 0`. At α = 1
/// this is `-Σ_{j≠y} p_j log(1-p_j) - (1-p_y) log p_y`, with `p` floored at
/// [`PROB_FLOOR`] and `1-p` at [`COMPLEMENT_FLOOR`] inside the logs.
pub fn modified_renyi(logp: &[f64], target: usize, alpha: Alpha) -> Result<f64, EntropyError> {
    if alpha.is_infinite() {
        return Err(EntropyError::AlphaInfinite);
    }
    check_finite(logp)?;
    if target >= logp.len() {
        return Err(EntropyError::TargetOutOfRange {
            target,
            vocab_size: logp.len(),
        });
    }
    let p_y = logp[target].exp();
    if alpha.is_shannon() {
        let ln_py = logp[target].max(PROB_FLOOR.ln());
        let mut acc = -(1.0 - p_y) * ln_py;
        for (j, &l) in logp.iter().enumerate() {
            if j == target || l == f64::NEG_INFINITY {
                continue;
            }
            let p = l.exp();
            let p_capped = p.min(1.0 - COMPLEMENT_FLOOR);
            acc -= p * (-p_capped).ln_1p();
        }
        return Ok(acc);
    }
    let d = (alpha.value() - 1.0).abs();
    // (1 - p_y)(p_y^d - 1)
    let mut inner = (1.0 - p_y) * (d * logp[target]).exp_m1();
    for (j, &l) in logp.iter().enumerate() {
        if j == target || l == f64::NEG_INFINITY {
            continue;
        }
        let p = l.exp();
        // p_j((1 - p_j)^d - 1)
        inner += p * (d * (-p).ln_1p()).exp_m1();
    }
    Ok(-inner / d)
}

/// Expands a top-k row into a full log-distribution over `vocab_size` tokens.
///
/// With [`TailPolicy::Uniform`] the leftover mass `1 - Σ p_listed` is spread
/// evenly over the unlisted tokens. When the leftover is below
/// [`TAIL_FLOOR`], the unlisted tokens share exactly `TAIL_FLOOR` and the
/// listed entries are rescaled to `1 - TAIL_FLOOR`. With
/// [`TailPolicy::None`] the listed mass must already be 1 and unlisted tokens
/// get the [`PROB_FLOOR`] log-probability.
pub fn densify_topk(
    ids: &[u32],
    logp: &[f64],
    vocab_size: usize,
    tail: TailPolicy,
) -> Result<Vec<f64>, DensifyError> {
    if ids.len() != logp.len() {
        return Err(DensifyError::LengthMismatch {
            ids: ids.len(),
            logp: logp.len(),
        });
    }
    let k = ids.len();
    let mut listed = vec![false; vocab_size];
    for &id in ids {
        let slot = listed
            .get_mut(id as usize)
            .ok_or(DensifyError::IdOutOfRange { id, vocab_size })?;
        if *slot {
            return Err(DensifyError::DuplicateId(id));
        }
        *slot = true;
    }
    if let Some(&bad) = logp.iter().find(|l| !l.is_finite()) {
        return Err(DensifyError::NonFinite(bad));
    }
    let mass: f64 = logp.iter().map(|l| l.exp()).sum();
    if mass > 1.0 + SPARSE_MASS_TOL {
        return Err(DensifyError::MassExceedsOne(mass));
    }

    let mut listed_shift = 0.0;
    let tail_logp = match tail {
        TailPolicy::None => {
            if (mass - 1.0).abs() > SPARSE_MASS_TOL {
                return Err(DensifyError::MassDeficit(mass));
            }
            PROB_FLOOR.ln()
        }
        TailPolicy::Uniform => {
            if k >= vocab_size {
                return Err(DensifyError::VocabTooSmall { k, vocab_size });
            }
            let unlisted = (vocab_size - k) as f64;
            let leftover = 1.0 - mass;
            if leftover < TAIL_FLOOR {
                listed_shift = ((1.0 - TAIL_FLOOR) / mass).ln();
                (TAIL_FLOOR / unlisted).ln()
            } else {
                (leftover / unlisted).ln()
            }
        }
    };

    let mut dense = vec![tail_logp; vocab_size];
    for (&id, &l) in ids.iter().zip(logp) {
        dense[id as usize] = l + listed_shift;
    }
    Ok(dense)
}
