//! Run configuration: a TOML file whose scalars can be overridden by flags.
//!
//! ```toml
//! parse_mode = "lenient"
//! fpr_targets = [0.01, 0.05]
//! jobs = 4
//!
//! [grid]
//! kinds = ["perplexity", "max_renyi_k"]
//! alphas = [0.5, 1, 2, inf]
//! k_percents = [0, 10, 100]
//! slices = ["img", "inst", "desp", "inst+desp"]
//!
//! [[metric]]
//! kind = "min_k_prob"
//! k_percent = 20
//! slice = "desp"
//! orientation = "member_high"
//!
//! [lab]
//! seed = 7
//! smoothing_beta = 0.001
//! ```
//!
//! An explicit `[[metric]]` list replaces the grid. Without either, the
//! default grid is used.

use std::path::{Path, PathBuf};

use miaudit_core::{
    Alpha, GridSpec, LabConfig, MetricKind, MetricSpec, Orientation, ParseMode, SliceSpec,
};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub records: Vec<PathBuf>,
    pub parse_mode: Option<String>,
    pub fpr_targets: Option<Vec<f64>>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub grid: Option<GridConfig>,
    pub metric: Option<Vec<MetricConfig>>,
    pub lab: Option<LabConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub kinds: Option<Vec<String>>,
    pub alphas: Option<Vec<f64>>,
    pub k_percents: Option<Vec<f64>>,
    pub slices: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub kind: String,
    pub alpha: Option<f64>,
    pub k_percent: Option<f64>,
    pub slice: String,
    pub orientation: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().replace('\n', " ");
            CliError::Usage(format!("invalid config {}: {msg}", path.display()))
        })
    }
}

pub fn parse_mode(name: &str) -> Result<ParseMode, CliError> {
    match name {
        "strict" => Ok(ParseMode::Strict),
        "lenient" => Ok(ParseMode::Lenient),
        other => Err(CliError::Usage(format!(
            "parse mode must be strict or lenient, got {other:?}"
        ))),
    }
}

fn kind(name: &str) -> Result<MetricKind, CliError> {
    MetricKind::parse(name).ok_or_else(|| CliError::Usage(format!("unknown metric kind {name:?}")))
}

fn alpha(v: f64) -> Result<Alpha, CliError> {
    Alpha::new(v).map_err(|e| CliError::Usage(format!("alpha {v}: {e}")))
}

fn slice(name: &str) -> Result<SliceSpec, CliError> {
    name.parse()
        .map_err(|e| CliError::Usage(format!("slice {name:?}: {e}")))
}

/// The metric list: explicit `[[metric]]` entries, else the (possibly
/// partial) grid over the defaults.
pub fn metrics(cfg: &RunConfig) -> Result<Vec<MetricSpec>, CliError> {
    let list = if let Some(entries) = &cfg.metric {
        entries
            .iter()
            .map(|m| {
                let spec = MetricSpec::new(
                    kind(&m.kind)?,
                    m.alpha.map(alpha).transpose()?,
                    m.k_percent,
                    slice(&m.slice)?,
                )
                .map_err(|e| CliError::Usage(format!("metric {}: {e}", m.kind)))?;
                Ok(match &m.orientation {
                    Some(o) => spec.with_orientation(Orientation::parse(o).ok_or_else(|| {
                        CliError::Usage(format!(
                            "orientation must be member_low or member_high, got {o:?}"
                        ))
                    })?),
                    None => spec,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?
    } else {
        let mut grid = GridSpec::default();
        if let Some(g) = &cfg.grid {
            if let Some(kinds) = &g.kinds {
                grid.kinds = kinds.iter().map(|k| kind(k)).collect::<Result<_, _>>()?;
            }
            if let Some(alphas) = &g.alphas {
                grid.alphas = alphas.iter().map(|&a| alpha(a)).collect::<Result<_, _>>()?;
            }
            if let Some(ks) = &g.k_percents {
                grid.k_percents = ks.clone();
            }
            if let Some(slices) = &g.slices {
                grid.slices = slices.iter().map(|s| slice(s)).collect::<Result<_, _>>()?;
            }
        }
        grid.expand()
            .map_err(|e| CliError::Usage(format!("grid: {e}")))?
    };
    if list.is_empty() {
        return Err(CliError::Usage("the metric list is empty".into()));
    }
    Ok(list)
}

pub fn fpr_targets(cfg: &RunConfig, flags: &[f64]) -> Result<Vec<f64>, CliError> {
    let targets = if !flags.is_empty() {
        flags.to_vec()
    } else {
        cfg.fpr_targets.clone().unwrap_or_else(|| vec![0.05])
    };
    if let Some(bad) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(CliError::Usage(format!(
            "FPR target {bad} is outside [0, 1]"
        )));
    }
    Ok(targets)
}

/// Settings that determine output contents. Thread count and output paths
/// are not part of it.
pub struct Effective<'a> {
    pub parse_mode: ParseMode,
    pub metrics: &'a [MetricSpec],
    pub fpr_targets: &'a [f64],
    pub lab: Option<&'a LabConfig>,
}

impl Effective<'_> {
    pub fn canonical(&self) -> String {
        let mut out = format!("parse_mode={:?}\n", self.parse_mode);
        for t in self.fpr_targets {
            out.push_str(&format!("fpr={}\n", miaudit_core::numfmt::sig17(*t)));
        }
        for m in self.metrics {
            out.push_str(&format!(
                "metric={}|{}|{}|{}|{}\n",
                m.kind.name(),
                m.alpha.map(|a| a.to_string()).unwrap_or_default(),
                m.k_percent
                    .map(miaudit_core::numfmt::sig17)
                    .unwrap_or_default(),
                m.slice,
                m.orientation.name()
            ));
        }
        if let Some(lab) = self.lab {
            out.push_str(&format!(
                "lab={}|{}|{}|{}|{}|{}|{}|{}\n",
                lab.alphabet_size,
                lab.string_length,
                lab.n_member,
                lab.n_nonmember,
                lab.ngram_order,
                miaudit_core::numfmt::sig17(lab.smoothing_beta),
                lab.seed,
                lab.augmentations
            ));
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// First line of every output file.
    pub fn provenance(&self) -> String {
        format!(
            "# provenance: miaudit {} config={}",
            miaudit_core::VERSION,
            self.hash()
        )
    }
}
