//! Attack evaluation: ROC curves, AUC, TPR at a fixed FPR, and report grids
//! with metric rows and slice columns.
//!
//! Scores are first mapped to membership *evidence* (negated for
//! [`Orientation::MemberLow`]) so that every routine below only deals with
//! "larger means member". Negation is exact, which makes
//! `auc(s, MemberLow) == auc(-s, MemberHigh)` hold bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{MetricSpec, Orientation, ScoredSample};
use crate::numfmt;
use crate::records::Label;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("members and non-members must both be non-empty")]
    EmptyClass,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("FPR target {0} outside [0, 1]")]
    InvalidFprTarget(f64),
}

fn evidence(scores: &[f64], orientation: Orientation) -> Result<Vec<f64>, EvalError> {
    scores
        .iter()
        .map(|&s| {
            if !s.is_finite() {
                return Err(EvalError::NonFiniteScore(s));
            }
            Ok(match orientation {
                Orientation::MemberLow => -s,
                Orientation::MemberHigh => s,
            })
        })
        .collect()
}

/// Evidence values sorted descending, each tagged `true` for members.
fn ranked(
    members: &[f64],
    nonmembers: &[f64],
    orientation: Orientation,
) -> Result<Vec<(f64, bool)>, EvalError> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(EvalError::EmptyClass);
    }
    let mut all: Vec<(f64, bool)> = evidence(members, orientation)?
        .into_iter()
        .map(|e| (e, true))
        .chain(
            evidence(nonmembers, orientation)?
                .into_iter()
                .map(|e| (e, false)),
        )
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite"));
    Ok(all)
}

/// Groups of equal evidence as `(members, nonmembers)` counts, highest first.
fn tie_groups(ranked: &[(f64, bool)]) -> Vec<(u64, u64)> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < ranked.len() {
        let v = ranked[i].0;
        let (mut m, mut n) = (0u64, 0u64);
        while i < ranked.len() && ranked[i].0 == v {
            if ranked[i].1 {
                m += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        groups.push((m, n));
    }
    groups
}

/// Mann–Whitney AUC: the probability that a random member carries more
/// membership evidence than a random non-member, ties counting ½.
///
/// Pair counts are accumulated as doubled integers, so the result is the
/// exact ratio rounded once.
pub fn auc(
    members: &[f64],
    nonmembers: &[f64],
    orientation: Orientation,
) -> Result<f64, EvalError> {
    let ranked = ranked(members, nonmembers, orientation)?;
    // Sweep from the lowest evidence up, tracking non-members seen below.
    let mut below = 0u64;
    let mut doubled = 0u64;
    for (m, n) in tie_groups(&ranked).into_iter().rev() {
        doubled += m * (2 * below + n);
        below += n;
    }
    let pairs = 2 * members.len() as u64 * nonmembers.len() as u64;
    Ok(doubled as f64 / pairs as f64)
}

/// ROC points `(fpr, tpr)` from sweeping the threshold over every distinct
/// score, starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_curve(
    members: &[f64],
    nonmembers: &[f64],
    orientation: Orientation,
) -> Result<Vec<(f64, f64)>, EvalError> {
    let ranked = ranked(members, nonmembers, orientation)?;
    let (nm, nn) = (members.len() as f64, nonmembers.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (m, n) in tie_groups(&ranked) {
        tp += m;
        fp += n;
        points.push((fp as f64 / nn, tp as f64 / nm));
    }
    Ok(points)
}

/// Trapezoidal area under ROC points.
pub fn roc_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Largest TPR among realized thresholds whose FPR does not exceed
/// `fpr_target`. No interpolation between ROC points.
pub fn tpr_at_fpr(roc: &[(f64, f64)], fpr_target: f64) -> Result<f64, EvalError> {
    if !(0.0..=1.0).contains(&fpr_target) {
        return Err(EvalError::InvalidFprTarget(fpr_target));
    }
    if roc.is_empty() {
        return Err(EvalError::EmptyClass);
    }
    Ok(roc
        .iter()
        .filter(|(fpr, _)| *fpr <= fpr_target)
        .map(|(_, tpr)| *tpr)
        .fold(0.0, f64::max))
}

/// Evaluation of one metric over a scored dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub metric: MetricSpec,
    /// `None` when one class has no computable scores.
    pub auc: Option<f64>,
    pub tpr_at_fpr: Vec<(f64, Option<f64>)>,
    pub roc: Vec<(f64, f64)>,
    pub n_member: usize,
    pub n_nonmember: usize,
    pub n_uncomputable: usize,
}

/// Evaluates one metric. Uncomputable scores are counted and excluded;
/// `unknown` labels are ignored.
pub fn evaluate_metric(
    metric: &MetricSpec,
    scores: &[&ScoredSample],
    fpr_targets: &[f64],
) -> Result<EvalResult, EvalError> {
    let mut members = Vec::new();
    let mut nonmembers = Vec::new();
    let mut n_uncomputable = 0;
    for s in scores {
        match (s.score, s.label) {
            (None, _) => n_uncomputable += 1,
            (Some(v), Label::Member) => members.push(v),
            (Some(v), Label::Nonmember) => nonmembers.push(v),
            (Some(_), Label::Unknown) => {}
        }
    }
    let (auc_value, roc) = if members.is_empty() || nonmembers.is_empty() {
        (None, Vec::new())
    } else {
        let orientation = metric.orientation;
        (
            Some(auc(&members, &nonmembers, orientation)?),
            roc_curve(&members, &nonmembers, orientation)?,
        )
    };
    let tpr = fpr_targets
        .iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(EvalError::InvalidFprTarget(t));
            }
            Ok((
                t,
                if roc.is_empty() {
                    None
                } else {
                    Some(tpr_at_fpr(&roc, t)?)
                },
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalResult {
        metric: metric.clone(),
        auc: auc_value,
        tpr_at_fpr: tpr,
        roc,
        n_member: members.len(),
        n_nonmember: nonmembers.len(),
        n_uncomputable,
    })
}

fn metric_key(m: &MetricSpec) -> (String, Option<u64>, Option<u64>, String, Orientation) {
    (
        m.kind.name().to_string(),
        m.alpha.map(|a| a.value().to_bits()),
        m.k_percent.map(f64::to_bits),
        m.slice.to_string(),
        m.orientation,
    )
}

/// Groups scores by metric (first-appearance order) and evaluates each group.
pub fn evaluate(
    scores: &[ScoredSample],
    fpr_targets: &[f64],
) -> Result<Vec<EvalResult>, EvalError> {
    let mut index = HashMap::new();
    let mut groups: Vec<(MetricSpec, Vec<&ScoredSample>)> = Vec::new();
    for s in scores {
        let slot = *index.entry(metric_key(&s.metric)).or_insert_with(|| {
            groups.push((s.metric.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(s);
    }
    groups
        .par_iter()
        .map(|(m, members)| evaluate_metric(m, members, fpr_targets))
        .collect()
}

/// One line of the delimited report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub metric: MetricSpec,
    pub auc: Option<f64>,
    pub tpr_at_fpr: Vec<(f64, Option<f64>)>,
    pub n_member: usize,
    pub n_nonmember: usize,
    pub n_uncomputable: usize,
}

impl From<&EvalResult> for ReportRow {
    fn from(r: &EvalResult) -> Self {
        ReportRow {
            metric: r.metric.clone(),
            auc: r.auc,
            tpr_at_fpr: r.tpr_at_fpr.clone(),
            n_member: r.n_member,
            n_nonmember: r.n_nonmember,
            n_uncomputable: r.n_uncomputable,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReportLayout {
    /// Add one TPR grid per FPR target below the AUC grid.
    pub include_tpr: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub layout: ReportLayout,
    pub rows: Vec<ReportRow>,
}

/// Column name for a TPR target, e.g. `tpr_at_5fpr` for 0.05.
pub fn tpr_column(fpr_target: f64) -> String {
    let pct = (fpr_target * 100.0 * 1e9).round() / 1e9;
    format!("tpr_at_{}fpr", numfmt::shortest(pct))
}

/// Inverse of [`tpr_column`].
pub fn parse_tpr_column(name: &str) -> Option<f64> {
    let pct: f64 = name
        .strip_prefix("tpr_at_")?
        .strip_suffix("fpr")?
        .parse()
        .ok()?;
    Some(pct / 100.0)
}

pub fn build_report(results: &[EvalResult], layout: ReportLayout) -> Report {
    Report {
        layout,
        rows: results.iter().map(ReportRow::from).collect(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), numfmt::shortest)
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl Report {
    pub fn fpr_targets(&self) -> Vec<f64> {
        self.rows
            .first()
            .map(|r| r.tpr_at_fpr.iter().map(|t| t.0).collect())
            .unwrap_or_default()
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols: Vec<String> = [
            "metric",
            "alpha",
            "k_percent",
            "slice",
            "orientation",
            "auc",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend(self.fpr_targets().into_iter().map(tpr_column));
        cols.extend(["n_member", "n_nonmember", "n_uncomputable"].map(String::from));
        cols
    }

    /// Comma-separated report, one row per metric and slice.
    pub fn to_delimited(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for r in &self.rows {
            let m = &r.metric;
            let mut fields = vec![
                m.kind.name().to_string(),
                m.alpha.map(|a| a.to_string()).unwrap_or_default(),
                m.k_percent.map(numfmt::shortest).unwrap_or_default(),
                quote(&m.slice.to_string()),
                m.orientation.name().to_string(),
                cell(r.auc),
            ];
            fields.extend(r.tpr_at_fpr.iter().map(|t| cell(t.1)));
            fields.extend([r.n_member, r.n_nonmember, r.n_uncomputable].map(|n| n.to_string()));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Plain-text grid with metric rows and slice columns, three decimals.
    pub fn to_grid(&self) -> String {
        let mut out = String::new();
        self.grid_section(&mut out, "AUC", |r| r.auc);
        if self.layout.include_tpr {
            for (i, t) in self.fpr_targets().into_iter().enumerate() {
                out.push('\n');
                let title = format!(
                    "TPR@{}%FPR",
                    numfmt::shortest((t * 100.0 * 1e9).round() / 1e9)
                );
                self.grid_section(&mut out, &title, |r| r.tpr_at_fpr.get(i).and_then(|x| x.1));
            }
        }
        out
    }

    fn grid_section(
        &self,
        out: &mut String,
        title: &str,
        value: impl Fn(&ReportRow) -> Option<f64>,
    ) {
        let mut row_labels: Vec<String> = Vec::new();
        let mut columns: Vec<String> = Vec::new();
        let mut cells: HashMap<(String, String), String> = HashMap::new();
        for r in &self.rows {
            let mut label = r.metric.row_label();
            if r.metric.orientation != r.metric.kind.default_orientation() {
                label.push_str(&format!(" ({})", r.metric.orientation));
            }
            let col = r.metric.slice.to_string();
            if !row_labels.contains(&label) {
                row_labels.push(label.clone());
            }
            if !columns.contains(&col) {
                columns.push(col.clone());
            }
            let text = value(r).map_or_else(|| "N/A".to_string(), |v| format!("{v:.3}"));
            cells.insert((label, col), text);
        }
        let label_w = row_labels
            .iter()
            .map(String::len)
            .chain([title.len()])
            .max()
            .unwrap_or(0);
        let col_w: Vec<usize> = columns.iter().map(|c| c.len().max(5)).collect();

        let _ = write!(out, "{title:<label_w$}");
        for (c, w) in columns.iter().zip(&col_w) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        for label in &row_labels {
            let _ = write!(out, "{label:<label_w$}");
            for (c, w) in columns.iter().zip(&col_w) {
                let text = cells
                    .get(&(label.clone(), c.clone()))
                    .map_or("-", String::as_str);
                let _ = write!(out, "  {text:>w$}");
            }
            out.push('\n');
        }
    }
}
