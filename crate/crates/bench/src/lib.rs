//! Input builders shared by the benchmarks.

use miaudit_core::{Label, ScoredSample};

/// Log-probabilities of a softmax over `vocab` logits `sin(i)`, scaled.
pub fn smooth_logp(vocab: usize, scale: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..vocab).map(|i| scale * (i as f64).sin()).collect();
    let lse = miaudit_core::entropy::logsumexp(&logits);
    logits.into_iter().map(|l| l - lse).collect()
}

/// `n` scored samples with alternating labels and scores in a small range,
/// so many ties occur.
pub fn tied_scores(n: usize) -> Vec<ScoredSample> {
    let metric = miaudit_core::MetricSpec::new(
        miaudit_core::MetricKind::Perplexity,
        None,
        None,
        miaudit_core::SliceSpec::single("desp"),
    )
    .expect("valid metric");
    (0..n)
        .map(|i| ScoredSample {
            sample_id: format!("s{i}"),
            label: if i % 2 == 0 {
                Label::Member
            } else {
                Label::Nonmember
            },
            metric: metric.clone(),
            score: Some(((i * 7919) % 97) as f64),
        })
        .collect()
}
