//! Cross-module property tests.

use crate::entropy::{linearized_renyi, modified_renyi, renyi_entropy};
use crate::eval::{auc, roc_area, roc_curve, tpr_at_fpr};
use crate::metrics::{max_renyi_k, min_renyi_k, select_k_extreme, ExtremeMode};
use crate::records::{self, Dataset};
use crate::toylab::{self, LabConfig};
use crate::{Alpha, Orientation};
use proptest::prelude::*;

fn logp_from(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total).ln()).collect()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, 2..64)
}

proptest! {
    #[test]
    fn renyi_is_non_negative_and_bounded(w in weights(), alpha in 0.05f64..20.0) {
        let logp = logp_from(&w);
        let h = renyi_entropy(&logp, Alpha::new(alpha).unwrap()).unwrap();
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (w.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn renyi_decreases_in_alpha(w in weights(), a1 in 0.05f64..10.0, gap in 0.01f64..10.0) {
        let logp = logp_from(&w);
        let lo = renyi_entropy(&logp, Alpha::new(a1).unwrap()).unwrap();
        let hi = renyi_entropy(&logp, Alpha::new(a1 + gap).unwrap()).unwrap();
        prop_assert!(hi <= lo + 1e-12);
        prop_assert!(renyi_entropy(&logp, Alpha::INFINITY).unwrap() <= hi + 1e-12);
    }

    #[test]
    fn linearized_identity(w in weights(), alpha in prop::sample::select(vec![0.5, 2.0])) {
        let logp = logp_from(&w);
        let a = Alpha::new(alpha).unwrap();
        let lin = linearized_renyi(&logp, a).unwrap();
        let back = (1.0 + (1.0 - alpha) * lin).ln() / (1.0 - alpha);
        prop_assert!((back - renyi_entropy(&logp, a).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn modified_form_decreases_as_mass_moves_to_target(
        w in prop::collection::vec(0.01f64..1.0, 2..32),
        y_seed in any::<usize>(),
        j_seed in any::<usize>(),
        alpha in prop::sample::select(vec![0.5, 1.0, 2.0]),
    ) {
        let total: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let y = y_seed % p.len();
        let mut j = j_seed % p.len();
        if j == y {
            j = (j + 1) % p.len();
        }
        prop_assume!(p[j] > 2e-3);
        let a = Alpha::new(alpha).unwrap();
        let before = modified_renyi(&p.iter().map(|x| x.ln()).collect::<Vec<_>>(), y, a).unwrap();
        p[j] -= 1e-3;
        p[y] += 1e-3;
        let after = modified_renyi(&p.iter().map(|x| x.ln()).collect::<Vec<_>>(), y, a).unwrap();
        prop_assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn min_renyi_never_exceeds_max_renyi(
        rows in prop::collection::vec(weights(), 1..12),
        k in 0.0f64..=100.0,
    ) {
        let logps: Vec<Vec<f64>> = rows.iter().map(|w| logp_from(w)).collect();
        let refs: Vec<&[f64]> = logps.iter().map(Vec::as_slice).collect();
        let a = Alpha::new(2.0).unwrap();
        prop_assert!(min_renyi_k(&refs, a, k).unwrap() <= max_renyi_k(&refs, a, k).unwrap() + 1e-12);
        let all_max = max_renyi_k(&refs, a, 100.0).unwrap();
        let all_min = min_renyi_k(&refs, a, 100.0).unwrap();
        prop_assert!((all_max - all_min).abs() <= 1e-12);
    }

    #[test]
    fn k_selection_is_order_free(mut v in prop::collection::vec(-50.0f64..50.0, 1..40), k in 0.0f64..=100.0) {
        let a = select_k_extreme(&v, k, ExtremeMode::Largest).unwrap();
        v.reverse();
        prop_assert_eq!(a, select_k_extreme(&v, k, ExtremeMode::Largest).unwrap());
    }

    #[test]
    fn auc_invariances(
        members in prop::collection::vec(-5i32..5, 1..30),
        nonmembers in prop::collection::vec(-5i32..5, 1..30),
    ) {
        let m: Vec<f64> = members.iter().map(|&x| x as f64).collect();
        let n: Vec<f64> = nonmembers.iter().map(|&x| x as f64).collect();
        let high = auc(&m, &n, Orientation::MemberHigh).unwrap();
        let low = auc(&m, &n, Orientation::MemberLow).unwrap();
        prop_assert!((high + low - 1.0).abs() <= 1e-12);
        // strictly increasing transforms keep the ranking
        let tm: Vec<f64> = m.iter().map(|x| (x / 3.0).exp() * 7.0 - 2.0).collect();
        let tn: Vec<f64> = n.iter().map(|x| (x / 3.0).exp() * 7.0 - 2.0).collect();
        prop_assert_eq!(high, auc(&tm, &tn, Orientation::MemberHigh).unwrap());
        // swapping the classes mirrors the value
        prop_assert!((auc(&n, &m, Orientation::MemberHigh).unwrap() - low).abs() <= 1e-12);

        let roc = roc_curve(&m, &n, Orientation::MemberHigh).unwrap();
        prop_assert!((roc_area(&roc) - high).abs() <= 1e-12);
        prop_assert!(roc.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
        prop_assert_eq!(tpr_at_fpr(&roc, 1.0).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn toylab_records_round_trip(seed in any::<u64>(), order in 1usize..5) {
        let cfg = LabConfig {
            n_member: 4,
            n_nonmember: 4,
            string_length: 10,
            ngram_order: order,
            seed,
            ..LabConfig::default()
        };
        let (m, n) = toylab::gen_corpus(&cfg).unwrap();
        let model = toylab::fit_ngram(&m, cfg.alphabet_size, order, cfg.smoothing_beta);
        let d: Dataset = toylab::emit_dataset(&model, &cfg, &m, &n);
        let text = d.to_jsonl();
        let back = records::parse_str(&text).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(back.to_jsonl(), text);
    }
}
