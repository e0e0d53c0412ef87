use proptest::prelude::*;
use seda_core::corpus::Entity;
use seda_core::metrics::{ebf, ebf_with, exact_prf, BoundaryMode, DocEntities, EbfOptions, EbfVariant};

fn entities(n: usize) -> impl Strategy<Value = Vec<Entity>> {
    let one = (0..2usize, prop::collection::btree_set(0..n, 1..=3)).prop_map(|(l, idx)| {
        let idx: Vec<usize> = idx.into_iter().collect();
        Entity::from_indices(["ADR", "Drug"][l], &idx).unwrap()
    });
    prop::collection::vec(one, 0..6)
}

/// Prediction and gold documents over the same ids.
fn corpus() -> impl Strategy<Value = (Vec<DocEntities>, Vec<DocEntities>)> {
    prop::collection::vec((entities(8), entities(8)), 1..5).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(k, (p, g))| {
                (
                    DocEntities::new(format!("d{k}"), p),
                    DocEntities::new(format!("d{k}"), g),
                )
            })
            .unzip()
    })
}

/// Maximum one-to-one matching between equal keys, by augmenting paths.
fn max_matching(pred: &[usize], gold: &[usize]) -> usize {
    fn augment(p: usize, pred: &[usize], gold: &[usize], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for g in 0..gold.len() {
            if pred[p] == gold[g] && !seen[g] {
                seen[g] = true;
                if owner[g].is_none() || augment(owner[g].unwrap(), pred, gold, owner, seen) {
                    owner[g] = Some(p);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; gold.len()];
    (0..pred.len())
        .filter(|&p| augment(p, pred, gold, &mut owner, &mut vec![false; gold.len()]))
        .count()
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn scores(m: f64, np: usize, ng: usize) -> (f64, f64, f64) {
    let (p, r) = (ratio(m, np as f64), ratio(m, ng as f64));
    (p, r, if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

fn tails(d: &DocEntities) -> Vec<usize> {
    d.entities.iter().map(|e| *e.token_indices().last().unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matched_variant_equals_one_to_one_tail_matching((pred, gold) in corpus()) {
        let m: usize = pred.iter().zip(&gold).map(|(p, g)| max_matching(&tails(p), &tails(g))).sum();
        let np = pred.iter().map(|d| d.entities.len()).sum();
        let ng = gold.iter().map(|d| d.entities.len()).sum();
        let got = ebf(&pred, &gold, EbfVariant::Matched).unwrap();
        prop_assert_eq!((got.ebp, got.ebr, got.ebf), scores(m as f64, np, ng));
        prop_assert!(got.ebp <= 1.0 && got.ebr <= 1.0);
    }

    #[test]
    fn literal_variant_equals_double_sum((pred, gold) in corpus()) {
        let mut m = 0usize;
        for (p, g) in pred.iter().zip(&gold) {
            for a in tails(p) {
                for b in tails(g) {
                    m += usize::from(a == b);
                }
            }
        }
        let np = pred.iter().map(|d| d.entities.len()).sum();
        let ng = gold.iter().map(|d| d.entities.len()).sum();
        let got = ebf(&pred, &gold, EbfVariant::Literal).unwrap();
        prop_assert_eq!((got.ebp, got.ebr, got.ebf), scores(m as f64, np, ng));
        prop_assert_eq!(got.matches, m as u64);
    }

    #[test]
    fn exact_scores_equal_set_intersection((pred, gold) in corpus()) {
        let m: usize = pred
            .iter()
            .zip(&gold)
            .map(|(p, g)| p.entities.iter().filter(|e| g.entities.contains(e)).count())
            .sum();
        let np = pred.iter().map(|d| d.entities.len()).sum();
        let ng = gold.iter().map(|d| d.entities.len()).sum();
        let got = exact_prf(&pred, &gold).unwrap();
        prop_assert_eq!((got.precision, got.recall, got.f1), scores(m as f64, np, ng));
        // an exact match always matches at the tail too
        let b = ebf(&pred, &gold, EbfVariant::Matched).unwrap();
        prop_assert!(b.matches as usize >= got.matched);
        let self_recall = ebf(&gold, &gold, EbfVariant::Matched).unwrap().ebr;
        prop_assert_eq!(self_recall, if ng > 0 { 1.0 } else { 0.0 });
    }

    #[test]
    fn head_tail_mode_is_stricter_than_tail_mode((pred, gold) in corpus()) {
        let tail = ebf(&pred, &gold, EbfVariant::Matched).unwrap();
        let both = ebf_with(&pred, &gold, &EbfOptions { boundary: BoundaryMode::HeadTail, ..Default::default() }).unwrap();
        prop_assert!(both.matches <= tail.matches);
    }
}
