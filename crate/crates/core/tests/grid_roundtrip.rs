use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use seda_core::corpus::{normalize_entities, Entity};
use seda_core::grid::{decode, encode, GridRecord, SchemeMode, TagGrid, TagScheme};
use seda_core::Error;

const LABELS: [&str; 2] = ["ADR", "Drug"];

/// Entities implied by the raw relations: every NNW path from a THW head to
/// its tail, found by exhaustive search over the link set.
fn oracle_decode(entities: &[Entity]) -> Vec<Entity> {
    let mut links: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut closers: BTreeSet<(usize, usize, String)> = BTreeSet::new();
    for e in entities {
        let w = e.token_indices();
        for p in w.windows(2) {
            links.entry(p[0]).or_default().insert(p[1]);
        }
        closers.insert((w[0], w[w.len() - 1], e.label.clone()));
    }
    let mut out = Vec::new();
    for (head, tail, label) in &closers {
        let mut stack = vec![vec![*head]];
        while let Some(path) = stack.pop() {
            let last = *path.last().unwrap();
            if last == *tail {
                out.push(Entity::from_indices(label.clone(), &path).unwrap());
                continue;
            }
            for &next in links.get(&last).into_iter().flatten() {
                if next <= *tail {
                    let mut p = path.clone();
                    p.push(next);
                    stack.push(p);
                }
            }
        }
    }
    normalize_entities(&mut out);
    out
}

fn entity_sets() -> impl Strategy<Value = (usize, Vec<Entity>)> {
    (4usize..=30).prop_flat_map(|n| {
        let one = (0..2usize, prop::collection::btree_set(0..n, 1..=4)).prop_map(|(l, idx)| {
            let idx: Vec<usize> = idx.into_iter().collect();
            Entity::from_indices(LABELS[l], &idx).unwrap()
        });
        (Just(n), prop::collection::vec(one, 0..=4))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn decode_reads_back_exactly_the_implied_entities((n, entities) in entity_sets()) {
        for scheme in [TagScheme::base(LABELS), TagScheme::extended(LABELS)] {
            match encode(&entities, n, &scheme) {
                Ok(grid) => {
                    let decoded = decode(&grid, &scheme).unwrap().entities;
                    prop_assert_eq!(&decoded, &oracle_decode(&entities));
                    let mut norm = entities.clone();
                    normalize_entities(&mut norm);
                    if oracle_decode(&entities) == norm {
                        prop_assert_eq!(decoded, norm);
                    }
                }
                Err(Error::EncodeConflict { tail, head, .. }) => {
                    let labels: BTreeSet<&str> = entities
                        .iter()
                        .filter(|e| e.head() == head && e.tail() == tail)
                        .map(|e| e.label.as_str())
                        .collect();
                    prop_assert!(labels.len() > 1);
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }

    #[test]
    fn extended_grid_projects_onto_base_grid((n, entities) in entity_sets()) {
        let ext = TagScheme::extended(LABELS);
        if let Ok(grid) = encode(&entities, n, &ext) {
            let (projected, base) = grid.base_projection(&ext).unwrap();
            prop_assert_eq!(projected, encode(&entities, n, &base).unwrap());
        }
    }

    #[test]
    fn grid_records_round_trip_and_repair_keeps_valid_grids((n, entities) in entity_sets()) {
        for scheme in [TagScheme::base(LABELS), TagScheme::extended(LABELS)] {
            if let Ok(grid) = encode(&entities, n, &scheme) {
                let rec = GridRecord::from_grid("s", &grid, &scheme).unwrap();
                prop_assert_eq!(&rec.to_grid(&scheme).unwrap(), &grid);
                let mut fixed = grid.clone();
                prop_assert_eq!(fixed.repair(&scheme), 0);
                prop_assert_eq!(fixed, grid);
            }
        }
    }
}

#[test]
fn conflicting_labels_on_one_cell_are_rejected() {
    let a = Entity::from_indices("ADR", &[1, 3]).unwrap();
    let b = Entity::from_indices("Drug", &[1, 2, 3]).unwrap();
    for mode in [SchemeMode::Base, SchemeMode::Extended] {
        let scheme = TagScheme::new(mode, LABELS.iter().map(|s| s.to_string()).collect());
        let err = encode(&[a.clone(), b.clone()], 5, &scheme).unwrap_err();
        assert!(matches!(err, Error::EncodeConflict { tail: 3, head: 1, .. }));
    }
}

#[test]
fn misplaced_tags_are_repaired() {
    let scheme = TagScheme::base(LABELS);
    let mut grid = TagGrid::empty(3);
    grid.set(2, 0, 1); // NNW below the diagonal
    grid.set(0, 2, 2); // THW above it
    assert_eq!(grid.repair(&scheme), 2);
    assert_eq!(grid, TagGrid::empty(3));
}
