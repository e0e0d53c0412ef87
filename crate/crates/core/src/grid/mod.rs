//! Word-pair tag grids: encoding gold entities and decoding predicted grids.
//!
//! For an entity with ordered words `w1 < ... < wk`:
//!
//! ```text
//!   NNW     at (w_m, w_{m+1})   upper triangle
//!   THW-l   at (w_k, w_1)       lower triangle or diagonal
//!   PNW     at (w_{m+1}, w_m)   extended mode, mirror of NNW
//!   HTW-l   at (w_1, w_k)       extended mode, mirror of THW
//! ```
//!
//! Mirror tags only fill cells that are still NONE after all NNW/THW tags
//! are written; decoding never reads them.

mod scheme;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_entities, Entity};
use crate::error::{Error, Result};

pub use scheme::{SchemeMode, Tag, TagScheme};

/// Default limit on NNW paths enumerated per THW cell.
pub const DEFAULT_PATH_CAP: usize = 1_000;

/// An `n x n` matrix of tag ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagGrid {
    pub n: usize,
    pub cells: Vec<u16>,
}

impl TagGrid {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            cells: vec![0; n * n],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.cells[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, id: u16) {
        self.cells[row * self.n + col] = id;
    }

    pub fn non_none(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// Drops PNW/HTW so the grid reads as a base-mode grid of `scheme`'s labels.
    pub fn base_projection(&self, scheme: &TagScheme) -> Result<(TagGrid, TagScheme)> {
        let base = TagScheme::new(SchemeMode::Base, scheme.labels.clone());
        let mut out = TagGrid::empty(self.n);
        for (k, &id) in self.cells.iter().enumerate() {
            out.cells[k] = match scheme.tag(id)? {
                t @ (Tag::Nnw | Tag::Thw(_)) => base.id(t),
                _ => 0,
            };
        }
        Ok((out, base))
    }

    /// Resets misplaced tags to NONE and returns how many were reset.
    pub fn repair(&mut self, scheme: &TagScheme) -> usize {
        let mut fixed = 0;
        for r in 0..self.n {
            for c in 0..self.n {
                let id = self.get(r, c);
                let ok = scheme
                    .tag(id)
                    .map(|t| TagScheme::placement_ok(t, r, c))
                    .unwrap_or(false);
                if !ok {
                    self.set(r, c, 0);
                    fixed += 1;
                }
            }
        }
        fixed
    }
}

/// Writes the gold relations of `entities` into an `n x n` grid.
pub fn encode(entities: &[Entity], n: usize, scheme: &TagScheme) -> Result<TagGrid> {
    let mut grid = TagGrid::empty(n);
    let mut thw_owner: HashMap<(usize, usize), &Entity> = HashMap::new();
    let mut words_of = Vec::with_capacity(entities.len());
    for e in entities {
        let words = e.token_indices();
        if e.tail() >= n {
            return Err(Error::InvalidEntity(format!("entity {e} outside sample of {n} tokens")));
        }
        let label = scheme
            .label_index(&e.label)
            .ok_or_else(|| Error::InvalidEntity(format!("label {:?} not in tag scheme", e.label)))?;
        for w in words.windows(2) {
            grid.set(w[0], w[1], scheme.id(Tag::Nnw));
        }
        let (head, tail) = (e.head(), e.tail());
        let id = scheme.id(Tag::Thw(label));
        match thw_owner.get(&(tail, head)) {
            Some(prev) if prev.label != e.label => {
                return Err(Error::EncodeConflict {
                    tail,
                    head,
                    first: prev.to_string(),
                    second: e.to_string(),
                })
            }
            Some(_) => {}
            None => {
                thw_owner.insert((tail, head), e);
            }
        }
        grid.set(tail, head, id);
        words_of.push((words, label));
    }
    if scheme.mode == SchemeMode::Extended {
        for (words, label) in &words_of {
            for w in words.windows(2) {
                if grid.get(w[1], w[0]) == 0 {
                    grid.set(w[1], w[0], scheme.id(Tag::Pnw));
                }
            }
            let (head, tail) = (words[0], words[words.len() - 1]);
            if head != tail && grid.get(head, tail) == 0 {
                grid.set(head, tail, scheme.id(Tag::Htw(*label)));
            }
        }
    }
    Ok(grid)
}

/// What to do when a THW cell has more NNW paths than the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnDegenerate {
    Fail,
    /// Skip the cell and count it in the diagnostics.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeDiagnostics {
    /// Tags found outside their triangle, read as NONE.
    pub misplaced: usize,
    /// Extended mode: NNW/THW cells whose mirror cell is NONE.
    pub missing_mirrors: usize,
    /// Extended mode: mirror tags with no matching NNW/THW.
    pub orphan_mirrors: usize,
    /// THW cells skipped under [`OnDegenerate::Skip`].
    pub degenerate_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub entities: Vec<Entity>,
    pub diagnostics: DecodeDiagnostics,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    pub path_cap: usize,
    pub on_degenerate: OnDegenerate,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            path_cap: DEFAULT_PATH_CAP,
            on_degenerate: OnDegenerate::Fail,
        }
    }
}

/// Decodes a grid with the default path cap; degenerate cells are errors.
pub fn decode(grid: &TagGrid, scheme: &TagScheme) -> Result<Decoded> {
    decode_with(grid, scheme, DecodeOptions::default())
}

/// Emits one entity per NNW path `head -> ... -> tail` for every THW cell
/// `(tail, head)`, ordered by `(head, tail, label)`.
pub fn decode_with(grid: &TagGrid, scheme: &TagScheme, opts: DecodeOptions) -> Result<Decoded> {
    let n = grid.n;
    let mut diag = DecodeDiagnostics::default();
    let mut tags = vec![Tag::None; n * n];
    for r in 0..n {
        for c in 0..n {
            let t = scheme.tag(grid.get(r, c))?;
            if TagScheme::placement_ok(t, r, c) {
                tags[r * n + c] = t;
            } else {
                diag.misplaced += 1;
            }
        }
    }
    let at = |r: usize, c: usize| tags[r * n + c];

    if scheme.mode == SchemeMode::Extended {
        for r in 0..n {
            for c in 0..n {
                match at(r, c) {
                    Tag::Nnw if at(c, r) == Tag::None => diag.missing_mirrors += 1,
                    Tag::Thw(_) if r != c && at(c, r) == Tag::None => diag.missing_mirrors += 1,
                    Tag::Pnw if at(c, r) != Tag::Nnw => diag.orphan_mirrors += 1,
                    Tag::Htw(k) if at(c, r) != Tag::Thw(k) => diag.orphan_mirrors += 1,
                    _ => {}
                }
            }
        }
    }

    // Successor lists along NNW edges, ascending.
    let next: Vec<Vec<usize>> = (0..n)
        .map(|i| ((i + 1)..n).filter(|&j| at(i, j) == Tag::Nnw).collect())
        .collect();

    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for t in 0..n {
        for h in 0..=t {
            if let Tag::Thw(k) = at(t, h) {
                cells.push((h, t, k));
            }
        }
    }
    cells.sort_by(|a, b| (a.0, a.1, &scheme.labels[a.2]).cmp(&(b.0, b.1, &scheme.labels[b.2])));

    let mut entities = Vec::new();
    for (head, tail, k) in cells {
        let mut paths = Vec::new();
        let mut stack = vec![head];
        let overflow = !walk(&next, tail, &mut stack, &mut paths, opts.path_cap);
        if overflow {
            match opts.on_degenerate {
                OnDegenerate::Fail => {
                    return Err(Error::DecodeDegenerate {
                        tail,
                        head,
                        cap: opts.path_cap,
                    })
                }
                OnDegenerate::Skip => {
                    diag.degenerate_cells += 1;
                    continue;
                }
            }
        }
        for p in paths {
            entities.push(Entity::from_indices(scheme.labels[k].clone(), &p)?);
        }
    }
    normalize_entities(&mut entities);
    Ok(Decoded {
        entities,
        diagnostics: diag,
    })
}

/// Depth-first enumeration of increasing NNW paths ending at `tail`.
/// Returns false once more than `cap` paths were found.
fn walk(next: &[Vec<usize>], tail: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, cap: usize) -> bool {
    let cur = *stack.last().expect("non-empty path");
    if cur == tail {
        out.push(stack.clone());
        return out.len() <= cap;
    }
    for &j in &next[cur] {
        if j > tail {
            break;
        }
        stack.push(j);
        let ok = walk(next, tail, stack, out, cap);
        stack.pop();
        if !ok {
            return false;
        }
    }
    true
}

/// Sparse grid record for line-delimited storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRecord {
    pub sample_id: String,
    pub n: usize,
    pub cells: Vec<(usize, usize, String)>,
}

impl GridRecord {
    pub fn from_grid(sample_id: impl Into<String>, grid: &TagGrid, scheme: &TagScheme) -> Result<Self> {
        let mut cells = Vec::new();
        for r in 0..grid.n {
            for c in 0..grid.n {
                let id = grid.get(r, c);
                if id != 0 {
                    cells.push((r, c, scheme.name(scheme.tag(id)?)));
                }
            }
        }
        Ok(Self {
            sample_id: sample_id.into(),
            n: grid.n,
            cells,
        })
    }

    pub fn to_grid(&self, scheme: &TagScheme) -> Result<TagGrid> {
        let mut g = TagGrid::empty(self.n);
        for (r, c, name) in &self.cells {
            if *r >= self.n || *c >= self.n {
                return Err(Error::Consistency(format!(
                    "grid {}: cell ({r}, {c}) outside {}x{}",
                    self.sample_id, self.n, self.n
                )));
            }
            g.set(*r, *c, scheme.id(scheme.parse_name(name)?));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(label: &str, idx: &[usize]) -> Entity {
        Entity::from_indices(label, idx).unwrap()
    }

    #[test]
    fn stomach_pain_example() {
        // "I do experience stomach pain from time to time"
        let scheme = TagScheme::base(["ADR"]);
        let e = ent("ADR", &[3, 4]);
        let g = encode(std::slice::from_ref(&e), 10, &scheme).unwrap();
        assert_eq!(scheme.tag(g.get(3, 4)).unwrap(), Tag::Nnw);
        assert_eq!(scheme.tag(g.get(4, 3)).unwrap(), Tag::Thw(0));
        assert_eq!(g.non_none(), 2);
        assert_eq!(decode(&g, &scheme).unwrap().entities, vec![e]);
    }

    #[test]
    fn empty_grid() {
        let scheme = TagScheme::base(["ADR"]);
        let g = encode(&[], 5, &scheme).unwrap();
        assert_eq!(g.non_none(), 0);
        assert!(decode(&g, &scheme).unwrap().entities.is_empty());
    }

    #[test]
    fn discontinuous_entity() {
        let scheme = TagScheme::base(["ADR"]);
        let e = ent("ADR", &[2, 3, 7]);
        let g = encode(std::slice::from_ref(&e), 9, &scheme).unwrap();
        assert_eq!(scheme.tag(g.get(2, 3)).unwrap(), Tag::Nnw);
        assert_eq!(scheme.tag(g.get(3, 7)).unwrap(), Tag::Nnw);
        assert_eq!(scheme.tag(g.get(7, 2)).unwrap(), Tag::Thw(0));
        assert_eq!(g.non_none(), 3);
        assert_eq!(decode(&g, &scheme).unwrap().entities, vec![e]);
    }

    #[test]
    fn single_word_on_diagonal() {
        let scheme = TagScheme::extended(["Drug"]);
        let e = ent("Drug", &[4]);
        let g = encode(std::slice::from_ref(&e), 6, &scheme).unwrap();
        assert_eq!(scheme.tag(g.get(4, 4)).unwrap(), Tag::Thw(0));
        assert_eq!(g.non_none(), 1);
        assert_eq!(decode(&g, &scheme).unwrap().entities, vec![e]);
    }

    #[test]
    fn thw_label_conflict_is_loud() {
        let scheme = TagScheme::base(["A", "B"]);
        let err = encode(&[ent("A", &[1, 3]), ent("B", &[1, 2, 3])], 5, &scheme).unwrap_err();
        match err {
            Error::EncodeConflict {
                tail,
                head,
                first,
                second,
            } => {
                assert_eq!((tail, head), (3, 1));
                assert!(first.starts_with("A(") && second.starts_with("B("));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn shared_head_tail_emits_all_paths() {
        let scheme = TagScheme::base(["A"]);
        let mut es = vec![ent("A", &[0, 1, 4]), ent("A", &[0, 2, 4])];
        normalize_entities(&mut es);
        let g = encode(&es, 5, &scheme).unwrap();
        let d = decode(&g, &scheme).unwrap().entities;
        assert_eq!(d, es);
    }

    #[test]
    fn extended_mirrors_and_projection() {
        let scheme = TagScheme::extended(["A"]);
        let es = vec![ent("A", &[0, 2, 5]), ent("A", &[3])];
        let g = encode(&es, 6, &scheme).unwrap();
        assert_eq!(scheme.tag(g.get(2, 0)).unwrap(), Tag::Pnw);
        assert_eq!(scheme.tag(g.get(5, 2)).unwrap(), Tag::Pnw);
        assert_eq!(scheme.tag(g.get(0, 5)).unwrap(), Tag::Htw(0));
        let d = decode(&g, &scheme).unwrap();
        assert_eq!(d.entities, es);
        assert_eq!(d.diagnostics.orphan_mirrors, 0);
        let (pg, ps) = g.base_projection(&scheme).unwrap();
        assert_eq!(decode(&pg, &ps).unwrap().entities, es);
    }

    #[test]
    fn two_word_mirror_collision_keeps_boundary_tags() {
        // NNW (1,2) and THW (2,1) occupy both mirror cells.
        let scheme = TagScheme::extended(["A"]);
        let e = ent("A", &[1, 2]);
        let g = encode(std::slice::from_ref(&e), 4, &scheme).unwrap();
        assert_eq!(scheme.tag(g.get(1, 2)).unwrap(), Tag::Nnw);
        assert_eq!(scheme.tag(g.get(2, 1)).unwrap(), Tag::Thw(0));
        assert_eq!(decode(&g, &scheme).unwrap().entities, vec![e]);
    }

    #[test]
    fn misplaced_tags_are_ignored_and_counted() {
        let scheme = TagScheme::base(["A"]);
        let mut g = TagGrid::empty(4);
        g.set(2, 1, scheme.id(Tag::Nnw)); // NNW below the diagonal
        g.set(0, 3, scheme.id(Tag::Thw(0))); // THW above the diagonal
        let d = decode(&g, &scheme).unwrap();
        assert!(d.entities.is_empty());
        assert_eq!(d.diagnostics.misplaced, 2);
        assert_eq!(g.clone().repair(&scheme), 2);
    }

    #[test]
    fn path_explosion_guard() {
        let scheme = TagScheme::base(["A"]);
        let n = 16;
        let mut g = TagGrid::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                g.set(i, j, scheme.id(Tag::Nnw));
            }
        }
        g.set(n - 1, 0, scheme.id(Tag::Thw(0)));
        let err = decode(&g, &scheme).unwrap_err();
        assert!(matches!(
            err,
            Error::DecodeDegenerate {
                tail: 15,
                head: 0,
                cap: 1000
            }
        ));
        let opts = DecodeOptions {
            on_degenerate: OnDegenerate::Skip,
            ..Default::default()
        };
        let d = decode_with(&g, &scheme, opts).unwrap();
        assert!(d.entities.is_empty());
        assert_eq!(d.diagnostics.degenerate_cells, 1);
    }

    #[test]
    fn sparse_record_round_trip() {
        let scheme = TagScheme::extended(["ADR", "Drug"]);
        let g = encode(&[ent("ADR", &[0, 3]), ent("Drug", &[2])], 5, &scheme).unwrap();
        let rec = GridRecord::from_grid("s1", &g, &scheme).unwrap();
        assert!(rec.cells.contains(&(3, 0, "THW-ADR".to_string())));
        assert_eq!(rec.to_grid(&scheme).unwrap(), g);
    }
}
