//! Exact-match and entity-boundary scoring.
//!
//! Boundary scores compare only the final token of each entity (optionally
//! head and tail). Per document, `G` holds the tails of the gold entities
//! and `P` the tails of the predictions; a pair scores 1 when the tails are
//! equal. The *literal* variant sums that indicator over every (p, g) pair;
//! the *matched* variant pairs tails one-to-one, so it never exceeds 1.
//! Both are micro-averaged: matches are summed over all documents and
//! divided by the total prediction count (EBP) or gold count (EBR).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_entities, Document, Entity};
use crate::error::{Error, Result};

/// The entities of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocEntities {
    pub id: String,
    pub entities: Vec<Entity>,
    /// Document tokens, needed only for surface-string boundary keys.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<String>,
}

impl DocEntities {
    pub fn new(id: impl Into<String>, mut entities: Vec<Entity>) -> Self {
        normalize_entities(&mut entities);
        Self {
            id: id.into(),
            entities,
            tokens: Vec::new(),
        }
    }

    pub fn gold_of(doc: &Document) -> Self {
        let mut d = Self::new(doc.id.clone(), doc.gold.clone());
        d.tokens = doc.tokens.iter().map(|t| t.text.clone()).collect();
        d
    }
}

pub fn gold_entities(docs: &[Document]) -> Vec<DocEntities> {
    docs.iter().map(DocEntities::gold_of).collect()
}

/// Safe ratio: empty denominators give 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
    /// Set when a denominator was zero and the score defaulted to 0.
    pub empty_denominator: bool,
}

impl Prf {
    pub fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let precision = ratio(matched as f64, predicted as f64);
        let recall = ratio(matched as f64, gold as f64);
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
            gold,
            predicted,
            matched,
            empty_denominator: gold == 0 || predicted == 0,
        }
    }
}

/// Pairs documents by id. Both sides must hold exactly the same ids.
fn align<'a>(pred: &'a [DocEntities], gold: &'a [DocEntities]) -> Result<Vec<(&'a DocEntities, &'a DocEntities)>> {
    let mut by_id: BTreeMap<&str, &DocEntities> = BTreeMap::new();
    for p in pred {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Alignment(format!("duplicate prediction document {}", p.id)));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(gold.len());
    for g in gold {
        if !seen.insert(g.id.as_str()) {
            return Err(Error::Alignment(format!("duplicate gold document {}", g.id)));
        }
        let p = by_id
            .get(g.id.as_str())
            .ok_or_else(|| Error::Alignment(format!("no predictions for document {}", g.id)))?;
        out.push((*p, g));
    }
    if let Some(extra) = by_id.keys().find(|k| !seen.contains(*k)) {
        return Err(Error::Alignment(format!("predictions for unknown document {extra}")));
    }
    Ok(out)
}

fn entity_set(es: &[Entity]) -> BTreeSet<&Entity> {
    es.iter().collect()
}

/// Micro-averaged exact-match scores: label and full span set must agree.
pub fn exact_prf(pred: &[DocEntities], gold: &[DocEntities]) -> Result<Prf> {
    let (mut g, mut p, mut m) = (0, 0, 0);
    for (pd, gd) in align(pred, gold)? {
        let ps = entity_set(&pd.entities);
        let gs = entity_set(&gd.entities);
        g += gs.len();
        p += ps.len();
        m += ps.intersection(&gs).count();
    }
    Ok(Prf::from_counts(g, p, m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EbfVariant {
    /// Sum of the match indicator over every prediction/gold pair.
    Literal,
    /// One-to-one tail matching.
    #[default]
    Matched,
}

impl std::str::FromStr for EbfVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "matched" => Ok(Self::Matched),
            other => Err(Error::Config(format!("unknown EBF variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    Tail,
    /// Head and tail must both agree.
    HeadTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKey {
    /// Token index within the document.
    #[default]
    Index,
    /// Surface string of the boundary token(s).
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EbfOptions {
    pub variant: EbfVariant,
    pub boundary: BoundaryMode,
    pub key: BoundaryKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Ebf {
    pub ebp: f64,
    pub ebr: f64,
    pub ebf: f64,
    /// Summed match score (pair count for the literal variant).
    pub matches: u64,
    pub predicted: usize,
    pub gold: usize,
    pub empty_denominator: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Key {
    Index(usize, usize),
    Surface(String, String),
}

fn boundary_keys(doc: &DocEntities, tokens: &[String], opts: &EbfOptions) -> Result<HashMap<Key, u64>> {
    let mut counts = HashMap::new();
    for e in &doc.entities {
        let head = match opts.boundary {
            BoundaryMode::Tail => None,
            BoundaryMode::HeadTail => Some(e.head()),
        };
        let key = match opts.key {
            BoundaryKey::Index => Key::Index(head.unwrap_or(usize::MAX), e.tail()),
            BoundaryKey::Surface => {
                let word = |i: usize| {
                    tokens.get(i).cloned().ok_or_else(|| {
                        Error::Config(format!(
                            "document {}: surface keys need tokens covering index {i}",
                            doc.id
                        ))
                    })
                };
                Key::Surface(head.map(word).transpose()?.unwrap_or_default(), word(e.tail())?)
            }
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Boundary scores with default options (tail, token index) and the given variant.
pub fn ebf(pred: &[DocEntities], gold: &[DocEntities], variant: EbfVariant) -> Result<Ebf> {
    ebf_with(
        pred,
        gold,
        &EbfOptions {
            variant,
            ..Default::default()
        },
    )
}

pub fn ebf_with(pred: &[DocEntities], gold: &[DocEntities], opts: &EbfOptions) -> Result<Ebf> {
    let (mut matches, mut np, mut ng) = (0u64, 0usize, 0usize);
    for (pd, gd) in align(pred, gold)? {
        let pd = DocEntities::new(pd.id.clone(), pd.entities.clone());
        let gdn = DocEntities::new(gd.id.clone(), gd.entities.clone());
        let pk = boundary_keys(&pd, &gd.tokens, opts)?;
        let gk = boundary_keys(&gdn, &gd.tokens, opts)?;
        np += pd.entities.len();
        ng += gdn.entities.len();
        for (k, &cp) in &pk {
            if let Some(&cg) = gk.get(k) {
                matches += match opts.variant {
                    EbfVariant::Literal => cp * cg,
                    EbfVariant::Matched => cp.min(cg),
                };
            }
        }
    }
    let ebp = ratio(matches as f64, np as f64);
    let ebr = ratio(matches as f64, ng as f64);
    Ok(Ebf {
        ebp,
        ebr,
        ebf: harmonic(ebp, ebr),
        matches,
        predicted: np,
        gold: ng,
        empty_denominator: np == 0 || ng == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Discontinuous,
    CrossSentence,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::Discontinuous => "discontinuous",
            Subset::CrossSentence => "cross_sentence",
        }
    }

    pub fn holds(self, e: &Entity, sentence_breaks: &[usize]) -> bool {
        match self {
            Subset::Discontinuous => e.is_discontinuous(),
            Subset::CrossSentence => e.is_cross_sentence(sentence_breaks),
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discontinuous" => Ok(Self::Discontinuous),
            "cross_sentence" => Ok(Self::CrossSentence),
            other => Err(Error::Config(format!("unknown subset {other:?}"))),
        }
    }
}

pub fn subset_filter(entities: &[Entity], subset: Subset, sentence_breaks: &[usize]) -> Vec<Entity> {
    entities
        .iter()
        .filter(|e| subset.holds(e, sentence_breaks))
        .cloned()
        .collect()
}

/// Restricts predictions and gold to one subset, using each gold
/// document's sentence breaks.
pub fn restrict(pred: &[DocEntities], gold: &[Document], subset: Subset) -> (Vec<DocEntities>, Vec<DocEntities>) {
    let breaks: HashMap<&str, &[usize]> = gold
        .iter()
        .map(|d| (d.id.as_str(), d.sentence_breaks.as_slice()))
        .collect();
    let p = pred
        .iter()
        .map(|d| {
            let b = breaks.get(d.id.as_str()).copied().unwrap_or(&[]);
            DocEntities {
                id: d.id.clone(),
                entities: subset_filter(&d.entities, subset, b),
                tokens: d.tokens.clone(),
            }
        })
        .collect();
    let g = gold
        .iter()
        .map(|d| {
            let mut de = DocEntities::gold_of(d);
            de.entities = subset_filter(&d.gold, subset, &d.sentence_breaks);
            de
        })
        .collect();
    (p, g)
}

/// Drops cross-sentence gold entities, reproducing the legacy evaluation
/// protocol where such entities never reach the scorer.
pub fn unified_filter(gold: &[Document]) -> Vec<Document> {
    gold.iter()
        .map(|d| {
            let mut d = d.clone();
            let breaks = d.sentence_breaks.clone();
            d.gold.retain(|e| !e.is_cross_sentence(&breaks));
            d
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub subset: Option<Subset>,
    pub unified: bool,
    pub ebf: EbfOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Scope of the headline scores: `all` or the requested subset.
    pub scope: String,
    pub unified: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ebp: f64,
    pub ebr: f64,
    pub ebf: f64,
    pub ebf_variant: EbfVariant,
    pub counts: Prf,
    pub boundary: Ebf,
    /// Exact-match scores for `all`, `discontinuous` and `cross_sentence`.
    pub subsets: BTreeMap<String, Prf>,
}

/// Full report: headline exact and boundary scores plus subset breakdowns.
pub fn evaluate(pred: &[DocEntities], gold: &[Document], opts: &EvalOptions) -> Result<EvalReport> {
    let gold_docs = if opts.unified {
        unified_filter(gold)
    } else {
        gold.to_vec()
    };
    let mut subsets = BTreeMap::new();
    subsets.insert("all".to_string(), exact_prf(pred, &gold_entities(&gold_docs))?);
    for s in [Subset::Discontinuous, Subset::CrossSentence] {
        let (p, g) = restrict(pred, &gold_docs, s);
        subsets.insert(s.name().to_string(), exact_prf(&p, &g)?);
    }
    let (p, g) = match opts.subset {
        Some(s) => restrict(pred, &gold_docs, s),
        None => (pred.to_vec(), gold_entities(&gold_docs)),
    };
    let counts = exact_prf(&p, &g)?;
    let boundary = ebf_with(&p, &g, &opts.ebf)?;
    Ok(EvalReport {
        scope: opts.subset.map_or("all", Subset::name).to_string(),
        unified: opts.unified,
        precision: counts.precision,
        recall: counts.recall,
        f1: counts.f1,
        ebp: boundary.ebp,
        ebr: boundary.ebr,
        ebf: boundary.ebf,
        ebf_variant: opts.ebf.variant,
        counts,
        boundary,
        subsets,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scope: {}{}   ebf variant: {:?}",
            self.scope,
            if self.unified { " (unified)" } else { "" },
            self.ebf_variant
        );
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}",
            "", "P", "R", "F1", "gold", "pred", "match"
        );
        let row = |s: &mut String, name: &str, p: &Prf| {
            let _ = writeln!(
                s,
                "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7} {:>7}",
                name, p.precision, p.recall, p.f1, p.gold, p.predicted, p.matched
            );
        };
        row(&mut s, "exact", &self.counts);
        let _ = writeln!(
            s,
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7} {:>7}",
            "boundary",
            self.ebp,
            self.ebr,
            self.ebf,
            self.boundary.gold,
            self.boundary.predicted,
            self.boundary.matches
        );
        for (name, p) in &self.subsets {
            row(&mut s, &format!("  {name}"), p);
        }
        f.write_str(&s)
    }
}
