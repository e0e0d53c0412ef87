use serde::{Deserialize, Serialize};

use super::document::Document;
use super::sample::{Sample, SampleKind};
use super::types::Entity;
use crate::error::{Error, Result};

/// Baseline segmentation: one sample per newline-delimited sentence.
///
/// Entities whose fragments fall in different sentences are projected into
/// no sample.
pub fn split_newline(doc: &Document) -> Vec<Sample> {
    doc.sentence_spans()
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            Sample::from_document(
                doc,
                format!("{}#s{k}", doc.id),
                (s.start..s.end).collect(),
                SampleKind::Plain,
            )
            .expect("sentence spans lie inside the document")
        })
        .collect()
}

/// A single sample holding the whole document.
pub fn whole_document(doc: &Document) -> Sample {
    Sample::from_document(
        doc,
        format!("{}#all", doc.id),
        (0..doc.len()).collect(),
        SampleKind::Plain,
    )
    .expect("identity map is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    BeforeFirst,
    AfterLast,
    BothSides,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before_first" => Ok(Self::BeforeFirst),
            "after_last" => Ok(Self::AfterLast),
            "both_sides" => Ok(Self::BothSides),
            other => Err(Error::Config(format!("unknown mask mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaskOutcome {
    pub document: Document,
    pub masked_tokens: usize,
    /// Set when the document has no gold entity and nothing was masked.
    pub no_entities: bool,
}

/// Replaces context outside the gold entities with `mask_token`.
pub fn mask_context(doc: &Document, mode: MaskMode, mask_token: &str) -> Result<MaskOutcome> {
    let (Some(first), Some(last)) = (
        doc.gold.iter().map(Entity::head).min(),
        doc.gold.iter().map(Entity::tail).max(),
    ) else {
        return Ok(MaskOutcome {
            document: doc.clone(),
            masked_tokens: 0,
            no_entities: true,
        });
    };
    let mut masked = 0;
    let texts: Vec<String> = doc
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let hide = match mode {
                MaskMode::BeforeFirst => i < first,
                MaskMode::AfterLast => i > last,
                MaskMode::BothSides => i < first || i > last,
            };
            if hide {
                masked += 1;
                mask_token.to_string()
            } else {
                t.text.clone()
            }
        })
        .collect();
    Ok(MaskOutcome {
        document: doc.with_token_texts(&texts)?,
        masked_tokens: masked,
        no_entities: false,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCount {
    pub total: usize,
    pub covered: usize,
}

impl SubsetCount {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.covered as f64 / self.total as f64)
    }

    pub fn add(&mut self, other: SubsetCount) {
        self.total += other.total;
        self.covered += other.covered;
    }
}

/// How many gold entities are fully contained in at least one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub all: SubsetCount,
    pub discontinuous: SubsetCount,
    pub cross_sentence: SubsetCount,
}

impl CoverageReport {
    pub fn merge(&mut self, other: &CoverageReport) {
        self.all.add(other.all);
        self.discontinuous.add(other.discontinuous);
        self.cross_sentence.add(other.cross_sentence);
    }
}

/// Coverage of `doc.gold` by samples cut from `doc`. Samples of other
/// documents are ignored; samples claiming `doc` must have valid offsets.
pub fn coverage(samples: &[Sample], doc: &Document) -> Result<CoverageReport> {
    let own: Vec<&Sample> = samples.iter().filter(|s| s.doc_id == doc.id).collect();
    for s in &own {
        s.check_against(doc)?;
    }
    let mut report = CoverageReport::default();
    for e in &doc.gold {
        let covered = own.iter().any(|s| s.contains(e)) as usize;
        report.all.total += 1;
        report.all.covered += covered;
        if e.is_discontinuous() {
            report.discontinuous.total += 1;
            report.discontinuous.covered += covered;
        }
        if e.is_cross_sentence(&doc.sentence_breaks) {
            report.cross_sentence.total += 1;
            report.cross_sentence.covered += covered;
        }
    }
    Ok(report)
}

/// Coverage summed over a corpus.
pub fn corpus_coverage(samples: &[Sample], docs: &[Document]) -> Result<CoverageReport> {
    let mut by_doc: std::collections::HashMap<&str, Vec<Sample>> = std::collections::HashMap::new();
    for s in samples {
        by_doc.entry(s.doc_id.as_str()).or_default().push(s.clone());
    }
    let mut report = CoverageReport::default();
    for d in docs {
        let own = by_doc.get(d.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        report.merge(&coverage(own, d)?);
    }
    Ok(report)
}

/// Entity counts in the layout of a corpus statistics table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub entities: usize,
    pub discontinuous: usize,
    pub cross_sentence: usize,
}

impl CorpusStats {
    pub fn of(docs: &[Document]) -> Self {
        let mut s = CorpusStats {
            documents: docs.len(),
            ..Default::default()
        };
        for d in docs {
            for e in &d.gold {
                s.entities += 1;
                s.discontinuous += e.is_discontinuous() as usize;
                s.cross_sentence += e.is_cross_sentence(&d.sentence_breaks) as usize;
            }
        }
        s
    }

    pub fn discontinuous_percent(&self) -> f64 {
        if self.entities == 0 {
            0.0
        } else {
            100.0 * self.discontinuous as f64 / self.entities as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::Span;

    fn fig1() -> Document {
        // "severe muscle pain" and "muscle ... ankles" style entities cut by the newline.
        let raw = "A patient at the downtown health clinic reports severe muscle\npain in their legs and ankles.";
        let doc = Document::from_raw("fig1", raw, vec![]).unwrap();
        let t = doc.token_texts();
        let at = |w: &str| t.iter().position(|x| *x == w).unwrap();
        let gold = vec![
            Entity::from_indices("ADR", &[at("severe"), at("muscle"), at("pain"), at("legs")]).unwrap(),
            Entity::from_indices("ADR", &[at("severe"), at("muscle"), at("pain"), at("ankles")]).unwrap(),
        ];
        Document::from_raw("fig1", raw, gold).unwrap()
    }

    #[test]
    fn newline_split_drops_cross_sentence_entities() {
        let doc = fig1();
        let samples = split_newline(&doc);
        assert_eq!(samples.len(), 2);
        assert!(samples.iter().all(|s| s.gold.is_empty()));
        let cov = coverage(&samples, &doc).unwrap();
        assert_eq!(cov.cross_sentence, SubsetCount { total: 2, covered: 0 });
    }

    #[test]
    fn single_sentence_keeps_gold() {
        let e = Entity::from_indices("ADR", &[1, 2]).unwrap();
        let doc = Document::from_tokens("d", &["x", "stomach", "pain"], vec![], vec![e.clone()]).unwrap();
        let samples = split_newline(&doc);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].gold, vec![e]);
    }

    #[test]
    fn projection_shifts_offsets() {
        let toks = ["a", "b", "c", "d", "e", "f", "g"];
        let e = Entity::from_indices("X", &[3, 5]).unwrap();
        let doc = Document::from_tokens("d", &toks, vec![2, 6], vec![e.clone()]).unwrap();
        let samples = split_newline(&doc);
        assert_eq!(samples.len(), 3);
        assert!(samples[0].gold.is_empty() && samples[2].gold.is_empty());
        assert_eq!(samples[1].gold, vec![Entity::from_indices("X", &[1, 3]).unwrap()]);
        assert_eq!(samples[1].to_document(&samples[1].gold[0]).unwrap(), e);
    }

    #[test]
    fn whole_document_covers_everything() {
        let doc = fig1();
        let cov = coverage(&[whole_document(&doc)], &doc).unwrap();
        assert_eq!(cov.all, SubsetCount { total: 2, covered: 2 });
    }

    #[test]
    fn coverage_rejects_bad_offsets() {
        let doc = fig1();
        let mut s = whole_document(&doc);
        s.offset_map.push(999);
        s.tokens.push("x".into());
        assert!(matches!(coverage(&[s], &doc), Err(Error::Consistency(_))));
    }

    #[test]
    fn mask_both_sides() {
        let e = Entity::new("X", vec![Span { start: 2, end: 3 }]).unwrap();
        let doc = Document::from_tokens("d", &["A", "B", "ENT", "C", "D"], vec![], vec![e]).unwrap();
        let out = mask_context(&doc, MaskMode::BothSides, "[M]").unwrap();
        assert_eq!(out.document.token_texts(), ["[M]", "[M]", "ENT", "[M]", "[M]"]);
        assert_eq!(out.masked_tokens, 4);
        assert_eq!(out.document.gold, doc.gold);
    }

    #[test]
    fn mask_before_first_at_start_is_identity() {
        let e = Entity::from_indices("X", &[0]).unwrap();
        let doc = Document::from_tokens("d", &["ENT", "b"], vec![], vec![e]).unwrap();
        let out = mask_context(&doc, MaskMode::BeforeFirst, "[M]").unwrap();
        assert_eq!(out.document, doc);
    }

    #[test]
    fn mask_without_entities_flags() {
        let doc = Document::from_tokens("d", &["a", "b"], vec![], vec![]).unwrap();
        let out = mask_context(&doc, MaskMode::BothSides, "[M]").unwrap();
        assert!(out.no_entities);
        assert_eq!(out.document, doc);
    }
}
