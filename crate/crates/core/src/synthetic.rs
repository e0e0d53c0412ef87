//! Toy adverse-drug-event corpora with discontinuous and cross-sentence
//! entities.
//!
//! Sentences mix filler words with entity chunks:
//!
//! ```text
//! flat ADR        "knee pain"             ADR{knee pain}
//! drug            "ibuprofen"             Drug{ibuprofen}
//! coordination    "knee and ankle pain"   ADR{knee .. pain} + ADR{ankle pain}
//! ```
//!
//! A coordination may straddle a sentence break ("... my knee and \n ankle
//! pain ..."), making its discontinuous entity cross-sentence.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Entity};
use crate::error::{Error, Result};
use crate::seda::Splits;
use crate::util::rng_for;

const FILLERS: &[&str] = &[
    "i", "took", "the", "for", "days", "after", "felt", "some", "mild", "today", "was", "it", "my", "doctor", "said",
    "then", "week", "started", "with", "a", "dose", "of", "morning", "night", "but", "also", "since", "noticed",
    "very", "still", "have", "had", "no", "on", "two", "tablets", "daily", "stopped", "again", "now", "much", "better",
];
const BODY: &[&str] = &[
    "knee", "ankle", "leg", "back", "neck", "shoulder", "hip", "wrist", "elbow", "arm", "stomach", "head", "chest",
    "foot", "hand", "jaw",
];
const SYMPTOMS: &[&str] = &[
    "pain",
    "ache",
    "cramps",
    "swelling",
    "stiffness",
    "numbness",
    "weakness",
    "soreness",
    "tingling",
];
const DRUGS: &[&str] = &[
    "lipitor",
    "arthrotec",
    "voltaren",
    "ibuprofen",
    "aspirin",
    "naproxen",
    "celebrex",
    "tylenol",
    "crestor",
    "zocor",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub documents: usize,
    /// Target share of discontinuous entities among all entities.
    pub discontinuous_ratio: f64,
    /// Share of discontinuous entities placed across a sentence break.
    pub cross_sentence_share: f64,
    pub sentences: (usize, usize),
    pub sentence_len: (usize, usize),
    pub entities_per_sentence: (usize, usize),
    /// Probability that a non-coordinated chunk is a drug rather than an ADR.
    pub drug_share: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            documents: 200,
            discontinuous_ratio: 0.10,
            cross_sentence_share: 0.5,
            sentences: (3, 4),
            sentence_len: (10, 16),
            entities_per_sentence: (1, 2),
            drug_share: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Chunk {
    Flat,
    Drug,
    Coordination,
}

/// Tokens plus entities as `(label, token offsets)` relative to the chunk.
fn render(chunk: Chunk, rng: &mut ChaCha8Rng) -> (Vec<&'static str>, Vec<(&'static str, Vec<usize>)>) {
    let body = *BODY.choose(rng).expect("non-empty");
    let symptom = *SYMPTOMS.choose(rng).expect("non-empty");
    match chunk {
        Chunk::Flat => (vec![body, symptom], vec![("ADR", vec![0, 1])]),
        Chunk::Drug => (vec![DRUGS.choose(rng).expect("non-empty")], vec![("Drug", vec![0])]),
        Chunk::Coordination => {
            let other = loop {
                let b = *BODY.choose(rng).expect("non-empty");
                if b != body {
                    break b;
                }
            };
            (
                vec![body, "and", other, symptom],
                vec![("ADR", vec![0, 3]), ("ADR", vec![2, 3])],
            )
        }
    }
}

struct SentencePlan {
    chunks: Vec<Chunk>,
    /// A coordination that starts at the end of this sentence and finishes
    /// at the start of the next.
    cross_out: bool,
}

fn document(id: String, config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<Document> {
    let r = config.discontinuous_ratio;
    // each coordination yields one discontinuous and one flat entity, so a
    // per-chunk rate p gives a discontinuous share of p / (1 + p)
    let p_coord = (r / (1.0 - r)).clamp(0.0, 1.0);
    let n_sent = rng.gen_range(config.sentences.0..=config.sentences.1);
    let mut plans: Vec<SentencePlan> = Vec::with_capacity(n_sent);
    let mut pending_cross = 0;
    for _ in 0..n_sent {
        let m = rng.gen_range(config.entities_per_sentence.0..=config.entities_per_sentence.1);
        let mut chunks = Vec::with_capacity(m);
        for _ in 0..m {
            if rng.gen_bool(p_coord) {
                if rng.gen_bool(config.cross_sentence_share) {
                    pending_cross += 1;
                } else {
                    chunks.push(Chunk::Coordination);
                }
            } else if rng.gen_bool(config.drug_share) {
                chunks.push(Chunk::Drug);
            } else {
                chunks.push(Chunk::Flat);
            }
        }
        plans.push(SentencePlan {
            chunks,
            cross_out: false,
        });
    }
    // Place cross-sentence coordinations on free sentence breaks; any that
    // do not fit stay inside a sentence.
    let mut free: Vec<usize> = (0..n_sent.saturating_sub(1)).collect();
    free.shuffle(rng);
    for _ in 0..pending_cross {
        match free.pop() {
            Some(b) => plans[b].cross_out = true,
            None => {
                let k = rng.gen_range(0..n_sent);
                plans[k].chunks.push(Chunk::Coordination);
            }
        }
    }

    let mut tokens: Vec<&'static str> = Vec::new();
    let mut breaks = Vec::new();
    let mut gold = Vec::new();
    let mut carry: Option<(&'static str, usize)> = None;
    for (k, plan) in plans.iter().enumerate() {
        if k > 0 {
            breaks.push(tokens.len());
        }
        let mut items: Vec<(Vec<&'static str>, Vec<(&'static str, Vec<usize>)>)> =
            plan.chunks.iter().map(|&c| render(c, rng)).collect();
        items.shuffle(rng);
        let sentence_start = tokens.len();
        if let Some((symptom, head)) = carry.take() {
            // "ankle pain" finishing the coordination opened before the break
            let other = *BODY.choose(rng).expect("non-empty");
            let at = tokens.len();
            tokens.extend([other, symptom]);
            gold.push(Entity::from_indices("ADR", &[head, at + 1])?);
            gold.push(Entity::from_indices("ADR", &[at, at + 1])?);
        }
        let target = rng.gen_range(config.sentence_len.0..=config.sentence_len.1);
        let entity_tokens: usize = items.iter().map(|i| i.0.len()).sum::<usize>() + if plan.cross_out { 2 } else { 0 };
        let fill = target
            .saturating_sub(entity_tokens + (tokens.len() - sentence_start) + 1)
            .max(1);
        // distribute fillers into gaps around the chunks
        let mut gaps = vec![0usize; items.len() + 1];
        for _ in 0..fill {
            let g = rng.gen_range(0..gaps.len());
            gaps[g] += 1;
        }
        for (g, gap) in gaps.iter().enumerate() {
            for _ in 0..*gap {
                tokens.push(FILLERS.choose(rng).expect("non-empty"));
            }
            if let Some((words, ents)) = items.get(g) {
                let at = tokens.len();
                tokens.extend(words);
                for (label, offs) in ents {
                    let idx: Vec<usize> = offs.iter().map(|o| at + o).collect();
                    gold.push(Entity::from_indices(*label, &idx)?);
                }
            }
        }
        if plan.cross_out && k + 1 < plans.len() {
            let body = *BODY.choose(rng).expect("non-empty");
            let symptom = *SYMPTOMS.choose(rng).expect("non-empty");
            carry = Some((symptom, tokens.len()));
            tokens.extend([body, "and"]);
        } else {
            tokens.push(".");
        }
    }
    if carry.is_some() {
        return Err(Error::Consistency("unterminated cross-sentence coordination".into()));
    }
    Document::from_tokens(id, &tokens, breaks, gold)
}

/// Generates `config.documents` documents with ids `{prefix}{k:04}`.
pub fn generate(config: &SyntheticConfig, prefix: &str) -> Result<Vec<Document>> {
    if !(0.0..1.0).contains(&config.discontinuous_ratio) || !(0.0..=1.0).contains(&config.cross_sentence_share) {
        return Err(Error::Config("ratios must lie in [0, 1)".into()));
    }
    if config.sentences.0 == 0
        || config.sentences.0 > config.sentences.1
        || config.sentence_len.0 > config.sentence_len.1
    {
        return Err(Error::Config("invalid sentence ranges".into()));
    }
    let mut rng = rng_for(config.seed, "synthetic");
    (0..config.documents)
        .map(|k| document(format!("{prefix}{k:04}"), config, &mut rng))
        .collect()
}

/// Cuts one generated corpus into train/dev/test by fractions of the
/// document count, in generation order.
pub fn split(docs: Vec<Document>, dev_share: f64, test_share: f64) -> Splits {
    let n = docs.len();
    let n_dev = (n as f64 * dev_share).round() as usize;
    let n_test = (n as f64 * test_share).round() as usize;
    let n_train = n.saturating_sub(n_dev + n_test);
    let mut it = docs.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let dev = it.by_ref().take(n_dev).collect();
    let test = it.collect();
    Splits { train, dev, test }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusStats;

    #[test]
    fn generated_corpus_has_requested_mix() {
        let docs = generate(&SyntheticConfig::default(), "doc").unwrap();
        assert_eq!(docs.len(), 200);
        for d in &docs {
            d.validate().unwrap();
        }
        let stats = CorpusStats::of(&docs);
        let disc = stats.discontinuous as f64 / stats.entities as f64;
        assert!((0.06..0.14).contains(&disc), "discontinuous share {disc}");
        let cross = stats.cross_sentence as f64 / stats.discontinuous as f64;
        assert!((0.3..0.7).contains(&cross), "cross share {cross}");
    }

    #[test]
    fn generation_is_deterministic() {
        let c = SyntheticConfig {
            documents: 5,
            ..Default::default()
        };
        assert_eq!(generate(&c, "d").unwrap(), generate(&c, "d").unwrap());
        let other = SyntheticConfig { seed: 8, ..c.clone() };
        assert_ne!(generate(&c, "d").unwrap(), generate(&other, "d").unwrap());
    }

    #[test]
    fn no_cross_sentence_when_share_is_zero() {
        let c = SyntheticConfig {
            documents: 50,
            cross_sentence_share: 0.0,
            ..Default::default()
        };
        let stats = CorpusStats::of(&generate(&c, "d").unwrap());
        assert_eq!(stats.cross_sentence, 0);
        assert!(stats.discontinuous > 0);
    }

    #[test]
    fn split_counts() {
        let c = SyntheticConfig {
            documents: 10,
            ..Default::default()
        };
        let s = split(generate(&c, "d").unwrap(), 0.2, 0.2);
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (6, 2, 2));
    }
}
