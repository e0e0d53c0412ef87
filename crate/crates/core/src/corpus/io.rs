//! Line-delimited JSON exchange records and corpus directory ingestion.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::document::Document;
use super::sample::{Sample, SampleKind};
use super::standoff::parse_standoff;
use super::types::Entity;
use crate::error::{Error, Result};

/// The exchange record: one document or one sample per line.
///
/// Sample-only fields are omitted for documents, so every sample record is
/// also a valid document record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub sentence_breaks: Vec<usize>,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_map: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SampleKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<Entity>,
}

impl From<&Document> for Record {
    fn from(d: &Document) -> Self {
        Record {
            id: d.id.clone(),
            tokens: d.tokens.iter().map(|t| t.text.clone()).collect(),
            sentence_breaks: d.sentence_breaks.clone(),
            entities: d.gold.clone(),
            doc_id: None,
            offset_map: None,
            kind: None,
            anchors: Vec::new(),
        }
    }
}

impl From<&Sample> for Record {
    fn from(s: &Sample) -> Self {
        Record {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            sentence_breaks: s.sentence_breaks.clone(),
            entities: s.gold.clone(),
            doc_id: Some(s.doc_id.clone()),
            offset_map: Some(s.offset_map.clone()),
            kind: Some(s.kind),
            anchors: s.anchors.clone(),
        }
    }
}

impl Record {
    pub fn to_document(&self) -> Result<Document> {
        Document::from_tokens(
            &self.id,
            &self.tokens,
            self.sentence_breaks.clone(),
            self.entities.clone(),
        )
    }

    /// Reads the record as a sample. Plain document records become a sample
    /// covering the whole document.
    pub fn to_sample(&self) -> Result<Sample> {
        let offset_map = self
            .offset_map
            .clone()
            .unwrap_or_else(|| (0..self.tokens.len()).collect());
        if offset_map.len() != self.tokens.len() || offset_map.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Consistency(format!("record {}: invalid offset map", self.id)));
        }
        for e in self.entities.iter().chain(&self.anchors) {
            if e.tail() >= self.tokens.len() {
                return Err(Error::InvalidEntity(format!(
                    "record {}: entity {e} outside sample",
                    self.id
                )));
            }
        }
        Ok(Sample {
            id: self.id.clone(),
            doc_id: self.doc_id.clone().unwrap_or_else(|| self.id.clone()),
            tokens: self.tokens.clone(),
            offset_map,
            kind: self.kind.unwrap_or(SampleKind::Plain),
            gold: self.entities.clone(),
            anchors: self.anchors.clone(),
            sentence_breaks: self.sentence_breaks.clone(),
        })
    }
}

pub fn read_jsonl<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(writer: W, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    read_jsonl(fs::File::open(path)?)
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    read_records(path)?.iter().map(Record::to_document).collect()
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    read_records(path)?.iter().map(Record::to_sample).collect()
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let recs: Vec<Record> = docs.iter().map(Record::from).collect();
    write_jsonl(fs::File::create(path)?, &recs)
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let recs: Vec<Record> = samples.iter().map(Record::from).collect();
    write_jsonl(fs::File::create(path)?, &recs)
}

/// The `(id, text file, annotation file)` triples under `dir`, sorted by
/// id. Document ids are the relative paths without extension; text files
/// without a sibling `.ann` are ignored.
pub fn standoff_files(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut found = Vec::new();
    collect_txt(dir, dir, &mut found)?;
    found.sort();
    Ok(found
        .into_iter()
        .filter_map(|(id, txt)| {
            let ann = txt.with_extension("ann");
            ann.exists().then_some((id, txt, ann))
        })
        .collect())
}

/// Loads every `<name>.txt` with a sibling `<name>.ann` under `dir`,
/// sorted by document id.
pub fn ingest_dir(dir: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (id, txt, ann) in standoff_files(dir)? {
        let raw = fs::read_to_string(&txt)?;
        let annotations = fs::read_to_string(&ann)?;
        let doc = parse_standoff(&id, &raw, &annotations).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", ann.display()),
            },
            other => other,
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

fn collect_txt(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_txt(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "txt") {
            let rel = path.strip_prefix(root).unwrap_or(&path).with_extension("");
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push((id, path));
        }
    }
    Ok(())
}
