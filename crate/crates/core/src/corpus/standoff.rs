//! Standoff annotation ingestion (`ID<TAB>LABEL s1 e1;s2 e2<TAB>surface`).
//!
//! Offsets are character offsets into the raw text. Only text-bound (`T`)
//! lines produce entities; notes, relations, attributes, events and
//! normalizations are skipped.

use super::document::Document;
use super::types::{Entity, Span, Token};
use crate::error::{Error, Result};

/// One text-bound annotation before token mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StandoffAnnotation {
    pub line: usize,
    pub id: String,
    pub label: String,
    pub fragments: Vec<(usize, usize)>,
}

/// Parses raw text plus its annotation file into a [`Document`].
pub fn parse_standoff(id: &str, raw_text: &str, annotations: &str) -> Result<Document> {
    let doc = Document::from_raw(id, raw_text, Vec::new())?;
    let n_chars = raw_text.chars().count();
    let mut gold = Vec::new();
    for ann in parse_annotation_lines(annotations)? {
        let mut spans = Vec::with_capacity(ann.fragments.len());
        for &(start, end) in &ann.fragments {
            if start >= end || end > n_chars {
                return Err(Error::Range {
                    line: ann.line,
                    start,
                    end,
                    len: n_chars,
                });
            }
            spans.push(fragment_to_span(&doc.tokens, ann.line, start, end)?);
        }
        gold.push(Entity::new(ann.label, spans)?);
    }
    Document::from_raw(id, raw_text, gold)
}

/// Parses the text-bound lines of an annotation file.
pub fn parse_annotation_lines(annotations: &str) -> Result<Vec<StandoffAnnotation>> {
    let mut out = Vec::new();
    for (k, line) in annotations.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let first = line.chars().next().unwrap_or(' ');
        match first {
            'T' => out.push(parse_text_bound(line, line_no)?),
            '#' | 'R' | 'A' | 'E' | 'N' | 'M' | '*' => continue,
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unrecognized annotation line {line:?}"),
                })
            }
        }
    }
    Ok(out)
}

fn parse_text_bound(line: &str, line_no: usize) -> Result<StandoffAnnotation> {
    let err = |message: String| Error::Parse { line: line_no, message };
    let (id, rest) = match line.split_once('\t') {
        Some((id, rest)) => (id.trim(), rest),
        None => line
            .split_once(char::is_whitespace)
            .ok_or_else(|| err("missing label and offsets".into()))?,
    };
    // With a tab layout the surface string sits after the second tab.
    let body = rest.split('\t').next().unwrap_or("");
    let mut words = body.split_whitespace();
    let label = words.next().ok_or_else(|| err("missing label".into()))?;
    if label.parse::<usize>().is_ok() {
        return Err(err(format!("label expected, found number {label:?}")));
    }
    let number = |w: &str| -> Result<usize> { w.parse::<usize>().map_err(|_| err(format!("invalid offset {w:?}"))) };
    let mut fragments = Vec::new();
    let mut start = number(words.next().ok_or_else(|| err("missing start offset".into()))?)?;
    loop {
        let w = words.next().ok_or_else(|| err("missing end offset".into()))?;
        match w.split_once(';') {
            Some((end, next_start)) => {
                fragments.push((start, number(end)?));
                start = if next_start.is_empty() {
                    number(words.next().ok_or_else(|| err("dangling ';'".into()))?)?
                } else {
                    number(next_start)?
                };
            }
            None => {
                fragments.push((start, number(w)?));
                break;
            }
        }
    }
    Ok(StandoffAnnotation {
        line: line_no,
        id: id.to_string(),
        label: label.to_string(),
        fragments,
    })
}

fn fragment_to_span(tokens: &[Token], line: usize, start: usize, end: usize) -> Result<Span> {
    let first = tokens.partition_point(|t| t.char_end <= start);
    let mut last = first;
    while last < tokens.len() && tokens[last].char_start < end {
        let t = &tokens[last];
        if t.char_start < start || t.char_end > end {
            return Err(Error::Boundary {
                line,
                token_index: t.index,
                token: t.text.clone(),
                token_start: t.char_start,
                token_end: t.char_end,
            });
        }
        last += 1;
    }
    if first == last {
        return Err(Error::Parse {
            line,
            message: format!("fragment {start}..{end} covers no token"),
        });
    }
    Span::new(first, last)
}
