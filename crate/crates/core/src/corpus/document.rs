use super::tokenize::tokenize;
use super::types::{normalize_entities, sentence_of, Entity, Span, Token};
use crate::error::{Error, Result};

/// Tokenized text with newline sentence boundaries and gold entities in
/// document token coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub raw: String,
    pub tokens: Vec<Token>,
    /// Token indices preceded by a newline, strictly ascending, never 0.
    pub sentence_breaks: Vec<usize>,
    pub gold: Vec<Entity>,
}

impl Document {
    /// Tokenizes `raw` and derives sentence breaks from newlines between tokens.
    pub fn from_raw(id: impl Into<String>, raw: impl Into<String>, gold: Vec<Entity>) -> Result<Self> {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        let sentence_breaks = breaks_from_raw(&raw, &tokens);
        let mut doc = Self {
            id: id.into(),
            raw,
            tokens,
            sentence_breaks,
            gold,
        };
        normalize_entities(&mut doc.gold);
        doc.validate()?;
        Ok(doc)
    }

    /// Builds a document from pre-split tokens. The raw text is synthesized by
    /// joining tokens with a space, or a newline at each sentence break.
    pub fn from_tokens<S: AsRef<str>>(
        id: impl Into<String>,
        tokens: &[S],
        sentence_breaks: Vec<usize>,
        gold: Vec<Entity>,
    ) -> Result<Self> {
        let mut raw = String::new();
        let mut toks = Vec::with_capacity(tokens.len());
        let mut pos = 0usize;
        for (i, t) in tokens.iter().enumerate() {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidEntity(format!(
                    "token {i} {t:?} is empty or contains whitespace"
                )));
            }
            if i > 0 {
                raw.push(if sentence_breaks.binary_search(&i).is_ok() {
                    '\n'
                } else {
                    ' '
                });
                pos += 1;
            }
            let n = t.chars().count();
            toks.push(Token {
                index: i,
                text: t.to_string(),
                char_start: pos,
                char_end: pos + n,
            });
            raw.push_str(t);
            pos += n;
        }
        let mut doc = Self {
            id: id.into(),
            raw,
            tokens: toks,
            sentence_breaks,
            gold,
        };
        normalize_entities(&mut doc.gold);
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.sentence_breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Consistency(format!(
                "document {}: sentence breaks not strictly ascending",
                self.id
            )));
        }
        if let Some(&b) = self.sentence_breaks.first() {
            if b == 0 {
                return Err(Error::Consistency(format!("document {}: break at token 0", self.id)));
            }
        }
        if let Some(&b) = self.sentence_breaks.last() {
            if b >= n {
                return Err(Error::Consistency(format!(
                    "document {}: break {b} beyond {n} tokens",
                    self.id
                )));
            }
        }
        for e in &self.gold {
            if e.tail() >= n {
                return Err(Error::InvalidEntity(format!(
                    "document {}: entity {e} outside {n} tokens",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn sentence_of(&self, token: usize) -> usize {
        sentence_of(&self.sentence_breaks, token)
    }

    /// Token ranges of the newline-delimited sentences, in order.
    pub fn sentence_spans(&self) -> Vec<Span> {
        let mut out = Vec::with_capacity(self.sentence_breaks.len() + 1);
        let mut start = 0;
        for &b in &self.sentence_breaks {
            out.push(Span { start, end: b });
            start = b;
        }
        if start < self.len() {
            out.push(Span { start, end: self.len() });
        }
        out
    }

    pub fn entity_text(&self, entity: &Entity) -> String {
        entity
            .token_indices()
            .iter()
            .map(|&i| self.tokens[i].text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Replaces token texts while keeping the original inter-token characters;
    /// raw text and character offsets are rebuilt accordingly.
    pub fn with_token_texts(&self, texts: &[String]) -> Result<Document> {
        if texts.len() != self.tokens.len() {
            return Err(Error::Consistency(format!(
                "document {}: {} replacement texts for {} tokens",
                self.id,
                texts.len(),
                self.tokens.len()
            )));
        }
        let chars: Vec<char> = self.raw.chars().collect();
        let mut raw = String::with_capacity(self.raw.len());
        let mut tokens = Vec::with_capacity(texts.len());
        let mut src = 0usize;
        let mut pos = 0usize;
        for (tok, text) in self.tokens.iter().zip(texts) {
            if text.is_empty() || text.chars().any(char::is_whitespace) {
                return Err(Error::InvalidEntity(format!(
                    "replacement token {text:?} is empty or contains whitespace"
                )));
            }
            raw.extend(&chars[src..tok.char_start]);
            pos += tok.char_start - src;
            let n = text.chars().count();
            tokens.push(Token {
                index: tok.index,
                text: text.clone(),
                char_start: pos,
                char_end: pos + n,
            });
            raw.push_str(text);
            pos += n;
            src = tok.char_end;
        }
        raw.extend(&chars[src..]);
        Ok(Document {
            id: self.id.clone(),
            raw,
            tokens,
            sentence_breaks: self.sentence_breaks.clone(),
            gold: self.gold.clone(),
        })
    }
}

fn breaks_from_raw(raw: &str, tokens: &[Token]) -> Vec<usize> {
    let chars: Vec<char> = raw.chars().collect();
    tokens
        .windows(2)
        .filter(|w| chars[w[0].char_end..w[1].char_start].contains(&'\n'))
        .map(|w| w[1].index)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breaks_follow_newlines() {
        let doc = Document::from_raw("d", "a b\nc\n\nd e", vec![]).unwrap();
        assert_eq!(doc.sentence_breaks, vec![2, 3]);
        assert_eq!(
            doc.sentence_spans(),
            vec![
                Span { start: 0, end: 2 },
                Span { start: 2, end: 3 },
                Span { start: 3, end: 5 }
            ]
        );
    }

    #[test]
    fn leading_newline_is_not_a_break() {
        let doc = Document::from_raw("d", "\nx y", vec![]).unwrap();
        assert!(doc.sentence_breaks.is_empty());
    }

    #[test]
    fn from_tokens_synthesizes_raw() {
        let doc = Document::from_tokens("d", &["a", "b", "c"], vec![2], vec![]).unwrap();
        assert_eq!(doc.raw, "a b\nc");
        let again = Document::from_raw("d", doc.raw.clone(), vec![]).unwrap();
        assert_eq!(again.tokens, doc.tokens);
        assert_eq!(again.sentence_breaks, doc.sentence_breaks);
    }

    #[test]
    fn gold_outside_range_rejected() {
        let e = Entity::from_indices("X", &[5]).unwrap();
        assert!(Document::from_tokens("d", &["a"], vec![], vec![e]).is_err());
    }

    #[test]
    fn replacement_keeps_gaps() {
        let doc = Document::from_raw("d", "ab  cd\nef", vec![]).unwrap();
        let out = doc.with_token_texts(&["[M]".into(), "cd".into(), "x".into()]).unwrap();
        assert_eq!(out.raw, "[M]  cd\nx");
        assert_eq!(out.tokens[1].char_start, 5);
    }
}
