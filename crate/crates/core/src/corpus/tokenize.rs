//! Whitespace + punctuation tokenizer with exact character offsets.
//!
//! A token is either a maximal run of word characters or a single
//! punctuation character. A few connectors stay inside a word when both
//! neighbours are alphanumeric (`x-ray`, `don't`, `2.5`, `and/or`), and a
//! comma stays inside a number (`1,000`). Everything else that is neither
//! alphanumeric nor whitespace is split off on its own.

use super::types::Token;

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn joins_word(c: char, prev: Option<char>, next: Option<char>) -> bool {
    let (Some(p), Some(n)) = (prev, next) else {
        return false;
    };
    match c {
        '-' | '\'' | '\u{2019}' | '.' | '/' => p.is_alphanumeric() && n.is_alphanumeric(),
        ',' => p.is_ascii_digit() && n.is_ascii_digit(),
        _ => false,
    }
}

/// Splits `raw` into tokens. Deterministic; joining the token texts with the
/// untouched inter-token characters reproduces `raw` exactly.
pub fn tokenize(raw: &str) -> Vec<Token> {
    let chars: Vec<char> = raw.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if is_punct(c) {
            i += 1;
        } else {
            while i < chars.len() {
                let c = chars[i];
                if c.is_whitespace() {
                    break;
                }
                if is_punct(c) {
                    let prev = if i > start { Some(chars[i - 1]) } else { None };
                    if !joins_word(c, prev, chars.get(i + 1).copied()) {
                        break;
                    }
                }
                i += 1;
            }
        }
        tokens.push(Token {
            index: tokens.len(),
            text: chars[start..i].iter().collect(),
            char_start: start,
            char_end: i,
        });
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(raw: &str) -> Vec<String> {
        tokenize(raw).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn trailing_punctuation() {
        assert_eq!(texts("stomach pain."), ["stomach", "pain", "."]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \n\t ").is_empty());
    }

    #[test]
    fn inner_comma_splits() {
        assert_eq!(texts("knee,the"), ["knee", ",", "the"]);
    }

    #[test]
    fn connectors_inside_words() {
        assert_eq!(texts("x-ray don't 2.5mg 1,000"), ["x-ray", "don't", "2.5mg", "1,000"]);
        assert_eq!(texts("(sore)."), ["(", "sore", ")", "."]);
        assert_eq!(texts("end-"), ["end", "-"]);
    }

    #[test]
    fn offsets_are_character_based() {
        let toks = tokenize("é pain");
        assert_eq!(toks[1].char_start, 2);
        assert_eq!(toks[1].char_end, 6);
    }

    #[test]
    fn round_trip_reconstructs_raw() {
        let raw = "A patient  reports severe muscle\npain, in legs & ankles!";
        let toks = tokenize(raw);
        let chars: Vec<char> = raw.chars().collect();
        let mut rebuilt = String::new();
        let mut pos = 0;
        for t in &toks {
            rebuilt.extend(&chars[pos..t.char_start]);
            rebuilt.push_str(&t.text);
            pos = t.char_end;
        }
        rebuilt.extend(&chars[pos..]);
        assert_eq!(rebuilt, raw);
    }
}
