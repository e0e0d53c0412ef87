use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Lower-cased word vocabulary; id 0 is the shared unknown word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK: &str = "<unk>";

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Collects every distinct word, sorted so the ids do not depend on
    /// corpus order.
    pub fn build<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut words: Vec<String> = sentences
            .into_iter()
            .flat_map(|s| s.iter().map(|w| w.as_ref().to_lowercase()))
            .collect();
        words.sort();
        words.dedup();
        words.retain(|w| w != UNK);
        words.insert(0, UNK.to_string());
        words.into()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_words_share_id_zero() {
        let v = Vocab::build([["Knee", "pain"].as_slice(), ["pain"].as_slice()]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.ids(&["knee", "PAIN", "elbow"]), [1, 2, 0]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["<unk>","knee","pain"]"#);
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
