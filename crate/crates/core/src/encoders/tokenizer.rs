use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const OOV_TOKEN: &str = "<unk>";
pub const OOV_ID: usize = 0;

/// Token table; line `i` of a vocab file is the token with id `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(Error::Input(format!("vocab line 0 must be {OOV_TOKEN}")));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || ids.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("vocab line {i}: empty or duplicate token '{t}'")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Vocab holding every token of `texts`, sorted, after the OOV token.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut words: Vec<String> = texts.iter().flat_map(|t| split(t.as_ref())).collect();
        words.sort();
        words.dedup();
        let mut tokens = vec![OOV_TOKEN.to_string()];
        tokens.extend(words.into_iter().filter(|w| w != OOV_TOKEN));
        Self::new(tokens).expect("unique tokens")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Lowercases, then splits on whitespace; every punctuation character becomes
/// its own token.
fn split(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() || ch.is_ascii_punctuation() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if ch.is_ascii_punctuation() {
                out.push(ch.to_string());
            }
        } else {
            word.push(ch);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Token ids for `text`, unknown tokens mapping to [`OOV_ID`], truncated to `max_tokens`.
pub fn tokenize(text: &str, vocab: &Vocab, max_tokens: usize) -> Result<Vec<usize>> {
    let mut ids: Vec<usize> = split(text).iter().map(|t| vocab.id(t)).collect();
    if ids.is_empty() {
        return Err(Error::Input(format!("prompt '{text}' has no tokens")));
    }
    ids.truncate(max_tokens);
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vocab {
        Vocab::parse(include_str!("../../fixtures/vocab.txt")).unwrap()
    }

    #[test]
    fn prompt_with_known_words() {
        let v = fixture();
        let ids = tokenize("What color is the hat?", &v, 16).unwrap();
        let expect: Vec<usize> = ["what", "color", "is", "the", "hat", "?"].iter().map(|t| v.id(t)).collect();
        assert_eq!(ids, expect);
        assert!(ids.iter().all(|&i| i != OOV_ID));
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn empty_text_is_input_error() {
        assert!(matches!(tokenize("", &fixture(), 8), Err(Error::Input(_))));
        assert!(matches!(tokenize("   ", &fixture(), 8), Err(Error::Input(_))));
    }

    #[test]
    fn unknown_words_map_to_oov() {
        assert_eq!(tokenize("zebra quokka", &fixture(), 8).unwrap(), vec![0, 0]);
    }

    #[test]
    fn truncation_and_case() {
        let v = fixture();
        let ids = tokenize("WHAT What what what", &v, 3).unwrap();
        assert_eq!(ids, vec![v.id("what"); 3]);
    }

    #[test]
    fn vocab_file_rules() {
        assert!(Vocab::parse("hat\n<unk>\n").is_err());
        assert!(Vocab::parse("<unk>\nhat\nhat\n").is_err());
        let v = Vocab::from_texts(&["Is the bag red?", "the hat"]);
        assert_eq!(v.token(0), Some(OOV_TOKEN));
        assert_eq!(v.len(), 7);
        assert_eq!(Vocab::parse(&(v.tokens.join("\n") + "\n")).unwrap(), v);
    }
}
