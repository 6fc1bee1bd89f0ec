//! Word-level vocabulary and tokenizer.
//!
//! Normalisation: Unicode NFC, lowercase, whitespace split, and every
//! punctuation or symbol character becomes its own token. An apostrophe
//! between two alphanumeric characters stays inside the word (`jim's`).
//! The literals `[S]`, `[E]`, `[M]`, `[CLS]`, `[SEP]`, `[PAD]`, `[UNK]`
//! pass through as their reserved ids.

use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const START: u32 = 2;
pub const END: u32 = 3;
pub const MASK: u32 = 4;
pub const CLS: u32 = 5;
pub const SEP: u32 = 6;

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 7] = ["[PAD]", "[UNK]", "[S]", "[E]", "[M]", "[CLS]", "[SEP]"];

const HEADER: &str = "HYPEVENTS-VOCAB v1";

pub fn is_special(id: u32) -> bool {
    (id as usize) < SPECIALS.len()
}

/// Bijection between tokens and the dense id range `[0, len)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Splits text into normalised word tokens without consulting a vocabulary.
pub fn split_words(text: &str) -> Vec<String> {
    let text: String = text.nfc().collect();
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            if let Some(special) = SPECIALS.iter().find(|s| starts_with_at(&chars, i, s)) {
                flush(&mut word, &mut out);
                out.push(special.to_string());
                i += special.chars().count();
                continue;
            }
        }
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else if is_apostrophe(c)
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            word.push('\'');
        } else {
            flush(&mut word, &mut out);
            out.extend(c.to_lowercase().map(String::from));
        }
        i += 1;
    }
    flush(&mut word, &mut out);
    out
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn starts_with_at(chars: &[char], at: usize, pat: &str) -> bool {
    let mut k = at;
    for p in pat.chars() {
        if chars.get(k) != Some(&p) {
            return false;
        }
        k += 1;
    }
    true
}

/// Normalised text: tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    split_words(text).join(" ")
}

impl Vocab {
    /// Vocabulary holding only the reserved tokens.
    pub fn specials_only() -> Self {
        Self::from_tokens(SPECIALS.iter().map(|s| s.to_string()).collect())
            .expect("specials are distinct")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Builds a vocabulary from raw texts. Words seen fewer than `min_count`
    /// times are left out (they tokenize to `[UNK]`). Ordering: reserved
    /// tokens, then frequency descending, then lexicographic.
    pub fn build<I, S>(texts: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for w in split_words(text.as_ref()) {
                if !SPECIALS.contains(&w.as_str()) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids of `text`; out-of-vocabulary words map to `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Space-joined tokens. Unknown ids render as `[UNK]`.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(16 * self.tokens.len());
        out.push_str(HEADER);
        out.push('\n');
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Vocab(format!("missing header `{HEADER}`")));
        }
        let mut tokens = Vec::new();
        for (n, line) in lines.enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Vocab(format!("line {}: expected token<TAB>id", n + 2)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Vocab(format!("line {}: bad id {id:?}", n + 2)))?;
            if id != tokens.len() {
                return Err(Error::Vocab(format!(
                    "line {}: ids must be dense and ordered, got {id}",
                    n + 2
                )));
            }
            tokens.push(tok.to_string());
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Vocab(format!("reserved token {s} must have id {i}")));
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(
            split_words("Dotty was being very grumpy."),
            vec!["dotty", "was", "being", "very", "grumpy", "."]
        );
        assert_eq!(split_words("Jim's date, ok!"), vec!["jim's", "date", ",", "ok", "!"]);
        assert_eq!(split_words("'quoted'"), vec!["'", "quoted", "'"]);
    }

    #[test]
    fn tokenizes_story_sentence() {
        let v = Vocab::build(["Dotty was being very grumpy."], 1).unwrap();
        let ids = v.encode("Dotty was being very grumpy.");
        assert_eq!(ids.len(), 6);
        assert_eq!(v.decode(&ids), "dotty was being very grumpy .");
    }

    #[test]
    fn empty_text_gives_no_tokens() {
        assert!(Vocab::specials_only().encode("").is_empty());
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let v = Vocab::build(["a b"], 1).unwrap();
        assert_eq!(v.encode("a zebra"), vec![v.id("a").unwrap(), UNK]);
    }

    #[test]
    fn special_literals_pass_through() {
        let v = Vocab::build(["a b"], 1).unwrap();
        assert_eq!(
            v.encode("[CLS] a [SEP] b[SEP]"),
            vec![CLS, v.id("a").unwrap(), SEP, v.id("b").unwrap(), SEP]
        );
        assert_eq!(v.encode("[S][M][E]"), vec![START, MASK, END]);
    }

    #[test]
    fn nfc_normalises_composed_characters() {
        assert_eq!(split_words("Cafe\u{301}"), split_words("Caf\u{e9}"));
    }

    #[test]
    fn shared_words_count_once() {
        let v = Vocab::build(["The cat sat.", "sat the cat ."], 1).unwrap();
        assert_eq!(v.len(), 4 + SPECIALS.len());
    }

    #[test]
    fn min_count_drops_hapaxes() {
        let v = Vocab::build(["a a b"], 2).unwrap();
        assert_eq!(v.len(), SPECIALS.len() + 1);
        assert_eq!(v.encode("b"), vec![UNK]);
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let v = Vocab::build(["b c c a a"], 1).unwrap();
        let words: Vec<_> = v.tokens()[SPECIALS.len()..].to_vec();
        assert_eq!(words, vec!["a", "c", "b"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocab::build(Vec::<String>::new(), 1).is_err());
    }

    #[test]
    fn text_round_trip_is_stable() {
        let v = Vocab::build(["one two two three"], 1).unwrap();
        let text = v.to_text();
        assert!(text.starts_with("HYPEVENTS-VOCAB v1\n[PAD]\t0\n"));
        let back = Vocab::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text(), text);
        let again = Vocab::build(["one two two three"], 1).unwrap();
        assert_eq!(again.to_text(), text);
    }

    #[test]
    fn rejects_non_dense_or_missing_specials() {
        assert!(Vocab::from_text("HYPEVENTS-VOCAB v1\n[PAD]\t1\n").is_err());
        assert!(Vocab::from_text("HYPEVENTS-VOCAB v1\nfoo\t0\n").is_err());
        assert!(Vocab::from_text("nope\n").is_err());
    }
}
