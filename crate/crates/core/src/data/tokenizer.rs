use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::corpus::{DialogCorpus, Split};
use super::special;
use crate::{Error, Result};

/// Special tokens in id order; `[PAD]`, `[BOS]`, `[EOS]` are ids 0, 1, 2.
pub const SPECIAL_TOKENS: &[&str] = &[
    special::PAD,
    special::BOS,
    special::EOS,
    special::UNK,
    special::USER,
    special::SYS,
    special::STATE,
    special::NOCTX,
    special::NOSTATE,
];

const PUNCT: &[char] = &['.', ',', '?', '!', ';', ':'];

/// Whitespace split, then leading/trailing punctuation peeled off into
/// separate tokens. Bracketed tokens such as `[name]` stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk.starts_with('[') && chunk.ends_with(']') {
            out.push(chunk.to_string());
            continue;
        }
        let start = chunk.find(|c: char| !PUNCT.contains(&c)).unwrap_or(chunk.len());
        for c in chunk[..start].chars() {
            out.push(c.to_string());
        }
        let rest = &chunk[start..];
        let end = rest.rfind(|c: char| !PUNCT.contains(&c)).map_or(0, |i| i + 1);
        if end > 0 {
            out.push(rest[..end].to_string());
        }
        for c in rest[end..].chars() {
            out.push(c.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Config(format!("vocabulary must start with {s} at id {i}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Closed vocabulary: specials, the corpus placeholder vocabulary, then every
    /// token seen in the training split (turn texts and serialized states), sorted.
    pub fn build(corpus: &DialogCorpus) -> Self {
        let mut words = BTreeSet::new();
        for d in corpus.split(Split::Train) {
            for t in &d.turns {
                words.extend(tokenize(&t.user));
                words.extend(tokenize(&t.system));
                words.extend(tokenize(&t.state.serialize()));
            }
        }
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut placeholders: Vec<String> = corpus.placeholder_vocab().into_iter().collect();
        placeholders.retain(|p| !SPECIAL_TOKENS.contains(&p.as_str()));
        for p in &placeholders {
            words.remove(p);
        }
        for s in SPECIAL_TOKENS {
            words.remove(*s);
        }
        tokens.extend(placeholders);
        tokens.extend(words);
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn unk_id(&self) -> usize {
        self.index[special::UNK]
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids; out-of-vocabulary tokens map to `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let unk = self.unk_id();
        tokenize(text)
            .iter()
            .map(|t| self.index.get(t).copied().unwrap_or(unk))
            .collect()
    }

    /// Space-joined tokens, dropping PAD/BOS/EOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i > 2)
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; the id is the line number.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(tokenize("hello, world."), vec!["hello", ",", "world", "."]);
        assert_eq!(tokenize("at 14:00 ?"), vec!["at", "14:00", "?"]);
        assert_eq!(tokenize("is [ref]. ok"), vec!["is", "[ref]", ".", "ok"]);
        assert_eq!(tokenize("[USER] i want"), vec!["[USER]", "i", "want"]);
    }

    #[test]
    fn rejects_bad_vocab() {
        assert!(Tokenizer::from_tokens(vec!["a".into()]).is_err());
        let mut v: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        v.push("x".into());
        v.push("x".into());
        assert!(Tokenizer::from_tokens(v).is_err());
    }
}
