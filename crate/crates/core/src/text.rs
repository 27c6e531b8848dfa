//! Closed-vocabulary tokenization for the synthetic reports.
//!
//! Indices 0..3 are reserved for BOS/EOS/PAD/UNK; the vocabulary file
//! is one token per line with the index equal to the line number.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Result, SctgError};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_token_list(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Specials followed by the sorted unique words of the corpus, so
    /// the mapping does not depend on manifest order.
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for report in reports {
            for w in normalize(report) {
                words.insert(w);
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        Self::from_token_list(tokens)
    }

    pub fn from_words(words: &[&str]) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut sorted: Vec<String> = words.iter().map(|s| s.to_string()).collect();
        sorted.sort();
        sorted.dedup();
        tokens.extend(sorted);
        Self::from_token_list(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS.map(str::to_string) {
            return Err(SctgError::Config(format!(
                "vocabulary file {} does not start with the reserved specials",
                path.display()
            )));
        }
        Ok(Self::from_token_list(tokens))
    }
}

/// Tokenized report text. Generated sequences end with EOS or run to
/// the length cap; PAD never precedes EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercase, detach punctuation, split on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.to_lowercase().chars() {
        if ".,;:!?()".contains(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

/// BOS + word ids + EOS; unknown words map to UNK.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let mut tokens = vec![BOS];
    tokens.extend(normalize(text).iter().map(|w| vocab.id(w)));
    tokens.push(EOS);
    TokenSequence { tokens }
}

/// Inverse of [`tokenize`] modulo whitespace normalization; specials
/// are dropped.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocabulary) -> String {
    seq.tokens
        .iter()
        .filter(|&&t| t != BOS && t != EOS && t != PAD)
        .map(|&t| vocab.word(t))
        .collect::<Vec<_>>()
        .join(" ")
}
