//! Word-level vocabulary and the fixed score template.

use std::collections::HashMap;

use crate::error::{ModelError, Result};

pub const PAD: &str = "<pad>";
pub const SEP: &str = "<sep>";
pub const MAX_VOCAB: usize = 128;

pub const DEFAULT_PROMPT: &str = "how would you rate the harmonization quality of this image ?";

const WORDS: &[&str] = &[
    "how",
    "would",
    "you",
    "rate",
    "the",
    "harmonization",
    "quality",
    "of",
    "this",
    "image",
    "?",
    "score",
    "is",
    "compared",
    "with",
    "reference",
    "composite",
    "please",
    "give",
    "a",
    "an",
    "and",
    "for",
    "what",
    "overall",
    "harmonized",
    "on",
    "scale",
    "from",
    "to",
];

const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];

/// Template words preceding the score digits.
pub const SCORE_PREFIX: [&str; 4] = ["the", "quality", "score", "is"];
pub const SCORE_END: &str = ".";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut tokens: Vec<String> = vec![PAD.into(), SEP.into()];
        tokens.extend(WORDS.iter().map(|w| w.to_string()));
        tokens.extend(DIGITS.iter().map(|d| d.to_string()));
        tokens.push(SCORE_END.into());
        Self::from_tokens(tokens).expect("built-in vocabulary is valid")
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_VOCAB {
            return Err(ModelError::Config(format!(
                "vocabulary of {} exceeds {MAX_VOCAB}",
                tokens.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ModelError::Config(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| ModelError::OutOfVocabulary(token.to_string()))
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn sep(&self) -> usize {
        self.index[SEP]
    }

    pub fn is_digit(&self, id: usize) -> bool {
        let t = self.token(id);
        t.len() == 1 && t.as_bytes()[0].is_ascii_digit()
    }

    /// Lower-cases, splits on whitespace, and detaches `?`, `.` and `,`.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let lower = word.to_lowercase();
            let mut w = lower.as_str();
            let mut trailing = Vec::new();
            while let Some(last) = w.chars().last() {
                if matches!(last, '?' | '.' | ',') && w.len() > 1 {
                    trailing.push(&w[w.len() - 1..]);
                    w = &w[..w.len() - 1];
                } else {
                    break;
                }
            }
            if w.chars().all(|c| c.is_ascii_digit()) {
                for d in w.chars() {
                    out.push(self.id(&d.to_string())?);
                }
            } else {
                out.push(self.id(w)?);
            }
            for t in trailing.iter().rev() {
                out.push(self.id(t)?);
            }
        }
        Ok(out)
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// Token ids of `the quality score is <d> <d> .` for an integer score.
    pub fn score_sentence(&self, score: u32) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for w in SCORE_PREFIX {
            out.push(self.id(w)?);
        }
        for d in score.to_string().chars() {
            out.push(self.id(&d.to_string())?);
        }
        out.push(self.id(SCORE_END)?);
        Ok(out)
    }

    /// Template prefix up to and including the token right before the digits.
    pub fn score_prefix(&self) -> Result<Vec<usize>> {
        SCORE_PREFIX.iter().map(|w| self.id(w)).collect()
    }

    /// Reads the first run of digit tokens as an integer.
    pub fn parse_score(&self, ids: &[usize]) -> Option<u32> {
        let start = ids.iter().position(|&i| self.is_digit(i))?;
        let digits: String = ids[start..]
            .iter()
            .take_while(|&&i| self.is_digit(i))
            .map(|&i| self.token(i))
            .collect();
        digits.parse().ok()
    }
}
