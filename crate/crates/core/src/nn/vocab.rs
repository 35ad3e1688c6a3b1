use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
/// Sentence-start token whose encoder state feeds first-row pooling.
pub const CLS: usize = 3;

/// Character inventory for the target-word encoder. Index 0 pads, index 1 is
/// the unknown character.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CharList", into = "CharList")]
pub struct CharVocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct CharList {
    chars: Vec<char>,
}

impl From<CharList> for CharVocabulary {
    fn from(list: CharList) -> Self {
        CharVocabulary::from_sorted(list.chars)
    }
}

impl From<CharVocabulary> for CharList {
    fn from(v: CharVocabulary) -> Self {
        CharList { chars: v.chars }
    }
}

impl CharVocabulary {
    pub const RESERVED: usize = 2;

    /// Deterministic: indices follow sorted character order.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        Self::from_sorted(set.into_iter().collect())
    }

    fn from_sorted(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + Self::RESERVED))
            .collect();
        CharVocabulary { chars, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        index
            .checked_sub(Self::RESERVED)
            .and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.index_of(c)).collect()
    }
}

/// Word-level vocabulary for the context encoder. Index 0 pads, 1 is
/// unknown, 2 is the mask token and 3 starts a sentence; none of the four is
/// reachable from text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenList", into = "TokenList")]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenList {
    tokens: Vec<String>,
}

impl From<TokenList> for TokenVocabulary {
    fn from(list: TokenList) -> Self {
        TokenVocabulary::from_sorted(list.tokens)
    }
}

impl From<TokenVocabulary> for TokenList {
    fn from(v: TokenVocabulary) -> Self {
        TokenList { tokens: v.tokens }
    }
}

impl TokenVocabulary {
    pub const RESERVED: usize = 4;

    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        Self::from_sorted(set.into_iter().collect())
    }

    fn from_sorted(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + Self::RESERVED))
            .collect();
        TokenVocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token_at(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(Self::RESERVED)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t.as_ref())).collect()
    }
}
