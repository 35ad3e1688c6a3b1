//! Corpus readers, vocabulary construction, batching and the synthetic
//! multi-domain generator.

mod batch;
mod benchls;
mod complex;
mod cwi2018;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use batch::{
    build_vocabularies, make_batches, subsample_indices, Batch, EncodedExample, EncodedSimplification, Encoder, Vocabularies,
};
pub use benchls::{parse_benchls, parse_benchls_str, SimplificationExample};
pub use complex::{parse_complex_lcp, parse_complex_lcp_str, write_complex_lcp};
pub use cwi2018::{group_from_file_name, parse_cwi2018, parse_cwi2018_str};
pub use synth::{gen_synthetic_domains, SynthSpec};

use crate::error::{Error, Result};

/// Target word or phrase, as character (code point) offsets into the sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorCounts {
    pub native: u32,
    pub non_native: u32,
    pub native_marked: u32,
    pub non_native_marked: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub id: String,
    /// Domain, language or task tag.
    pub group: String,
    pub sentence: String,
    pub target: TargetSpan,
    pub gold: f64,
    pub annotators: Option<AnnotatorCounts>,
}

impl AnnotatedExample {
    /// Checks the gold range and that the span slices to its surface form.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.gold) {
            return Err(format!("complexity {} outside [0, 1]", self.gold));
        }
        match char_slice(&self.sentence, self.target.start, self.target.end) {
            Some(s) if s == self.target.surface => Ok(()),
            Some(s) => Err(format!(
                "span {}..{} reads {s:?}, expected {:?}",
                self.target.start, self.target.end, self.target.surface
            )),
            None => Err(format!(
                "span {}..{} outside sentence of {} characters",
                self.target.start,
                self.target.end,
                self.sentence.chars().count()
            )),
        }
    }
}

/// Substring by code point offsets, `None` when out of range or reversed.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut bounds = text.char_indices().map(|(b, _)| b).chain([text.len()]);
    let from = bounds.nth(start)?;
    let to = if end == start {
        from
    } else {
        bounds.nth(end - start - 1)?
    };
    Some(&text[from..to])
}

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() || c == '\'' && !current.is_empty() {
                current.extend(c.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

pub(crate) fn validation(path: &str, line: usize, detail: impl Into<String>) -> Error {
    Error::Validation {
        path: path.to_owned(),
        line,
        detail: detail.into(),
    }
}

pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("The cat, it's \"here\"."),
            ["the", "cat", ",", "it's", "\"", "here", "\"", "."]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn char_slice_uses_code_points() {
        assert_eq!(char_slice("Füße gehen", 0, 4), Some("Füße"));
        assert_eq!(char_slice("abc", 3, 3), Some(""));
        assert_eq!(char_slice("abc", 2, 4), None);
        assert_eq!(char_slice("abc", 2, 1), None);
    }

    proptest! {
        #[test]
        fn char_slice_matches_collect(s in "\\PC{0,20}", a in 0usize..25, b in 0usize..25) {
            let chars: Vec<char> = s.chars().collect();
            let expected = (a <= b && b <= chars.len())
                .then(|| chars[a..b].iter().collect::<String>());
            prop_assert_eq!(char_slice(&s, a, b).map(str::to_owned), expected);
        }
    }
}
