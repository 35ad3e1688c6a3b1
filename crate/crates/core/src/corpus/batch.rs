use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{tokenize, AnnotatedExample, SimplificationExample};
use crate::error::{Error, Result};
use crate::nn::vocab::{CLS, MASK, PAD};
use crate::nn::{CharVocabulary, TokenVocabulary};

/// Character and token inventories plus the sorted group labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub chars: CharVocabulary,
    pub tokens: TokenVocabulary,
    pub groups: Vec<String>,
}

impl Vocabularies {
    pub fn group_index(&self, group: &str) -> Option<usize> {
        self.groups.binary_search_by(|g| g.as_str().cmp(group)).ok()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Indices follow sorted order, so the result does not depend on the order
/// of the inputs. Characters come from sentences and targets; tokens also
/// include simplification candidates.
pub fn build_vocabularies(
    examples: &[AnnotatedExample],
    simplification: &[SimplificationExample],
) -> Vocabularies {
    let mut chars = BTreeSet::new();
    let mut tokens = BTreeSet::new();
    let mut groups = BTreeSet::new();
    for ex in examples {
        chars.extend(ex.sentence.chars().filter(|c| !c.is_whitespace()));
        chars.extend(ex.target.surface.chars());
        tokens.extend(tokenize(&ex.sentence));
        groups.insert(ex.group.clone());
    }
    for ex in simplification {
        chars.extend(ex.target.chars());
        tokens.extend(ex.tokens());
        tokens.extend(ex.candidates.iter().map(|c| c.to_lowercase()));
    }
    Vocabularies {
        chars: CharVocabulary::from_chars(chars),
        tokens: TokenVocabulary::from_tokens(tokens),
        groups: groups.into_iter().collect(),
    }
}

/// Index form of one example. `tokens` starts with the sentence-start id.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub chars: Vec<usize>,
    pub tokens: Vec<usize>,
    /// `None` for groups unseen in training.
    pub group: Option<usize>,
    pub gold: f64,
    /// Unlabeled examples feed only the discriminator.
    pub labeled: bool,
}

/// Index form of a simplification item with the complex word masked.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSimplification {
    pub chars: Vec<usize>,
    pub tokens: Vec<usize>,
    /// Index of the mask within `tokens`.
    pub position: usize,
    /// Top-ranked candidate.
    pub label: usize,
}

/// Maps records to indices, truncating to the configured maxima.
#[derive(Clone, Copy, Debug)]
pub struct Encoder<'v> {
    pub vocab: &'v Vocabularies,
    pub max_chars: usize,
    pub max_tokens: usize,
}

impl Encoder<'_> {
    pub fn encode(&self, ex: &AnnotatedExample, labeled: bool) -> Result<EncodedExample> {
        let chars = self.encode_chars(&ex.target.surface, &ex.id)?;
        let mut tokens = vec![CLS];
        tokens.extend(self.vocab.tokens.encode(&tokenize(&ex.sentence)));
        if tokens.len() > self.max_tokens {
            log::debug!("example {} truncated to {} tokens", ex.id, self.max_tokens);
            tokens.truncate(self.max_tokens);
        }
        Ok(EncodedExample {
            chars,
            tokens,
            group: self.vocab.group_index(&ex.group),
            gold: ex.gold,
            labeled,
        })
    }

    pub fn encode_all(&self, examples: &[AnnotatedExample], unlabeled: &[String]) -> Result<Vec<EncodedExample>> {
        examples
            .iter()
            .map(|ex| self.encode(ex, !unlabeled.contains(&ex.group)))
            .collect()
    }

    /// Keeps a window of `max_tokens` around the masked word.
    pub fn encode_simplification(&self, ex: &SimplificationExample) -> Result<EncodedSimplification> {
        let chars = self.encode_chars(&ex.target, &ex.sentence)?;
        let words = ex.tokens();
        let budget = self.max_tokens.saturating_sub(1).max(1);
        let lo = (ex.position + 1).saturating_sub(budget);
        let hi = (lo + budget).min(words.len());
        let mut tokens = vec![CLS];
        tokens.extend(self.vocab.tokens.encode(&words[lo..hi]));
        let position = ex.position - lo + 1;
        tokens[position] = MASK;
        Ok(EncodedSimplification {
            chars,
            tokens,
            position,
            label: self.vocab.tokens.index_of(&ex.candidates[0].to_lowercase()),
        })
    }

    fn encode_chars(&self, surface: &str, id: &str) -> Result<Vec<usize>> {
        let mut chars = self.vocab.chars.encode(surface);
        if chars.is_empty() {
            return Err(Error::Contract(format!("example {id:?} has an empty target")));
        }
        chars.truncate(self.max_chars);
        Ok(chars)
    }
}

/// Padded index matrices for one step. Row `r` of every field belongs to
/// `examples[source[r]]`; masks are `true` on real cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub source: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    pub char_mask: Vec<Vec<bool>>,
    pub tokens: Vec<Vec<usize>>,
    pub token_mask: Vec<Vec<bool>>,
    pub groups: Vec<Option<usize>>,
    pub gold: Vec<f64>,
    pub labeled: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Unpadded character ids of row `r`.
    pub fn row_chars(&self, r: usize) -> &[usize] {
        let n = self.char_mask[r].iter().filter(|&&k| k).count();
        &self.chars[r][..n]
    }

    fn from_rows(examples: &[EncodedExample], source: &[usize]) -> Batch {
        let pad = |seqs: Vec<&[usize]>| {
            let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
            let ids = seqs
                .iter()
                .map(|s| {
                    let mut row = s.to_vec();
                    row.resize(width, PAD);
                    row
                })
                .collect();
            let mask = seqs
                .iter()
                .map(|s| (0..width).map(|j| j < s.len()).collect())
                .collect();
            (ids, mask)
        };
        let rows: Vec<&EncodedExample> = source.iter().map(|&i| &examples[i]).collect();
        let (chars, char_mask) = pad(rows.iter().map(|e| e.chars.as_slice()).collect());
        let (tokens, token_mask) = pad(rows.iter().map(|e| e.tokens.as_slice()).collect());
        Batch {
            source: source.to_vec(),
            chars,
            char_mask,
            tokens,
            token_mask,
            groups: rows.iter().map(|e| e.group).collect(),
            gold: rows.iter().map(|e| e.gold).collect(),
            labeled: rows.iter().map(|e| e.labeled).collect(),
        }
    }
}

/// Seeded shuffle, then consecutive batches; the last may be partial.
/// Callers vary `seed` per epoch.
pub fn make_batches(examples: &[EncodedExample], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut crate::rng::stream(seed, &[]));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch::from_rows(examples, chunk))
        .collect())
}

/// Indices of a seeded `n`-subset of `0..len`, in ascending order; all of
/// them when `n >= len`.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if n >= len {
        return order;
    }
    order.shuffle(&mut crate::rng::stream(seed, &[]));
    order.truncate(n);
    order.sort_unstable();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TargetSpan;
    use proptest::prelude::*;

    fn example(id: usize, sentence: &str, target: &str, group: &str) -> AnnotatedExample {
        let start = sentence.find(target).unwrap();
        AnnotatedExample {
            id: id.to_string(),
            group: group.into(),
            sentence: sentence.into(),
            target: TargetSpan {
                start: sentence[..start].chars().count(),
                end: sentence[..start].chars().count() + target.chars().count(),
                surface: target.into(),
            },
            gold: (id % 10) as f64 / 10.0,
            annotators: None,
        }
    }

    fn corpus(n: usize) -> Vec<AnnotatedExample> {
        let words = ["ab", "ba", "abba", "baab", "a", "b", "aab"];
        (0..n)
            .map(|i| {
                let len = 1 + i % 5;
                let s: Vec<&str> = (0..len).map(|k| words[(i + k) % words.len()]).collect();
                let sentence = s.join(" ");
                let target = s[len / 2].to_owned();
                example(i, &sentence, &target, if i % 2 == 0 { "x" } else { "y" })
            })
            .collect()
    }

    #[test]
    fn tiny_alphabet_vocab_size() {
        let v = build_vocabularies(&corpus(8), &[]);
        assert_eq!(v.chars.len(), 2 + CharVocabulary::RESERVED);
        assert_eq!(v.groups, ["x", "y"]);
    }

    #[test]
    fn vocab_independent_of_order() {
        let mut c = corpus(20);
        let a = build_vocabularies(&c, &[]);
        c.reverse();
        assert_eq!(a, build_vocabularies(&c, &[]));
    }

    #[test]
    fn unseen_character_is_unknown() {
        let v = build_vocabularies(&corpus(4), &[]);
        let enc = Encoder { vocab: &v, max_chars: 8, max_tokens: 8 };
        let e = enc.encode(&example(0, "zz ab", "zz", "x"), true).unwrap();
        assert_eq!(e.chars, [crate::nn::vocab::UNK; 2]);
        assert_eq!(e.tokens[0], CLS);
    }

    #[test]
    fn ten_by_four_is_four_four_two() {
        let v = build_vocabularies(&corpus(10), &[]);
        let enc = Encoder { vocab: &v, max_chars: 8, max_tokens: 8 };
        let encoded = enc.encode_all(&corpus(10), &[]).unwrap();
        let sizes: Vec<usize> = make_batches(&encoded, 4, 3).unwrap().iter().map(Batch::len).collect();
        assert_eq!(sizes, [4, 4, 2]);
        assert_eq!(make_batches(&encoded, 4, 3).unwrap(), make_batches(&encoded, 4, 3).unwrap());
        assert!(make_batches(&encoded, 0, 3).is_err());
    }

    #[test]
    fn truncation_respects_maxima() {
        let v = build_vocabularies(&corpus(10), &[]);
        let enc = Encoder { vocab: &v, max_chars: 2, max_tokens: 3 };
        let e = enc.encode(&example(0, "ab ba abba baab a", "abba", "x"), true).unwrap();
        assert_eq!(e.chars.len(), 2);
        assert_eq!(e.tokens.len(), 3);
    }

    #[test]
    fn simplification_window_keeps_mask() {
        let s = SimplificationExample {
            sentence: "a b c d e f".into(),
            target: "f".into(),
            position: 5,
            candidates: vec!["B".into()],
        };
        let v = build_vocabularies(&[], std::slice::from_ref(&s));
        let enc = Encoder { vocab: &v, max_chars: 4, max_tokens: 3 };
        let e = enc.encode_simplification(&s).unwrap();
        assert_eq!(e.tokens.len(), 3);
        assert_eq!(e.tokens[e.position], MASK);
        assert_eq!(e.label, v.tokens.index_of("b"));
        assert_eq!(e.tokens[1], v.tokens.index_of("e"));
    }

    #[test]
    fn subsample_is_sorted_distinct_and_seeded() {
        let a = subsample_indices(100, 30, 9);
        assert_eq!(a.len(), 30);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subsample_indices(100, 30, 9));
        assert_ne!(a, subsample_indices(100, 30, 10));
        assert_eq!(subsample_indices(5, 9, 0), [0, 1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn padded_cells_round_trip(n in 1usize..40, batch in 1usize..9, seed in any::<u64>()) {
            let c = corpus(n);
            let v = build_vocabularies(&c, &[]);
            let enc = Encoder { vocab: &v, max_chars: 16, max_tokens: 16 };
            let encoded = enc.encode_all(&c, &[]).unwrap();
            let batches = make_batches(&encoded, batch, seed).unwrap();
            let mut seen = vec![false; n];
            for b in &batches {
                for r in 0..b.len() {
                    let ex = &c[b.source[r]];
                    seen[b.source[r]] = true;
                    let surface: String = b.row_chars(r).iter().map(|&i| v.chars.char_at(i).unwrap()).collect();
                    prop_assert_eq!(&surface, &ex.target.surface);
                    let real: Vec<&str> = b.tokens[r].iter().zip(&b.token_mask[r])
                        .filter(|(_, &k)| k).skip(1)
                        .map(|(&t, _)| v.tokens.token_at(t).unwrap()).collect();
                    prop_assert_eq!(real, tokenize(&ex.sentence));
                    for (ids, mask) in [(&b.chars[r], &b.char_mask[r]), (&b.tokens[r], &b.token_mask[r])] {
                        prop_assert_eq!(ids.len(), mask.len());
                        for (&i, &k) in ids.iter().zip(mask) {
                            prop_assert_eq!(k, i != PAD);
                        }
                    }
                    prop_assert_eq!(b.gold[r], ex.gold);
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
