//! Synthetic multi-domain corpus.
//!
//! Target words are pseudo-words drawn from one lexicon shared by all
//! domains; gold complexity is a fixed function of a word's length and its
//! share of rare letters. Each domain adds its own style words and a pair of
//! marker tokens. In source domains the marker agrees with the label with
//! probability `(1 + s) / 2`; elsewhere it is a fair coin.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedExample, TargetSpan};
use crate::error::{Error, Result};
use crate::rng::stream;

const COMMON: &[char] = &['a', 'b', 'd', 'e', 'g', 'i', 'l', 'm', 'n', 'o', 'p', 'r', 's', 't', 'u'];
const RARE: &[char] = &['j', 'q', 'v', 'w', 'x', 'y', 'z'];
const MIN_LEN: usize = 4;
const MAX_LEN: usize = 12;
const MAX_RARE_SHARE: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub domains: usize,
    pub per_domain: usize,
    /// Size of the shared target lexicon.
    pub target_words: usize,
    /// Shared filler vocabulary.
    pub filler_words: usize,
    pub fillers_per_sentence: usize,
    /// Domain-specific vocabulary per domain.
    pub style_words: usize,
    pub style_per_sentence: usize,
    /// Marker/label agreement in source domains, in [0, 1].
    pub spurious_strength: f64,
    /// Domains where the marker tracks the label; all domains when empty.
    pub source_domains: Vec<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            domains: 3,
            per_domain: 100,
            target_words: 200,
            filler_words: 40,
            fillers_per_sentence: 6,
            style_words: 4,
            style_per_sentence: 2,
            spurious_strength: 0.8,
            source_domains: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.domains == 0 {
            return err("domains must be at least 1");
        }
        if self.per_domain == 0 || self.target_words == 0 || self.filler_words == 0 {
            return err("per_domain, target_words and filler_words must be positive");
        }
        if self.style_per_sentence > 0 && self.style_words == 0 {
            return err("style_per_sentence needs style_words");
        }
        if !(0.0..=1.0).contains(&self.spurious_strength) {
            return err("spurious_strength must be in [0, 1]");
        }
        if let Some(d) = self.source_domains.iter().find(|&&d| d >= self.domains) {
            return err(&format!("source domain {d} out of range"));
        }
        Ok(())
    }

    pub fn is_source(&self, domain: usize) -> bool {
        self.source_domains.is_empty() || self.source_domains.contains(&domain)
    }
}

pub fn domain_name(d: usize) -> String {
    format!("domain{d}")
}

/// `[agrees-with-high, agrees-with-low]` marker tokens of a domain.
pub fn marker_tokens(d: usize) -> [String; 2] {
    [format!("marker{d}hi"), format!("marker{d}lo")]
}

/// Gold complexity of a pseudo-word: half length, half rare-letter share.
pub fn complexity_of(word: &str) -> f64 {
    let n = word.chars().count();
    let rare = word.chars().filter(|c| RARE.contains(c)).count() as f64 / n.max(1) as f64;
    let len = (n.clamp(MIN_LEN, MAX_LEN) - MIN_LEN) as f64 / (MAX_LEN - MIN_LEN) as f64;
    (0.5 * len + 0.5 * (rare / MAX_RARE_SHARE).min(1.0)).clamp(0.0, 1.0)
}

fn pseudo_word<R: Rng>(rng: &mut R, len: usize, rare_share: f64) -> String {
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < rare_share {
                *RARE.choose(rng).expect("non-empty")
            } else {
                *COMMON.choose(rng).expect("non-empty")
            }
        })
        .collect()
}

/// Seed-deterministic corpus with `per_domain` examples in each domain,
/// grouped as `domain0`, `domain1`, ...
pub fn gen_synthetic_domains(spec: &SynthSpec, seed: u64) -> Result<Vec<AnnotatedExample>> {
    spec.validate()?;
    let mut lex_rng = stream(seed, &[0]);

    let mut fillers = BTreeSet::new();
    while fillers.len() < spec.filler_words {
        let len = lex_rng.gen_range(2..=3);
        fillers.insert(pseudo_word(&mut lex_rng, len, 0.0));
    }
    let fillers: Vec<String> = fillers.into_iter().collect();

    let style: Vec<Vec<String>> = (0..spec.domains)
        .map(|d| (0..spec.style_words).map(|k| format!("style{d}w{k}")).collect())
        .collect();

    let reserved: Vec<String> = (0..spec.domains)
        .flat_map(|d| marker_tokens(d).into_iter().chain(style[d].iter().cloned()))
        .collect();
    let mut targets = BTreeSet::new();
    let mut attempts = 0usize;
    while targets.len() < spec.target_words {
        attempts += 1;
        if attempts > 1000 * spec.target_words {
            return Err(Error::Config("synthetic spec: cannot draw enough distinct target words".into()));
        }
        let len = lex_rng.gen_range(MIN_LEN..=MAX_LEN);
        let share = lex_rng.gen_range(0.0..MAX_RARE_SHARE);
        let w = pseudo_word(&mut lex_rng, len, share);
        if !fillers.contains(&w) && !reserved.iter().any(|r| r.contains(&w)) {
            targets.insert(w);
        }
    }
    let targets: Vec<String> = targets.into_iter().collect();

    let mut out = Vec::with_capacity(spec.domains * spec.per_domain);
    for d in 0..spec.domains {
        let mut rng = stream(seed, &[1, d as u64]);
        let markers = marker_tokens(d);
        for i in 0..spec.per_domain {
            let target = targets.choose(&mut rng).expect("non-empty").clone();
            let gold = complexity_of(&target);
            let agree = if spec.is_source(d) {
                (1.0 + spec.spurious_strength) / 2.0
            } else {
                0.5
            };
            let high = gold >= 0.5;
            let marker = if rng.gen::<f64>() < agree {
                if high { &markers[0] } else { &markers[1] }
            } else if high {
                &markers[1]
            } else {
                &markers[0]
            };

            let mut words: Vec<&str> = Vec::new();
            for _ in 0..spec.fillers_per_sentence {
                words.push(fillers.choose(&mut rng).expect("non-empty"));
            }
            for _ in 0..spec.style_per_sentence {
                words.push(style[d].choose(&mut rng).expect("non-empty"));
            }
            words.push(marker);
            words.shuffle(&mut rng);
            let at = rng.gen_range(0..=words.len());
            words.insert(at, &target);

            let start: usize = words[..at].iter().map(|w| w.chars().count() + 1).sum();
            let sentence = words.join(" ");
            out.push(AnnotatedExample {
                id: format!("{}-{i}", domain_name(d)),
                group: domain_name(d),
                target: TargetSpan {
                    start,
                    end: start + target.chars().count(),
                    surface: target,
                },
                sentence,
                gold,
                annotators: None,
            });
        }
    }
    Ok(out)
}
