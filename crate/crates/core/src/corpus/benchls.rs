use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, validation};
use crate::error::Result;

/// One lexical-simplification item: a whitespace-tokenised sentence, the
/// complex word at `position`, and substitutions from best to worst.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplificationExample {
    pub sentence: String,
    pub target: String,
    pub position: usize,
    pub candidates: Vec<String>,
}

impl SimplificationExample {
    pub fn tokens(&self) -> Vec<String> {
        self.sentence.split_whitespace().map(str::to_lowercase).collect()
    }
}

/// Reads `sentence TAB target TAB position TAB rank:word ...`. Candidates
/// are ordered by rank with the prefix removed; equal ranks keep file order.
pub fn parse_benchls(path: &Path) -> Result<Vec<SimplificationExample>> {
    parse_benchls_str(&read_text(path)?, &path.display().to_string())
}

pub fn parse_benchls_str(text: &str, origin: &str) -> Result<Vec<SimplificationExample>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() < 3 {
            return Err(validation(origin, line, format!("expected at least 3 columns, found {}", cols.len())));
        }
        let sentence = cols[0].to_owned();
        let position: usize = cols[2]
            .trim()
            .parse()
            .map_err(|_| validation(origin, line, format!("position {:?} is not an integer", cols[2])))?;
        let n_tokens = sentence.split_whitespace().count();
        if position >= n_tokens {
            return Err(validation(
                origin,
                line,
                format!("position {position} outside sentence of {n_tokens} tokens"),
            ));
        }
        let mut ranked = Vec::new();
        for field in cols[3..].iter().filter(|f| !f.trim().is_empty()) {
            let (rank, word) = field
                .split_once(':')
                .ok_or_else(|| validation(origin, line, format!("candidate {field:?} lacks a rank prefix")))?;
            let rank: u32 = rank
                .trim()
                .parse()
                .map_err(|_| validation(origin, line, format!("rank {rank:?} is not an integer")))?;
            ranked.push((rank, word.trim().to_owned()));
        }
        if ranked.is_empty() {
            return Err(validation(origin, line, "no candidate substitutions"));
        }
        ranked.sort_by_key(|&(rank, _)| rank);
        out.push(SimplificationExample {
            sentence,
            target: cols[1].trim().to_owned(),
            position,
            candidates: ranked.into_iter().map(|(_, w)| w).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn direct_parse() {
        let ex = parse_benchls_str("the cat sat\tsat\t2\t1:rested\t2:perched\n", "f").unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].target, "sat");
        assert_eq!(ex[0].position, 2);
        assert_eq!(ex[0].candidates, ["rested", "perched"]);
    }

    #[test]
    fn empty_candidates_rejected_with_row() {
        let text = "a b\tb\t1\t1:c\nthe cat sat\tsat\t2\n";
        match parse_benchls_str(text, "f") {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_position_rejected() {
        assert!(parse_benchls_str("a b\tb\tx\t1:c\n", "f").is_err());
        assert!(parse_benchls_str("a b\tb\t2\t1:c\n", "f").is_err());
    }

    proptest! {
        #[test]
        fn shuffled_ranks_sort_back(perm in Just((1u32..=6).collect::<Vec<_>>()).prop_shuffle()) {
            let words: Vec<String> = perm.iter().map(|r| format!("w{r}")).collect();
            let fields: Vec<String> = perm.iter().zip(&words).map(|(r, w)| format!("{r}:{w}")).collect();
            let line = format!("x y z\ty\t1\t{}\n", fields.join("\t"));
            let ex = parse_benchls_str(&line, "p").unwrap();
            let expected: Vec<String> = (1..=6).map(|r| format!("w{r}")).collect();
            prop_assert_eq!(&ex[0].candidates, &expected);
        }
    }
}
