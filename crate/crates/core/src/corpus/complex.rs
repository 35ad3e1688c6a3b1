use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, validation, AnnotatedExample, TargetSpan};
use crate::error::{Error, Result};

const HEADER: [&str; 5] = ["id", "corpus", "sentence", "token", "complexity"];

/// Reads the tab-separated CompLex layout (`id corpus sentence token
/// complexity`, with header). The corpus column becomes the group.
pub fn parse_complex_lcp(path: &Path) -> Result<Vec<AnnotatedExample>> {
    parse_complex_lcp_str(&read_text(path)?, &path.display().to_string())
}

pub fn parse_complex_lcp_str(text: &str, origin: &str) -> Result<Vec<AnnotatedExample>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r').split('\t').collect(),
        None => return Err(validation(origin, 1, "empty file")),
    };
    if header != HEADER {
        return Err(validation(
            origin,
            1,
            format!("expected header {:?}, found {header:?}", HEADER.join("\\t")),
        ));
    }

    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != HEADER.len() {
            return Err(validation(
                origin,
                line,
                format!("expected {} columns, found {}", HEADER.len(), cols.len()),
            ));
        }
        let gold: f64 = cols[4]
            .trim()
            .parse()
            .map_err(|_| validation(origin, line, format!("complexity {:?} is not a number", cols[4])))?;
        if !(0.0..=1.0).contains(&gold) {
            return Err(validation(origin, line, format!("complexity {gold} outside [0, 1]")));
        }
        let sentence = cols[2].to_owned();
        let token = cols[3].trim();
        let target = locate(&sentence, token).ok_or_else(|| {
            validation(origin, line, format!("target {token:?} does not occur in the sentence"))
        })?;
        out.push(AnnotatedExample {
            id: cols[0].to_owned(),
            group: cols[1].trim().to_owned(),
            sentence,
            target,
            gold,
            annotators: None,
        });
    }
    Ok(out)
}

/// First exact occurrence, else the first case-insensitive one. The span
/// surface is always the text as it appears in the sentence.
fn locate(sentence: &str, token: &str) -> Option<TargetSpan> {
    if token.is_empty() {
        return None;
    }
    let span_at = |byte: usize, len: usize| {
        let start = sentence[..byte].chars().count();
        let surface = &sentence[byte..byte + len];
        TargetSpan {
            start,
            end: start + surface.chars().count(),
            surface: surface.to_owned(),
        }
    };
    if let Some(b) = sentence.find(token) {
        return Some(span_at(b, token.len()));
    }
    let n = token.chars().count();
    let want: Vec<char> = token.chars().flat_map(char::to_lowercase).collect();
    let starts: Vec<usize> = sentence.char_indices().map(|(b, _)| b).collect();
    starts.iter().enumerate().find_map(|(ci, &b)| {
        let end = starts.get(ci + n).copied().unwrap_or(sentence.len());
        if ci + n > starts.len() {
            return None;
        }
        let window = &sentence[b..end];
        let lower: Vec<char> = window.chars().flat_map(char::to_lowercase).collect();
        (lower == want).then(|| span_at(b, window.len()))
    })
}

/// Writes examples in the layout [`parse_complex_lcp`] reads.
pub fn write_complex_lcp(path: &Path, examples: &[AnnotatedExample]) -> Result<()> {
    let mut out = HEADER.join("\t");
    out.push('\n');
    for ex in examples {
        let fields = [&ex.id, &ex.group, &ex.sentence, &ex.target.surface];
        if fields.iter().any(|f| f.contains(['\t', '\n', '\r'])) {
            return Err(Error::Contract(format!(
                "example {:?} contains a tab or newline",
                ex.id
            )));
        }
        writeln!(out, "{}\t{}\t{}\t{}\t{}", ex.id, ex.group, ex.sentence, ex.target.surface, ex.gold)
            .expect("writing to a String");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "id\tcorpus\tsentence\ttoken\tcomplexity\n\
        a1\tbible\tThe cat sat.\tcat\t0.0\n\
        a2\tbiomed\tGenome database search revealed orthologs.\tdatabase search\t1.0\n";

    #[test]
    fn two_rows_preserved_exactly() {
        let ex = parse_complex_lcp_str(FIXTURE, "fixture").unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].gold, 0.0);
        assert_eq!(ex[1].gold, 1.0);
        assert_eq!(ex[1].group, "biomed");
        assert_eq!(ex[1].target.surface, "database search");
        assert!(ex.iter().all(|e| e.validate().is_ok()));
    }

    #[test]
    fn out_of_range_complexity_rejected_with_line() {
        let text = "id\tcorpus\tsentence\ttoken\tcomplexity\nx\tbible\tA b\tb\t1.2\n";
        match parse_complex_lcp_str(text, "f") {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "id\tcorpus\tsentence\ttoken\tcomplexity\nx\tbible\tA b\tb\t0.5\ny\tbible\n";
        match parse_complex_lcp_str(text, "f") {
            Err(Error::Validation { line, detail, .. }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("columns"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn case_insensitive_fallback_keeps_sentence_surface() {
        let span = locate("Über Straßen", "straßen").unwrap();
        assert_eq!((span.start, span.end), (5, 12));
        assert_eq!(span.surface, "Straßen");
        assert!(locate("abc", "abcd").is_none());
    }

    #[test]
    fn write_then_parse_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let ex = parse_complex_lcp_str(FIXTURE, "fixture").unwrap();
        write_complex_lcp(&path, &ex).unwrap();
        assert_eq!(parse_complex_lcp(&path).unwrap(), ex);
    }
}
