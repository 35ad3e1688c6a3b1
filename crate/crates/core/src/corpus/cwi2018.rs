use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::{char_slice, read_text, validation, AnnotatedExample, AnnotatorCounts, TargetSpan};
use crate::error::{Error, Result};

const COLUMNS: usize = 11;

/// Group label from a shared-task file name: the text before the first
/// underscore, lowercased (`WikiNews_Train.tsv` → `wikinews`).
pub fn group_from_file_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let head = stem.split('_').next().filter(|h| !h.is_empty())?;
    Some(head.to_lowercase())
}

/// Reads the headerless 11-column shared-task layout. Offsets are checked
/// against the raw sentence, then sentence and span are NFC-normalised and
/// the offsets recomputed.
pub fn parse_cwi2018(path: &Path, group: Option<&str>) -> Result<Vec<AnnotatedExample>> {
    let group = match group {
        Some(g) => g.to_owned(),
        None => group_from_file_name(path).ok_or_else(|| {
            Error::Config(format!("cannot infer a group from {}", path.display()))
        })?,
    };
    parse_cwi2018_str(&read_text(path)?, &path.display().to_string(), &group)
}

pub fn parse_cwi2018_str(text: &str, origin: &str, group: &str) -> Result<Vec<AnnotatedExample>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(validation(
                origin,
                line,
                format!("expected {COLUMNS} columns, found {}", cols.len()),
            ));
        }
        let int = |k: usize, name: &str| -> Result<u32> {
            cols[k]
                .trim()
                .parse()
                .map_err(|_| validation(origin, line, format!("{name} {:?} is not an integer", cols[k])))
        };
        let start = int(2, "start")? as usize;
        let end = int(3, "end")? as usize;
        let annotators = AnnotatorCounts {
            native: int(5, "native annotators")?,
            non_native: int(6, "non-native annotators")?,
            native_marked: int(7, "native marks")?,
            non_native_marked: int(8, "non-native marks")?,
        };
        let gold: f64 = cols[10]
            .trim()
            .parse()
            .map_err(|_| validation(origin, line, format!("probability {:?} is not a number", cols[10])))?;
        if !(0.0..=1.0).contains(&gold) {
            return Err(validation(origin, line, format!("probability {gold} outside [0, 1]")));
        }

        let sentence = cols[1];
        let surface = cols[4];
        match char_slice(sentence, start, end) {
            Some(s) if s == surface => {}
            found => {
                return Err(validation(
                    origin,
                    line,
                    format!("span {start}..{end} reads {found:?}, expected {surface:?}"),
                ))
            }
        }
        let prefix: String = char_slice(sentence, 0, start).unwrap_or_default().nfc().collect();
        let surface: String = surface.nfc().collect();
        let sentence: String = sentence.nfc().collect();
        let start = prefix.chars().count();
        let end = start + surface.chars().count();
        let example = AnnotatedExample {
            id: format!("{}:{line}", cols[0]),
            group: group.to_owned(),
            sentence,
            target: TargetSpan { start, end, surface },
            gold,
            annotators: Some(annotators),
        };
        example
            .validate()
            .map_err(|detail| validation(origin, line, format!("after normalisation: {detail}")))?;
        out.push(example);
    }
    Ok(out)
}
