//! Row counts on the released corpora. Runs only when
//! `LEXADAPT_OFFICIAL_DATA` names a directory holding the files below;
//! otherwise each test returns early.

use std::path::PathBuf;

use lexadapt::corpus::{char_slice, parse_complex_lcp, parse_cwi2018};

fn official(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os("LEXADAPT_OFFICIAL_DATA")?;
    let path = PathBuf::from(dir).join(name);
    if path.exists() {
        Some(path)
    } else {
        eprintln!("skipping: {} not found", path.display());
        None
    }
}

#[test]
fn complex_counts() {
    let files = [
        ("lcp_single_train.tsv", 7662),
        ("lcp_single_trial.tsv", 421),
        ("lcp_single_test.tsv", 917),
        ("lcp_multi_train.tsv", 1517),
    ];
    for (name, expected) in files {
        let Some(path) = official(name) else { continue };
        let examples = parse_complex_lcp(&path).unwrap();
        assert_eq!(examples.len(), expected, "{name}");
        assert!(examples.iter().all(|e| e.validate().is_ok()));
    }
}

#[test]
fn german_cwi_count_and_spans() {
    let Some(path) = official("German_Train.tsv") else { return };
    let examples = parse_cwi2018(&path, None).unwrap();
    assert_eq!(examples.len(), 6151);
    for ex in &examples {
        assert_eq!(char_slice(&ex.sentence, ex.target.start, ex.target.end), Some(ex.target.surface.as_str()));
    }
}

#[test]
fn english_cwi_training_total() {
    let names = ["News_Train.tsv", "WikiNews_Train.tsv", "Wikipedia_Train.tsv"];
    let paths: Option<Vec<PathBuf>> = names.iter().map(|n| official(n)).collect();
    let Some(paths) = paths else { return };
    let total: usize = paths.iter().map(|p| parse_cwi2018(p, None).unwrap().len()).sum();
    assert_eq!(total, 27299);
}
