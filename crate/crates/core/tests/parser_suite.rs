use std::path::PathBuf;

use serde::Deserialize;
use thema_core::coding::{parse_codebook_json, ParseError};
use thema_core::prompting::builtin;

#[derive(Deserialize)]
struct Case {
    file: String,
    expect: String,
    count: Option<usize>,
    error: Option<String>,
}

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/parser")
}

fn cases() -> Vec<Case> {
    serde_json::from_str(&std::fs::read_to_string(dir().join("cases.json")).unwrap()).unwrap()
}

fn error_tag(e: &ParseError) -> &'static str {
    match e {
        ParseError::Empty => "empty",
        ParseError::NoJson => "no_json",
        ParseError::MissingContainer(_) => "missing_container",
        ParseError::NoValidEntries(_) => "no_valid_entries",
    }
}

#[test]
fn every_case_behaves_as_listed() {
    let keys = builtin("coding-it").unwrap().output_key_map;
    let cases = cases();
    assert_eq!(cases.len(), 12);
    for case in cases {
        let raw = std::fs::read_to_string(dir().join(&case.file)).unwrap();
        let result = parse_codebook_json(&raw, &keys);
        match case.expect.as_str() {
            "ok" => {
                let parsed = result.unwrap_or_else(|e| panic!("{}: {e}", case.file));
                assert_eq!(Some(parsed.triples.len()), case.count, "{}", case.file);
            }
            "reject" => {
                let err = result.err().unwrap_or_else(|| panic!("{} should be rejected", case.file));
                assert_eq!(Some(error_tag(&err)), case.error.as_deref(), "{}", case.file);
            }
            other => panic!("bad expectation {other}"),
        }
    }
}

#[test]
fn table_entries_survive_verbatim() {
    let keys = builtin("coding-it").unwrap().output_key_map;
    let clean = parse_codebook_json(&std::fs::read_to_string(dir().join("01_clean.txt")).unwrap(), &keys).unwrap();
    for file in ["02_fenced_prose.txt", "03_mid_text.txt", "04_fence_no_lang_crlf.txt", "05_keyed_object.txt"] {
        let other = parse_codebook_json(&std::fs::read_to_string(dir().join(file)).unwrap(), &keys).unwrap();
        assert_eq!(other.triples, clean.triples, "{file}");
    }
    let first = &clean.triples[0];
    assert_eq!(first.name, "Edizioni digitali");
    assert_eq!(
        first.description,
        "Nuove frontiere nel settore delle edizioni digitali di fonti manoscritte"
    );
    assert!(clean.triples[3].quote.starts_with("Ci sono aspetti di privacy sicuramente nei dati:"));
}

#[test]
fn partial_entry_is_skipped_with_a_warning() {
    let keys = builtin("coding-it").unwrap().output_key_map;
    let raw = std::fs::read_to_string(dir().join("08_partial_entry.txt")).unwrap();
    let parsed = parse_codebook_json(&raw, &keys).unwrap();
    assert_eq!(parsed.warnings.len(), 1);
    assert!(parsed.warnings[0].contains("quote"), "{:?}", parsed.warnings);
    assert!(parsed.triples.iter().all(|t| t.name != "Dati della ricerca"));
}
