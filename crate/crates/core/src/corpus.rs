//! Interview transcripts and human reference categories.
//!
//! Transcripts are plain UTF-8 text files, one interview per file. Speaker
//! turn markup is passed through untouched; the coding prompt tells the model
//! which speaker to focus on.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default per-transcript character budget. Longer files are rejected rather
/// than chunked.
pub const DEFAULT_MAX_CHARS: usize = 48_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus directory not found: {0}")]
    MissingDir(PathBuf),
    #[error("no .{extension} transcripts found in {dir}")]
    NoTranscripts { dir: PathBuf, extension: String },
    #[error("{0}: not valid UTF-8")]
    NotUtf8(PathBuf),
    #[error("{0}: empty transcript")]
    EmptyTranscript(PathBuf),
    #[error(
        "{path}: {chars} characters exceeds the budget of {max}; split the interview into smaller files"
    )]
    TooLong {
        path: PathBuf,
        chars: usize,
        max: usize,
    },
    #[error("duplicate transcript id {0:?}")]
    DuplicateTranscript(String),
    #[error("invalid language tag {0:?}")]
    BadLanguage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Reference { path: PathBuf, message: String },
}

/// One interview document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub language: String,
    pub text: String,
    pub source_path: PathBuf,
    pub char_count: usize,
}

impl Transcript {
    pub fn new(
        id: impl Into<String>,
        language: impl Into<String>,
        text: impl Into<String>,
        source_path: impl Into<PathBuf>,
    ) -> Self {
        let text = text.into();
        Transcript {
            id: id.into(),
            language: language.into(),
            char_count: text.chars().count(),
            text,
            source_path: source_path.into(),
        }
    }
}

/// A human-produced analysis category used as the comparison standard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCategory {
    pub id: String,
    pub label: String,
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub extension: String,
    pub max_chars: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            extension: "txt".to_string(),
            max_chars: DEFAULT_MAX_CHARS,
        }
    }
}

/// Checks a BCP-47-style tag such as `it`, `en`, or `pt-BR`.
pub fn validate_language(tag: &str) -> Result<(), CorpusError> {
    let re = Regex::new(r"^[A-Za-z]{2,3}(-[A-Za-z0-9]{2,8})*$").expect("static regex");
    if re.is_match(tag) {
        Ok(())
    } else {
        Err(CorpusError::BadLanguage(tag.to_string()))
    }
}

pub fn load_corpus(dir: &Path, language: &str) -> Result<Vec<Transcript>, CorpusError> {
    load_corpus_with(dir, language, &CorpusOptions::default())
}

/// Loads every `*.{extension}` file in `dir` (non-recursive) as a transcript.
///
/// Ids are filename stems and the result is sorted by id, so the output does
/// not depend on directory enumeration order.
pub fn load_corpus_with(
    dir: &Path,
    language: &str,
    opts: &CorpusOptions,
) -> Result<Vec<Transcript>, CorpusError> {
    validate_language(language)?;
    if !dir.is_dir() {
        return Err(CorpusError::MissingDir(dir.to_path_buf()));
    }
    let io_err = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let matches = path.is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case(&opts.extension));
        if matches {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(CorpusError::NoTranscripts {
            dir: dir.to_path_buf(),
            extension: opts.extension.clone(),
        });
    }

    let mut transcripts = Vec::with_capacity(paths.len());
    for path in paths {
        transcripts.push(load_transcript(&path, language, opts.max_chars)?);
    }
    transcripts.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in transcripts.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(CorpusError::DuplicateTranscript(pair[0].id.clone()));
        }
    }
    Ok(transcripts)
}

fn load_transcript(path: &Path, language: &str, max_chars: usize) -> Result<Transcript, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|_| CorpusError::NotUtf8(path.to_path_buf()))?;
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyTranscript(path.to_path_buf()));
    }
    let chars = text.chars().count();
    if chars > max_chars {
        return Err(CorpusError::TooLong {
            path: path.to_path_buf(),
            chars,
            max: max_chars,
        });
    }
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CorpusError::NotUtf8(path.to_path_buf()))?
        .to_string();
    Ok(Transcript::new(id, language, text, path))
}

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    id: String,
    label: String,
    #[serde(default)]
    detail: Option<String>,
}

/// Reads an `id,label,detail` CSV. Row order is preserved; an empty `detail`
/// cell becomes `None`.
pub fn load_reference_categories(file: &Path) -> Result<Vec<ReferenceCategory>, CorpusError> {
    let reference_err = |message: String| CorpusError::Reference {
        path: file.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(file)
        .map_err(|e| reference_err(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| reference_err(e.to_string()))?
        .clone();
    let expected = ["id", "label", "detail"];
    if headers.iter().map(str::trim).collect::<Vec<_>>() != expected {
        return Err(reference_err(format!(
            "expected header id,label,detail, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut seen = HashSet::new();
    let mut categories = Vec::new();
    for (line, row) in reader.deserialize::<ReferenceRow>().enumerate() {
        let row = row.map_err(|e| reference_err(e.to_string()))?;
        let id = row.id.trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(reference_err(format!("duplicate id {id:?}")));
        }
        let label = row.label.trim().to_string();
        if label.is_empty() {
            return Err(reference_err(format!("row {}: missing label", line + 2)));
        }
        let detail = row
            .detail
            .map(|d| d.trim().to_string())
            .filter(|d| !d.is_empty());
        categories.push(ReferenceCategory { id, label, detail });
    }
    Ok(categories)
}
