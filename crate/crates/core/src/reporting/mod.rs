//! Run directories, the run manifest, and artifact writers.

mod heatmap;
mod summary;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::evaluation::SimilarityMatrix;
use crate::gateway::TokenUsage;

pub use heatmap::{render_heatmap_svg, render_heatmap_svg_string, ColorScale};
pub use summary::{render_run_summary, write_run_summary, CorpusStats, EvalSection, RunSummary, SummaryInputs};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid color {0:?}; expected #rrggbb")]
    Color(String),
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("manifest indexes {name} at {path}, which does not exist")]
    MissingArtifact { name: String, path: PathBuf },
    #[error("{path}: manifest is not valid JSON: {message}")]
    BadManifest { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a temporary file in the same directory, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| ReportError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn fmt4(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// Header row is an empty cell followed by column labels; each row is its
/// label followed by values at 4 decimals. CRLF line endings.
pub fn matrix_csv_string(m: &SimilarityMatrix) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("").chain(m.col_labels.iter().map(String::as_str)).collect();
    w.write_record(&header).expect("in-memory write");
    for (label, row) in m.row_labels.iter().zip(&m.values) {
        let mut record = vec![label.clone()];
        record.extend(row.iter().map(|&v| fmt4(v)));
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 labels")
}

pub fn export_matrix_csv(m: &SimilarityMatrix, path: &Path) -> Result<(), ReportError> {
    write_atomic(path, matrix_csv_string(m).as_bytes())
}

/// `20261016T142233Z-3fa9c1`: UTC timestamp plus 6 random hex digits.
pub fn new_run_id() -> String {
    let suffix: u32 = rand::thread_rng().gen_range(0..0x100_0000);
    format!("{}-{suffix:06x}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub duration_ms: u64,
    pub requests: u64,
    pub retries: u64,
    pub failures: u64,
    pub tokens: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    /// Resolved configuration. Must not contain credentials.
    pub config_snapshot: Value,
    pub prompt_fingerprints: BTreeMap<String, String>,
    pub model_ids: BTreeMap<String, String>,
    pub providers: BTreeMap<String, String>,
    pub temperatures: Vec<f64>,
    /// Artifact name to path relative to the run directory.
    pub file_index: BTreeMap<String, PathBuf>,
    pub phases: BTreeMap<String, PhaseStats>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, config_snapshot: Value) -> Self {
        RunManifest {
            run_id: run_id.into(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_snapshot,
            prompt_fingerprints: BTreeMap::new(),
            model_ids: BTreeMap::new(),
            providers: BTreeMap::new(),
            temperatures: Vec::new(),
            file_index: BTreeMap::new(),
            phases: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn add_temperature(&mut self, t: f64) {
        if !self.temperatures.contains(&t) {
            self.temperatures.push(t);
            self.temperatures.sort_by(f64::total_cmp);
        }
    }

    /// Folds in a manifest from an earlier command on the same run directory;
    /// entries from `self` win.
    pub fn merge_from(&mut self, earlier: RunManifest) {
        for (k, v) in earlier.prompt_fingerprints {
            self.prompt_fingerprints.entry(k).or_insert(v);
        }
        for (k, v) in earlier.model_ids {
            self.model_ids.entry(k).or_insert(v);
        }
        for (k, v) in earlier.providers {
            self.providers.entry(k).or_insert(v);
        }
        for (k, v) in earlier.file_index {
            self.file_index.entry(k).or_insert(v);
        }
        for (k, v) in earlier.phases {
            self.phases.entry(k).or_insert(v);
        }
        for t in earlier.temperatures {
            self.add_temperature(t);
        }
        let mut notes = earlier.notes;
        notes.retain(|n| !self.notes.contains(n));
        notes.append(&mut self.notes);
        self.notes = notes;
    }
}

/// A run directory, `<root>/<run_id>/`. One writer per directory.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub const MANIFEST: &'static str = "manifest.json";

    /// Creates (or reopens) the directory. A manifest left by an earlier
    /// command is merged so its artifacts stay indexed.
    pub fn open(output_root: &Path, manifest: RunManifest) -> Result<Self, ReportError> {
        let root = output_root.join(&manifest.run_id);
        std::fs::create_dir_all(&root).map_err(io_err(&root))?;
        let mut dir = RunDir { root, manifest };
        let existing = dir.root.join(Self::MANIFEST);
        if existing.exists() {
            let earlier = read_manifest(&existing)?;
            dir.manifest.merge_from(earlier);
        }
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn join(&self, relative: impl AsRef<Path>) -> PathBuf {
        self.root.join(relative)
    }

    /// Writes an artifact atomically and indexes it under `name`.
    pub fn write(&mut self, name: &str, relative: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf, ReportError> {
        let relative = relative.as_ref();
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        write_atomic(&path, bytes)?;
        self.manifest.file_index.insert(name.to_string(), relative.to_path_buf());
        Ok(path)
    }

    /// Indexes a file some other writer already produced.
    pub fn index(&mut self, name: &str, relative: impl AsRef<Path>) {
        self.manifest
            .file_index
            .insert(name.to_string(), relative.as_ref().to_path_buf());
    }

    /// Writes `manifest.json` last. Every indexed path must exist.
    pub fn finish(&mut self) -> Result<PathBuf, ReportError> {
        for (name, rel) in &self.manifest.file_index {
            if !self.root.join(rel).exists() {
                return Err(ReportError::MissingArtifact {
                    name: name.clone(),
                    path: rel.clone(),
                });
            }
        }
        let path = self.root.join(Self::MANIFEST);
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, ReportError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ReportError::BadManifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
