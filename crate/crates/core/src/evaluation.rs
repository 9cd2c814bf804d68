//! Similarity matrices between labeled text sets, pair alignment, diagonal
//! analysis, codebook A/B comparison, and human-score ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coding::Codebook;
use crate::corpus::ReferenceCategory;
use crate::error::ErrorKind;
use crate::gateway::{EmbeddingProvider, EmbeddingVector, GatewayError};
use crate::theming::{strip_theme_prefix, ThemeSet};

pub const DEFAULT_DIAGONAL_THRESHOLD: f64 = 0.6;

/// Drift beyond [-1, 1] tolerated (and clamped) before a score is rejected.
const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("cosine {0} is outside [-1, 1]; the embedder is broken")]
    OutOfRange(f64),
    #[error("text set {0:?} is empty")]
    EmptySet(String),
    #[error("text set {set:?}: duplicate label {label:?}")]
    DuplicateLabel { set: String, label: String },
    #[error("embedding failed: {0}")]
    Embed(#[source] GatewayError),
    #[error("{context}: unknown {side} label {label:?}; known {side} labels: {known:?}")]
    UnknownLabel {
        context: String,
        side: &'static str,
        label: String,
        known: Vec<String>,
    },
    #[error("label {0:?} appears in more than one pair")]
    RepeatedLabel(String),
    #[error("cannot align an empty matrix")]
    EmptyMatrix,
    #[error("alignment has no pairs")]
    EmptyAlignment,
    #[error("{path}: line {line}: score {score} outside [0, 10]")]
    ScoreOutOfRange { path: String, line: u64, score: f64 },
    #[error("{path}: line {line}: pair ({row:?}, {col:?}) is not in the alignment")]
    UnknownPair { path: String, line: u64, row: String, col: String },
    #[error("codebooks cover different transcripts: {a:?} vs {b:?}")]
    DifferentTranscripts { a: Vec<String>, b: Vec<String> },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

impl EvalError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            EvalError::Embed(_) => ErrorKind::Provider,
            _ => ErrorKind::Input,
        }
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EvalError> {
    cosine_slices(&a.values, &b.values)
}

/// dot(a, b) / (|a| |b|), with norms recomputed from the values. Results
/// within 1e-9 outside [-1, 1] are clamped; anything further is an error.
pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    let c = dot / (na * nb);
    if c.is_nan() || c.abs() > 1.0 + CLAMP_TOLERANCE {
        return Err(EvalError::OutOfRange(c));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Which part of a theme or category is embedded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TextMode {
    #[default]
    #[serde(rename = "names")]
    Names,
    #[serde(rename = "names+descriptions")]
    NamesAndDescriptions,
}

impl fmt::Display for TextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextMode::Names => "names",
            TextMode::NamesAndDescriptions => "names+descriptions",
        })
    }
}

impl FromStr for TextMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "names" => Ok(TextMode::Names),
            "names+descriptions" => Ok(TextMode::NamesAndDescriptions),
            other => Err(format!("unknown embed-text mode {other:?} (names | names+descriptions)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub label: String,
    /// The string sent to the embedder.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTextSet {
    pub id: String,
    pub items: Vec<LabeledText>,
}

impl LabeledTextSet {
    pub fn new(id: impl Into<String>, items: Vec<LabeledText>) -> Result<Self, EvalError> {
        let set = LabeledTextSet { id: id.into(), items };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.items.is_empty() {
            return Err(EvalError::EmptySet(self.id.clone()));
        }
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if !seen.insert(item.label.as_str()) {
                return Err(EvalError::DuplicateLabel {
                    set: self.id.clone(),
                    label: item.label.clone(),
                });
            }
        }
        Ok(())
    }

    /// Builds a set from `(label, text)` pairs; repeated labels get ` (2)`,
    /// ` (3)`, ... suffixes so every row stays addressable.
    pub fn deduplicated(id: impl Into<String>, pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self, EvalError> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut taken: BTreeSet<String> = BTreeSet::new();
        let mut items = Vec::new();
        for (label, text) in pairs {
            let n = counts.entry(label.clone()).or_default();
            *n += 1;
            let mut unique = if *n == 1 { label.clone() } else { format!("{label} ({n})") };
            while taken.contains(&unique) {
                *n += 1;
                unique = format!("{label} ({n})");
            }
            taken.insert(unique.clone());
            items.push(LabeledText { label: unique, text });
        }
        LabeledTextSet::new(id, items)
    }

    pub fn from_themes(id: impl Into<String>, set: &ThemeSet, mode: TextMode) -> Result<Self, EvalError> {
        LabeledTextSet::deduplicated(
            id,
            set.themes.iter().map(|t| {
                let text = match mode {
                    TextMode::Names => t.name.clone(),
                    TextMode::NamesAndDescriptions => t.embedding_text(),
                };
                (t.name.clone(), text)
            }),
        )
    }

    pub fn from_categories(id: impl Into<String>, categories: &[ReferenceCategory], mode: TextMode) -> Result<Self, EvalError> {
        LabeledTextSet::deduplicated(
            id,
            categories.iter().map(|c| {
                let text = match (mode, &c.detail) {
                    (TextMode::NamesAndDescriptions, Some(detail)) => format!("{} - {detail}", c.label),
                    _ => c.label.clone(),
                };
                (c.label.clone(), text)
            }),
        )
    }

    /// Codes are embedded by name only.
    pub fn from_codebook(id: impl Into<String>, cb: &Codebook) -> Result<Self, EvalError> {
        LabeledTextSet::deduplicated(id, cb.codes.iter().map(|c| (c.name.clone(), c.name.clone())))
    }

    pub fn labels(&self) -> Vec<String> {
        self.items.iter().map(|i| i.label.clone()).collect()
    }

    fn texts(&self) -> Vec<String> {
        self.items.iter().map(|i| i.text.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `values[i][j]` = cosine(row i, col j).
    pub values: Vec<Vec<f64>>,
    pub embedder_id: String,
}

impl SimilarityMatrix {
    pub fn from_vectors(
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        rows: &[EmbeddingVector],
        cols: &[EmbeddingVector],
        embedder_id: impl Into<String>,
    ) -> Result<Self, EvalError> {
        let values = rows
            .iter()
            .map(|r| cols.iter().map(|c| cosine(r, c)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SimilarityMatrix {
            row_labels,
            col_labels,
            values,
            embedder_id: embedder_id.into(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_labels.len(), self.col_labels.len())
    }

    pub fn is_empty(&self) -> bool {
        self.row_labels.is_empty() || self.col_labels.is_empty()
    }

    /// Reorders rows and columns so aligned pairs sit on the diagonal, in
    /// pair order; unpaired labels follow in their original order.
    pub fn aligned(&self, alignment: &PairAlignment) -> SimilarityMatrix {
        let order = |labels: &[String], paired: Vec<&String>| -> Vec<usize> {
            let mut order: Vec<usize> = paired
                .into_iter()
                .filter_map(|p| labels.iter().position(|l| l == p))
                .collect();
            let rest: Vec<usize> = (0..labels.len()).filter(|i| !order.contains(i)).collect();
            order.extend(rest);
            order
        };
        let rows = order(&self.row_labels, alignment.pairs.iter().map(|(r, _)| r).collect());
        let cols = order(&self.col_labels, alignment.pairs.iter().map(|(_, c)| c).collect());
        SimilarityMatrix {
            row_labels: rows.iter().map(|&i| self.row_labels[i].clone()).collect(),
            col_labels: cols.iter().map(|&j| self.col_labels[j].clone()).collect(),
            values: rows
                .iter()
                .map(|&i| cols.iter().map(|&j| self.values[i][j]).collect())
                .collect(),
            embedder_id: self.embedder_id.clone(),
        }
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.row_labels.iter().position(|l| l == row)?;
        let j = self.col_labels.iter().position(|l| l == col)?;
        Some(self.values[i][j])
    }
}

/// Embeds rows and columns in one batch each and fills every cell.
pub fn similarity_matrix(
    rows: &LabeledTextSet,
    cols: &LabeledTextSet,
    embedder: &dyn EmbeddingProvider,
) -> Result<SimilarityMatrix, EvalError> {
    rows.validate()?;
    cols.validate()?;
    let row_vectors = embedder.embed(&rows.texts()).map_err(EvalError::Embed)?;
    let col_vectors = embedder.embed(&cols.texts()).map_err(EvalError::Embed)?;
    if let (Some(r), Some(c)) = (row_vectors.first(), col_vectors.first()) {
        if r.dimension() != c.dimension() {
            return Err(EvalError::DimensionMismatch(r.dimension(), c.dimension()));
        }
    }
    SimilarityMatrix::from_vectors(rows.labels(), cols.labels(), &row_vectors, &col_vectors, embedder.id())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentSource {
    ManualFile,
    GreedyAuto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAlignment {
    pub pairs: Vec<(String, String)>,
    pub source: AlignmentSource,
    /// Rows explicitly left unpaired in a manual file.
    pub unmatched_rows: Vec<String>,
}

impl PairAlignment {
    pub fn new(pairs: Vec<(String, String)>, source: AlignmentSource) -> Result<Self, EvalError> {
        let mut rows = BTreeSet::new();
        let mut cols = BTreeSet::new();
        for (r, c) in &pairs {
            if !rows.insert(r.as_str()) {
                return Err(EvalError::RepeatedLabel(r.clone()));
            }
            if !cols.insert(c.as_str()) {
                return Err(EvalError::RepeatedLabel(c.clone()));
            }
        }
        Ok(PairAlignment {
            pairs,
            source,
            unmatched_rows: Vec::new(),
        })
    }

    pub fn contains(&self, row: &str, col: &str) -> bool {
        self.pairs.iter().any(|(r, c)| r == row && c == col)
    }
}

fn norm_label(s: &str) -> String {
    strip_theme_prefix(s).to_lowercase()
}

/// Resolves a label read from a file: exact match first, then ignoring a
/// `Tema N:` numbering prefix and letter case.
pub fn resolve_label(label: &str, known: &[String]) -> Option<String> {
    let label = label.trim();
    if let Some(k) = known.iter().find(|k| k.as_str() == label) {
        return Some(k.clone());
    }
    let wanted = norm_label(label);
    let mut hits = known.iter().filter(|k| norm_label(k) == wanted);
    match (hits.next(), hits.next()) {
        (Some(k), None) => Some(k.clone()),
        _ => None,
    }
}

fn csv_err(path: &str, e: impl fmt::Display) -> EvalError {
    EvalError::Csv {
        path: path.to_string(),
        message: e.to_string(),
    }
}

/// Records of a small CSV file, skipping an optional header whose first cell
/// is `header_first`. Each record comes with its line number.
fn read_records(text: &str, path: &str, header_first: &str) -> Result<Vec<(u64, csv::StringRecord)>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if i == 0 && record.get(0).map(str::trim) == Some(header_first) {
            continue;
        }
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        out.push((line, record));
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|e| csv_err(&path.display().to_string(), e))
}

/// Reads a `row_label,col_label` CSV. An empty `col_label` marks the row as
/// deliberately unpaired.
pub fn align_manual(path: &Path, row_labels: &[String], col_labels: &[String]) -> Result<PairAlignment, EvalError> {
    align_manual_str(&read_file(path)?, &path.display().to_string(), row_labels, col_labels)
}

pub fn align_manual_str(
    text: &str,
    context: &str,
    row_labels: &[String],
    col_labels: &[String],
) -> Result<PairAlignment, EvalError> {
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (line, record) in read_records(text, context, "row_label")? {
        let unknown = |side, label: &str, known: &[String]| EvalError::UnknownLabel {
            context: format!("{context}: line {line}"),
            side,
            label: label.to_string(),
            known: known.to_vec(),
        };
        let row_raw = record.get(0).unwrap_or("").trim();
        let col_raw = record.get(1).unwrap_or("").trim();
        let row = resolve_label(row_raw, row_labels).ok_or_else(|| unknown("row", row_raw, row_labels))?;
        if col_raw.is_empty() {
            unmatched.push(row);
            continue;
        }
        let col = resolve_label(col_raw, col_labels).ok_or_else(|| unknown("column", col_raw, col_labels))?;
        pairs.push((row, col));
    }
    let mut alignment = PairAlignment::new(pairs, AlignmentSource::ManualFile)?;
    if alignment.pairs.is_empty() {
        return Err(EvalError::EmptyAlignment);
    }
    alignment.unmatched_rows = unmatched;
    Ok(alignment)
}

/// Repeatedly takes the highest unused cell. Ties go to the lower row index,
/// then the lower column index.
pub fn align_greedy(matrix: &SimilarityMatrix) -> Result<PairAlignment, EvalError> {
    if matrix.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    let (n, m) = matrix.shape();
    let mut cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    cells.sort_by(|&(i1, j1), &(i2, j2)| {
        matrix.values[i2][j2]
            .total_cmp(&matrix.values[i1][j1])
            .then(i1.cmp(&i2))
            .then(j1.cmp(&j2))
    });
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    let mut pairs = Vec::new();
    for (i, j) in cells {
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            pairs.push((matrix.row_labels[i].clone(), matrix.col_labels[j].clone()));
        }
    }
    PairAlignment::new(pairs, AlignmentSource::GreedyAuto)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub row: String,
    pub col: String,
    pub score: f64,
    pub below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalReport {
    pub threshold: f64,
    pub pairs: Vec<PairResult>,
    pub at_or_above: usize,
    pub total: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub summary: String,
}

impl DiagonalReport {
    pub fn flagged(&self) -> impl Iterator<Item = &PairResult> {
        self.pairs.iter().filter(|p| p.below_threshold)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("{}\n\n| Row | Column | Score | |\n|---|---|---|---|\n", self.summary);
        for p in &self.pairs {
            out.push_str(&format!(
                "| {} | {} | {:.2} | {} |\n",
                crate::theming::md_cell(&p.row),
                crate::theming::md_cell(&p.col),
                p.score,
                if p.below_threshold { "below" } else { "" }
            ));
        }
        out
    }
}

pub fn diagonal_report(matrix: &SimilarityMatrix, alignment: &PairAlignment, threshold: f64) -> Result<DiagonalReport, EvalError> {
    if alignment.pairs.is_empty() {
        return Err(EvalError::EmptyAlignment);
    }
    let mut pairs = Vec::with_capacity(alignment.pairs.len());
    for (row, col) in &alignment.pairs {
        let missing = |side, label: &str, known: &[String]| EvalError::UnknownLabel {
            context: "diagonal report".into(),
            side,
            label: label.to_string(),
            known: known.to_vec(),
        };
        if !matrix.row_labels.contains(row) {
            return Err(missing("row", row, &matrix.row_labels));
        }
        let score = matrix.get(row, col).ok_or_else(|| missing("column", col, &matrix.col_labels))?;
        pairs.push(PairResult {
            row: row.clone(),
            col: col.clone(),
            score,
            below_threshold: score + CLAMP_TOLERANCE < threshold,
        });
    }
    let scores: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    let total = pairs.len();
    let at_or_above = pairs.iter().filter(|p| !p.below_threshold).count();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = scores.iter().sum::<f64>() / total as f64;
    let mut summary = format!("{at_or_above}/{total} pairs at or above {threshold}");
    let flagged: Vec<String> = pairs
        .iter()
        .filter(|p| p.below_threshold)
        .map(|p| format!("{} / {} ({:.2})", p.row, p.col, p.score))
        .collect();
    if flagged.is_empty() {
        summary.push_str("; none flagged");
    } else {
        summary.push_str(&format!("; below: {}", flagged.join(", ")));
    }
    Ok(DiagonalReport {
        threshold,
        pairs,
        at_or_above,
        total,
        min,
        mean,
        max,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookComparison {
    /// Paired rows and columns first, in pair order, so pairs sit on the
    /// diagonal; unpaired labels follow.
    pub matrix: SimilarityMatrix,
    pub alignment: PairAlignment,
    pub report: DiagonalReport,
    pub unmatched_a: Vec<String>,
    pub unmatched_b: Vec<String>,
}

/// Compares two codebooks of the same transcript(s) by code name. Without a
/// manual pair file, pairs come from greedy alignment.
pub fn compare_codebooks(
    a: &Codebook,
    b: &Codebook,
    embedder: &dyn EmbeddingProvider,
    manual_pairs: Option<&Path>,
    threshold: f64,
) -> Result<CodebookComparison, EvalError> {
    let (ta, tb) = (a.transcript_ids(), b.transcript_ids());
    if ta != tb {
        return Err(EvalError::DifferentTranscripts {
            a: ta.into_iter().map(String::from).collect(),
            b: tb.into_iter().map(String::from).collect(),
        });
    }
    let rows = LabeledTextSet::from_codebook("a", a)?;
    let cols = LabeledTextSet::from_codebook("b", b)?;
    let full = similarity_matrix(&rows, &cols, embedder)?;
    let alignment = match manual_pairs {
        Some(path) => align_manual(path, &full.row_labels, &full.col_labels)?,
        None => align_greedy(&full)?,
    };

    let matrix = full.aligned(&alignment);
    let paired = alignment.pairs.len();
    let report = diagonal_report(&matrix, &alignment, threshold)?;
    Ok(CodebookComparison {
        unmatched_a: matrix.row_labels[paired..].to_vec(),
        unmatched_b: matrix.col_labels[paired..].to_vec(),
        matrix,
        alignment,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScore {
    pub row: String,
    pub col: String,
    /// On the rater's 0-10 scale.
    pub score: f64,
    /// `score / 10`, comparable with cosine values.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScoreSet {
    pub rater_id: String,
    pub scores: Vec<HumanScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScoreSummary {
    pub count: usize,
    pub at_maximum: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub text: String,
}

fn fmt_score(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

impl HumanScoreSet {
    pub fn summary(&self) -> HumanScoreSummary {
        let count = self.scores.len();
        let values: Vec<f64> = self.scores.iter().map(|s| s.score).collect();
        let at_maximum = values.iter().filter(|&&s| s == 10.0).count();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = if count == 0 { 0.0 } else { values.iter().sum::<f64>() / count as f64 };
        let text = if count == 0 {
            "no scores".to_string()
        } else {
            format!("{count} scores: {at_maximum} at maximum, min {}", fmt_score(min))
        };
        HumanScoreSummary {
            count,
            at_maximum,
            min,
            max,
            mean,
            text,
        }
    }

    /// Rows of (row, col, human score / 10, cosine) for side-by-side display.
    pub fn overlay(&self, matrix: &SimilarityMatrix) -> Vec<(String, String, f64, Option<f64>)> {
        self.scores
            .iter()
            .map(|s| (s.row.clone(), s.col.clone(), s.normalized, matrix.get(&s.row, &s.col)))
            .collect()
    }
}

/// Reads a `row_label,col_label,score` CSV and joins it to `alignment`.
pub fn ingest_human_scores(path: &Path, alignment: &PairAlignment, rater_id: &str) -> Result<HumanScoreSet, EvalError> {
    ingest_human_scores_str(&read_file(path)?, &path.display().to_string(), alignment, rater_id)
}

pub fn ingest_human_scores_str(
    text: &str,
    context: &str,
    alignment: &PairAlignment,
    rater_id: &str,
) -> Result<HumanScoreSet, EvalError> {
    let rows: Vec<String> = alignment.pairs.iter().map(|(r, _)| r.clone()).collect();
    let cols: Vec<String> = alignment.pairs.iter().map(|(_, c)| c.clone()).collect();
    let mut scores = Vec::new();
    for (line, record) in read_records(text, context, "row_label")? {
        let field = |i| record.get(i).unwrap_or("").trim().to_string();
        let (row_raw, col_raw, score_raw) = (field(0), field(1), field(2));
        let score: f64 = score_raw
            .parse()
            .map_err(|_| csv_err(context, format!("line {line}: score {score_raw:?} is not a number")))?;
        if !(0.0..=10.0).contains(&score) {
            return Err(EvalError::ScoreOutOfRange {
                path: context.to_string(),
                line,
                score,
            });
        }
        let unknown = || EvalError::UnknownPair {
            path: context.to_string(),
            line,
            row: row_raw.clone(),
            col: col_raw.clone(),
        };
        let row = resolve_label(&row_raw, &rows).ok_or_else(unknown)?;
        let col = resolve_label(&col_raw, &cols).ok_or_else(unknown)?;
        if !alignment.contains(&row, &col) {
            return Err(unknown());
        }
        scores.push(HumanScore {
            row,
            col,
            score,
            normalized: score / 10.0,
        });
    }
    Ok(HumanScoreSet {
        rater_id: rater_id.to_string(),
        scores,
    })
}
