//! Initial coding: run the coding prompt over each transcript, parse the JSON
//! codebooks, aggregate them into one corpus codebook, and measure
//! saturation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::Transcript;
use crate::error::ErrorKind;
use crate::extract::{extract_json, find_key, get_ci, Repair};
use crate::gateway::{map_bounded, ChatProvider, ChatRequest, GatewayError, TokenUsage};
use crate::prompting::{render, Field, KeyMap, Phase, PromptError, PromptTemplate, TRANSCRIPT_VAR};
use crate::reporting::write_atomic;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("empty response")]
    Empty,
    #[error("no JSON found in response")]
    NoJson,
    #[error("JSON has no {0:?} container")]
    MissingContainer(String),
    #[error("no entry has all of name, description and quote ({0} skipped)")]
    NoValidEntries(usize),
}

#[derive(Debug, Error)]
pub enum CodingError {
    #[error("template {0} is not a coding template")]
    WrongPhase(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("transcript {transcript_id}: {source}")]
    Chat {
        transcript_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("transcript {transcript_id}: unparseable response: {source}")]
    Parse {
        transcript_id: String,
        #[source]
        source: ParseError,
        raw: String,
    },
    #[error("transcript {transcript_id}: response contains zero codes")]
    ZeroCodes { transcript_id: String, raw: String },
    #[error("cannot aggregate: no transcript produced any codes")]
    EmptyAggregate,
    #[error("codebook has no codes")]
    EmptyCodebook,
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

impl CodingError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CodingError::Chat { .. } => ErrorKind::Provider,
            CodingError::Parse { .. } | CodingError::ZeroCodes { .. } => ErrorKind::Parse,
            _ => ErrorKind::Input,
        }
    }

    /// The raw model response, when the failure happened after the call.
    pub fn raw_response(&self) -> Option<&str> {
        match self {
            CodingError::Parse { raw, .. } | CodingError::ZeroCodes { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InitialCode {
    /// Corpus-global after aggregation; per-transcript 0..n-1 before.
    pub index: usize,
    pub name: String,
    pub description: String,
    pub quote: String,
    pub transcript_id: String,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeTriple {
    pub name: String,
    pub description: String,
    pub quote: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCodes {
    pub triples: Vec<CodeTriple>,
    pub warnings: Vec<String>,
    pub repair: Repair,
}

/// Keys tried after the template's own mapping.
fn fallback_keys(field: Field) -> &'static [&'static str] {
    match field {
        Field::Codes => &["Categorie", "Codes", "codici", "categories"],
        Field::Name => &["nome", "name", "categoria", "codice", "code"],
        Field::Description => &["descrizione", "description"],
        Field::Quote => &["citazione", "quote", "citazioni", "quotes"],
        Field::Themes | Field::Indices => &[],
    }
}

fn field_keys(key_map: &KeyMap, field: Field) -> Vec<&str> {
    let mut keys: Vec<&str> = key_map.key_for(field).into_iter().collect();
    keys.extend(fallback_keys(field).iter().copied());
    keys
}

fn string_field(obj: &Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| get_ci(obj, k))
        .and_then(|v| match v {
            Value::String(s) => Some(s.trim().to_string()),
            Value::Array(items) => {
                let parts: Vec<&str> = items.iter().filter_map(Value::as_str).collect();
                (!parts.is_empty()).then(|| parts.join(" ").trim().to_string())
            }
            _ => None,
        })
        .filter(|s| !s.is_empty())
}

/// Extracts `(name, description, quote)` triples from a coding response.
///
/// Tolerates code fences and prose around the JSON. The container may be an
/// array of entry objects, or an object keyed by code name. Entries missing a
/// field are skipped with a warning as long as one valid entry remains.
pub fn parse_codebook_json(raw: &str, key_map: &KeyMap) -> Result<ParsedCodes, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let container_keys = field_keys(key_map, Field::Codes);
    let find_container = |v: &Value| -> Option<Value> {
        container_keys
            .iter()
            .find_map(|k| find_key(v, k))
            .filter(|c| c.is_array() || c.is_object())
            .cloned()
            .or_else(|| v.as_array().filter(|a| a.iter().all(Value::is_object)).map(|_| v.clone()))
    };

    let (container, repair) = match extract_json(raw, |v| find_container(v).is_some()) {
        Some((v, repair)) => (find_container(&v).expect("predicate held"), repair),
        None if crate::extract::contains_json(raw) => {
            return Err(ParseError::MissingContainer(
                key_map.key_for(Field::Codes).unwrap_or("Categorie").to_string(),
            ))
        }
        None => return Err(ParseError::NoJson),
    };

    let name_keys = field_keys(key_map, Field::Name);
    let desc_keys = field_keys(key_map, Field::Description);
    let quote_keys = field_keys(key_map, Field::Quote);
    let entries: Vec<(Option<String>, &Value)> = match &container {
        Value::Array(items) => items.iter().map(|v| (None, v)).collect(),
        Value::Object(map) => map.iter().map(|(k, v)| (Some(k.clone()), v)).collect(),
        _ => Vec::new(),
    };

    let mut triples = Vec::new();
    let mut warnings = Vec::new();
    for (position, (key_name, entry)) in entries.iter().enumerate() {
        let Some(obj) = entry.as_object() else {
            warnings.push(format!("entry {position} is not an object; skipped"));
            continue;
        };
        let name = string_field(obj, &name_keys).or_else(|| key_name.clone().filter(|k| !k.trim().is_empty()));
        let description = string_field(obj, &desc_keys);
        let quote = string_field(obj, &quote_keys);
        match (name, description, quote) {
            (Some(name), Some(description), Some(quote)) => triples.push(CodeTriple {
                name: name.trim().to_string(),
                description,
                quote,
            }),
            (name, description, quote) => {
                let missing: Vec<&str> = [
                    ("name", name.is_none()),
                    ("description", description.is_none()),
                    ("quote", quote.is_none()),
                ]
                .into_iter()
                .filter_map(|(f, m)| m.then_some(f))
                .collect();
                warnings.push(format!("entry {position} lacks {}; skipped", missing.join(", ")));
            }
        }
    }
    if triples.is_empty() && !entries.is_empty() {
        return Err(ParseError::NoValidEntries(entries.len()));
    }
    Ok(ParsedCodes {
        triples,
        warnings,
        repair,
    })
}

/// Soft word limits. Exceeding `factor` times a budget is a warning, never a
/// rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordBudget {
    pub description: usize,
    pub quote: usize,
    pub factor: usize,
}

impl Default for WordBudget {
    fn default() -> Self {
        WordBudget {
            description: 25,
            quote: 100,
            factor: 2,
        }
    }
}

impl WordBudget {
    fn check(&self, t: &CodeTriple) -> Vec<String> {
        let mut out = Vec::new();
        let words = |s: &str| s.split_whitespace().count();
        let (d, q) = (words(&t.description), words(&t.quote));
        if d > self.description * self.factor {
            out.push(format!("code {:?}: description has {d} words (budget {})", t.name, self.description));
        }
        if q > self.quote * self.factor {
            out.push(format!("code {:?}: quote has {q} words (budget {})", t.name, self.quote));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CodingOptions {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub run_id: String,
    pub word_budget: WordBudget,
}

impl CodingOptions {
    pub fn new(model: impl Into<String>, run_id: impl Into<String>) -> Self {
        CodingOptions {
            model: model.into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            run_id: run_id.into(),
            word_budget: WordBudget::default(),
        }
    }
}

/// Outcome of coding one transcript.
#[derive(Debug, Clone)]
pub struct TranscriptCoding {
    pub transcript_id: String,
    /// Indices 0..n-1 within the transcript.
    pub codes: Vec<InitialCode>,
    pub raw_response: String,
    pub warnings: Vec<String>,
    pub token_usage: TokenUsage,
    pub retries: u32,
    pub truncated: bool,
}

pub fn render_coding_prompt(t: &Transcript, template: &PromptTemplate) -> Result<String, CodingError> {
    if template.phase != Phase::Coding {
        return Err(CodingError::WrongPhase(template.name.clone()));
    }
    let bindings = BTreeMap::from([(TRANSCRIPT_VAR.to_string(), t.text.clone())]);
    Ok(render(template, &bindings)?)
}

pub fn code_transcript(
    t: &Transcript,
    template: &PromptTemplate,
    provider: &dyn ChatProvider,
    opts: &CodingOptions,
) -> Result<TranscriptCoding, CodingError> {
    let prompt = render_coding_prompt(t, template)?;
    let mut warnings = Vec::new();
    let template_lang = template.language.split('-').next().unwrap_or("");
    let data_lang = t.language.split('-').next().unwrap_or("");
    if !template_lang.eq_ignore_ascii_case(data_lang) {
        warnings.push(format!(
            "template language {} differs from transcript language {}",
            template.language, t.language
        ));
    }

    let chat_err = |source| CodingError::Chat {
        transcript_id: t.id.clone(),
        source,
    };
    let request = ChatRequest::new(
        &opts.model,
        prompt,
        opts.temperature,
        opts.max_output_tokens,
        format!("{}/coding/{}", opts.run_id, t.id),
    )
    .map_err(chat_err)?;
    let response = provider.chat(&request).map_err(chat_err)?;
    if response.truncated {
        warnings.push("response was truncated at the output-token limit".into());
    }

    let parsed = parse_codebook_json(&response.text, &template.output_key_map).map_err(|source| {
        CodingError::Parse {
            transcript_id: t.id.clone(),
            source,
            raw: response.text.clone(),
        }
    })?;
    if parsed.triples.is_empty() {
        return Err(CodingError::ZeroCodes {
            transcript_id: t.id.clone(),
            raw: response.text,
        });
    }
    warnings.extend(parsed.warnings);
    let codes = parsed
        .triples
        .into_iter()
        .enumerate()
        .map(|(index, triple)| {
            warnings.extend(opts.word_budget.check(&triple));
            InitialCode {
                index,
                name: triple.name,
                description: triple.description,
                quote: triple.quote,
                transcript_id: t.id.clone(),
                run_id: opts.run_id.clone(),
            }
        })
        .collect();
    for w in &warnings {
        log::warn!("{}: {w}", t.id);
    }
    Ok(TranscriptCoding {
        transcript_id: t.id.clone(),
        codes,
        raw_response: response.text,
        warnings,
        token_usage: response.token_usage,
        retries: response.retries,
        truncated: response.truncated,
    })
}

/// Per-transcript outcomes of a corpus coding pass, keyed by transcript id.
#[derive(Debug)]
pub struct CorpusCoding {
    pub results: BTreeMap<String, Result<TranscriptCoding, CodingError>>,
}

impl CorpusCoding {
    pub fn successes(&self) -> impl Iterator<Item = &TranscriptCoding> {
        self.results.values().filter_map(|r| r.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &CodingError)> {
        self.results
            .iter()
            .filter_map(|(id, r)| r.as_ref().err().map(|e| (id.as_str(), e)))
    }

    pub fn codebook(&self, fingerprint: Option<String>) -> Result<Codebook, CodingError> {
        let per_transcript = self
            .successes()
            .map(|c| (c.transcript_id.clone(), c.codes.clone()))
            .collect();
        let mut cb = aggregate_codebook(per_transcript)?;
        cb.prompt_fingerprint = fingerprint;
        Ok(cb)
    }
}

/// Codes every transcript with at most `parallelism` requests in flight.
/// The merge is keyed by transcript id, so completion order never matters.
pub fn code_corpus(
    transcripts: &[Transcript],
    template: &PromptTemplate,
    provider: &dyn ChatProvider,
    opts: &CodingOptions,
    parallelism: usize,
) -> CorpusCoding {
    let outcomes = map_bounded(transcripts, parallelism, |t| {
        (t.id.clone(), code_transcript(t, template, provider, opts))
    });
    CorpusCoding {
        results: outcomes.into_iter().collect(),
    }
}

/// The aggregated corpus codebook.
///
/// Equality compares codes and per-transcript counts only; `created_at` and
/// `prompt_fingerprint` are provenance recorded in the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebook {
    pub codes: Vec<InitialCode>,
    pub per_transcript_counts: BTreeMap<String, usize>,
    pub created_at: Option<String>,
    pub prompt_fingerprint: Option<String>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.codes == other.codes && self.per_transcript_counts == other.per_transcript_counts
    }
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn transcript_ids(&self) -> BTreeSet<&str> {
        self.per_transcript_counts.keys().map(String::as_str).collect()
    }

    /// Inverse of [`aggregate_codebook`]: codes grouped by transcript.
    pub fn split(&self) -> BTreeMap<String, Vec<InitialCode>> {
        let mut out: BTreeMap<String, Vec<InitialCode>> = BTreeMap::new();
        for code in &self.codes {
            out.entry(code.transcript_id.clone()).or_default().push(code.clone());
        }
        out
    }
}

/// Assigns corpus-global indices: ascending transcript id, then the order
/// codes had within each transcript. Transcripts with no codes are omitted.
pub fn aggregate_codebook(per_transcript: BTreeMap<String, Vec<InitialCode>>) -> Result<Codebook, CodingError> {
    let mut codes = Vec::new();
    let mut per_transcript_counts = BTreeMap::new();
    for (transcript_id, list) in per_transcript {
        if list.is_empty() {
            continue;
        }
        per_transcript_counts.insert(transcript_id.clone(), list.len());
        for code in list {
            codes.push(InitialCode {
                index: codes.len(),
                transcript_id: transcript_id.clone(),
                ..code
            });
        }
    }
    if codes.is_empty() {
        return Err(CodingError::EmptyAggregate);
    }
    Ok(Codebook {
        codes,
        per_transcript_counts,
        created_at: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        prompt_fingerprint: None,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Exact,
    #[default]
    CasefoldTrim,
}

impl Normalization {
    pub fn apply(self, name: &str) -> String {
        match self {
            Normalization::Exact => name.to_string(),
            Normalization::CasefoldTrim => name.trim().to_lowercase(),
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Normalization::Exact => "exact: names compared byte for byte",
            Normalization::CasefoldTrim => {
                "casefold_trim: leading/trailing whitespace removed, Unicode lowercased"
            }
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Normalization::Exact),
            "casefold_trim" => Ok(Normalization::CasefoldTrim),
            other => Err(format!("unknown normalization {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub total_codes: usize,
    pub unique_codes: usize,
    /// total / unique.
    pub ratio_total_to_unique: f64,
    /// unique / total, for the opposite convention.
    pub ratio_unique_to_total: f64,
    pub normalization: String,
}

pub fn saturation(cb: &Codebook, normalization: Normalization) -> Result<SaturationReport, CodingError> {
    if cb.codes.is_empty() {
        return Err(CodingError::EmptyCodebook);
    }
    let total = cb.codes.len();
    let unique = cb
        .codes
        .iter()
        .map(|c| normalization.apply(&c.name))
        .collect::<BTreeSet<_>>()
        .len();
    Ok(SaturationReport {
        total_codes: total,
        unique_codes: unique,
        ratio_total_to_unique: total as f64 / unique as f64,
        ratio_unique_to_total: unique as f64 / total as f64,
        normalization: normalization.describe().to_string(),
    })
}

/// Share of codes whose quote appears verbatim (whitespace-normalized) in its
/// source transcript. Reported only; paraphrased quotes are not rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteAudit {
    pub checked: usize,
    pub verbatim: usize,
    pub fraction: f64,
}

pub fn quote_audit(cb: &Codebook, transcripts: &[Transcript]) -> QuoteAudit {
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let texts: BTreeMap<&str, String> = transcripts.iter().map(|t| (t.id.as_str(), squash(&t.text))).collect();
    let mut checked = 0;
    let mut verbatim = 0;
    for code in &cb.codes {
        if let Some(text) = texts.get(code.transcript_id.as_str()) {
            checked += 1;
            if text.contains(&squash(&code.quote)) {
                verbatim += 1;
            }
        }
    }
    QuoteAudit {
        checked,
        verbatim,
        fraction: if checked == 0 { 0.0 } else { verbatim as f64 / checked as f64 },
    }
}

pub const CODEBOOK_HEADER: [&str; 6] = ["index", "transcript_id", "name", "description", "quote", "run_id"];

/// Serializes to RFC-4180 CSV (CRLF line endings, minimal quoting).
pub fn codebook_to_csv_string(cb: &Codebook) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(CODEBOOK_HEADER).expect("in-memory write");
    for c in &cb.codes {
        w.write_record([
            c.index.to_string().as_str(),
            &c.transcript_id,
            &c.name,
            &c.description,
            &c.quote,
            &c.run_id,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn codebook_to_csv(cb: &Codebook, path: &Path) -> Result<(), crate::Error> {
    write_atomic(path, codebook_to_csv_string(cb).as_bytes())?;
    Ok(())
}

pub fn codebook_from_csv(path: &Path) -> Result<Codebook, CodingError> {
    let text = std::fs::read_to_string(path).map_err(|e| CodingError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    codebook_from_csv_str(&text).map_err(|message| CodingError::Csv {
        path: path.display().to_string(),
        message,
    })
}

pub fn codebook_from_csv_str(text: &str) -> Result<Codebook, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != CODEBOOK_HEADER {
        return Err(format!(
            "schema mismatch: expected header {}, found {}",
            CODEBOOK_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut codes: Vec<InitialCode> = Vec::new();
    let mut per_transcript_counts: BTreeMap<String, usize> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(0, |p| p.line());
        let index: usize = record[0]
            .parse()
            .map_err(|_| format!("line {line}: index {:?} is not a non-negative integer", &record[0]))?;
        if index != codes.len() {
            return Err(format!("line {line}: index gap, expected {} found {index}", codes.len()));
        }
        let code = InitialCode {
            index,
            transcript_id: record[1].to_string(),
            name: record[2].to_string(),
            description: record[3].to_string(),
            quote: record[4].to_string(),
            run_id: record[5].to_string(),
        };
        if code.name.trim().is_empty() || code.description.trim().is_empty() || code.quote.trim().is_empty() {
            return Err(format!("line {line}: name, description and quote must be non-empty"));
        }
        if let Some(prev) = codes.last() {
            if code.transcript_id < prev.transcript_id {
                return Err(format!("line {line}: codes are not grouped by ascending transcript id"));
            }
        }
        *per_transcript_counts.entry(code.transcript_id.clone()).or_default() += 1;
        codes.push(code);
    }
    Ok(Codebook {
        codes,
        per_transcript_counts,
        created_at: None,
        prompt_fingerprint: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Fixture, Matcher, MockChatProvider};
    use crate::prompting::builtin;

    const TABLE2: &str = r#"{"Categorie": [
      {"nome": "Edizioni digitali", "descrizione": "Nuove frontiere nel settore delle edizioni digitali di fonti manoscritte", "citazione": "Il settore si sta aprendo con grande interesse anche con ricerche di carattere sperimentale alla possibilità di edizioni digitali."},
      {"nome": "Metadati e standard di edizione", "descrizione": "Standard di edizione critica e descrizione dei metadati delle fonti", "citazione": "L'edizione critica deve descrivere il metodo seguito e le scelte compiute, esplicitando il significato dei simboli e la struttura dell'edizione."},
      {"nome": "Dati della ricerca", "descrizione": "I testi dell'edizione critica possono essere considerati dati.", "citazione": "L'edizione critica di un manoscritto può essere considerata un dato."}
    ]}"#;

    fn keys() -> KeyMap {
        builtin("coding-it").unwrap().output_key_map
    }

    fn code(tid: &str, name: &str) -> InitialCode {
        InitialCode {
            index: 0,
            name: name.into(),
            description: "d".into(),
            quote: "q".into(),
            transcript_id: tid.into(),
            run_id: "run".into(),
        }
    }

    fn mock(response: &str) -> MockChatProvider {
        MockChatProvider::new(vec![Fixture {
            matcher: Matcher::contains("analisi tematica"),
            response: response.into(),
        }])
        .unwrap()
    }

    #[test]
    fn parses_clean_json() {
        let raw = r#"{"Categorie":[{"nome":"Open data","descrizione":"d","citazione":"q"}]}"#;
        let parsed = parse_codebook_json(raw, &keys()).unwrap();
        assert_eq!(
            parsed.triples,
            [CodeTriple {
                name: "Open data".into(),
                description: "d".into(),
                quote: "q".into()
            }]
        );
        assert_eq!(parsed.repair, Repair::AsIs);
    }

    #[test]
    fn fenced_with_preamble_is_identical() {
        let raw = r#"{"Categorie":[{"nome":"Open data","descrizione":"d","citazione":"q"}]}"#;
        let wrapped = format!("Ecco il risultato:\n```json\n{raw}\n```");
        let a = parse_codebook_json(raw, &keys()).unwrap();
        let b = parse_codebook_json(&wrapped, &keys()).unwrap();
        assert_eq!(a.triples, b.triples);
        assert_eq!(b.repair, Repair::Unfenced);
    }

    #[test]
    fn empty_container_is_ok_and_errors() {
        assert!(parse_codebook_json(r#"{"Categorie":[]}"#, &keys()).unwrap().triples.is_empty());
        assert!(matches!(parse_codebook_json("  ", &keys()), Err(ParseError::Empty)));
        assert!(matches!(parse_codebook_json("niente", &keys()), Err(ParseError::NoJson)));
        assert!(matches!(
            parse_codebook_json(r#"{"Temi": 3}"#, &keys()),
            Err(ParseError::MissingContainer(_))
        ));
        assert!(matches!(
            parse_codebook_json(r#"{"Categorie":[{"nome":"x"}]}"#, &keys()),
            Err(ParseError::NoValidEntries(1))
        ));
    }

    #[test]
    fn skips_incomplete_entries_with_warning() {
        let raw = r#"{"Categorie":[{"nome":"A","descrizione":"d","citazione":"q"},{"nome":"B","descrizione":"d"}]}"#;
        let parsed = parse_codebook_json(raw, &keys()).unwrap();
        assert_eq!(parsed.triples.len(), 1);
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("quote"));
    }

    #[test]
    fn object_keyed_by_name() {
        let raw = r#"{"Categorie": {"Open data": {"descrizione": "d", "citazione": "q"}}}"#;
        let parsed = parse_codebook_json(raw, &keys()).unwrap();
        assert_eq!(parsed.triples[0].name, "Open data");
    }

    #[test]
    fn table2_codes_through_provider() {
        let provider = mock(TABLE2);
        let t = Transcript::new("int01", "it", "Intervistato: ...", "int01.txt");
        let out = code_transcript(&t, &builtin("coding-it").unwrap(), &provider, &CodingOptions::new("gpt-3.5-turbo", "run")).unwrap();
        assert_eq!(out.codes.len(), 3);
        assert_eq!(out.codes[0].name, "Edizioni digitali");
        assert_eq!(out.codes.iter().map(|c| c.index).collect::<Vec<_>>(), [0, 1, 2]);
        assert!(out.codes.iter().all(|c| c.transcript_id == "int01"));
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
    }

    #[test]
    fn zero_codes_and_unparseable_keep_raw() {
        let t = Transcript::new("int02", "it", "x", "int02.txt");
        let template = builtin("coding-it").unwrap();
        let opts = CodingOptions::new("m", "run");
        let err = code_transcript(&t, &template, &mock(r#"{"Categorie": []}"#), &opts).unwrap_err();
        assert!(matches!(err, CodingError::ZeroCodes { .. }));
        assert!(err.to_string().contains("zero codes"));
        let err = code_transcript(&t, &template, &mock("mi dispiace"), &opts).unwrap_err();
        assert_eq!(err.raw_response(), Some("mi dispiace"));
        assert_eq!(err.kind(), ErrorKind::Parse);
        let err = code_transcript(&t, &builtin("theming-it").unwrap(), &mock("x"), &opts).unwrap_err();
        assert!(matches!(err, CodingError::WrongPhase(_)));
    }

    #[test]
    fn language_mismatch_warns() {
        let t = Transcript::new("int01", "it", "x", "int01.txt");
        let provider = MockChatProvider::new(vec![Fixture {
            matcher: Matcher::contains("thematic analysis"),
            response: r#"{"Codes":[{"name":"Open data","description":"d","quote":"q"}]}"#.into(),
        }])
        .unwrap();
        let out = code_transcript(&t, &builtin("coding-en").unwrap(), &provider, &CodingOptions::new("m", "r")).unwrap();
        assert_eq!(out.codes.len(), 1);
        assert!(out.warnings.iter().any(|w| w.contains("language")));
    }

    #[test]
    fn word_budget_is_soft() {
        let long = "parola ".repeat(51);
        let raw = format!(r#"{{"Categorie":[{{"nome":"A","descrizione":"{long}","citazione":"q"}}]}}"#);
        let t = Transcript::new("int01", "it", "x", "int01.txt");
        let out = code_transcript(&t, &builtin("coding-it").unwrap(), &mock(&raw), &CodingOptions::new("m", "r")).unwrap();
        assert_eq!(out.codes.len(), 1);
        assert!(out.warnings.iter().any(|w| w.contains("51 words")));
    }

    #[test]
    fn aggregation_indices() {
        let cb = aggregate_codebook(BTreeMap::from([
            ("b".to_string(), vec![code("b", "c3")]),
            ("a".to_string(), vec![code("a", "c1"), code("a", "c2")]),
        ]))
        .unwrap();
        let got: Vec<_> = cb.codes.iter().map(|c| (c.transcript_id.as_str(), c.index)).collect();
        assert_eq!(got, [("a", 0), ("a", 1), ("b", 2)]);
        assert_eq!(cb.per_transcript_counts["a"], 2);

        let ten = aggregate_codebook(BTreeMap::from([("x".to_string(), vec![code("x", "n"); 10])])).unwrap();
        assert_eq!(ten.codes.last().unwrap().index, 9);
        assert!(aggregate_codebook(BTreeMap::new()).is_err());
    }

    #[test]
    fn saturation_examples() {
        let cb = |names: &[&str]| {
            aggregate_codebook(BTreeMap::from([(
                "t".to_string(),
                names.iter().map(|n| code("t", n)).collect(),
            )]))
            .unwrap()
        };
        let distinct: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = distinct.iter().map(String::as_str).collect();
        let r = saturation(&cb(&refs), Normalization::CasefoldTrim).unwrap();
        assert_eq!((r.total_codes, r.unique_codes, r.ratio_total_to_unique), (10, 10, 1.0));
        let r = saturation(&cb(&["A", "A", "B", "B", "B"]), Normalization::CasefoldTrim).unwrap();
        assert_eq!((r.total_codes, r.unique_codes, r.ratio_total_to_unique), (5, 2, 2.5));
        let r = saturation(&cb(&["Open data", "open data ", "Privacy"]), Normalization::CasefoldTrim).unwrap();
        assert_eq!((r.unique_codes, r.ratio_total_to_unique), (2, 1.5));
        let r = saturation(&cb(&["Open data", "open data ", "Privacy"]), Normalization::Exact).unwrap();
        assert_eq!(r.unique_codes, 3);
    }

    #[test]
    fn csv_round_trip_with_awkward_quote() {
        let mut c = code("int01", "Condivisione, materiali");
        c.quote = "Prima riga, con virgola\nseconda \"riga\"".into();
        let cb = aggregate_codebook(BTreeMap::from([("int01".to_string(), vec![c])])).unwrap();
        let text = codebook_to_csv_string(&cb);
        assert!(text.starts_with("index,transcript_id,name,description,quote,run_id\r\n"));
        assert_eq!(codebook_from_csv_str(&text).unwrap(), cb);
    }

    #[test]
    fn csv_errors() {
        let gap = "index,transcript_id,name,description,quote,run_id\r\n0,a,n,d,q,r\r\n2,a,n,d,q,r\r\n";
        assert!(codebook_from_csv_str(gap).unwrap_err().contains("index gap"));
        let schema = "idx,transcript,name\r\n0,a,n\r\n";
        assert!(codebook_from_csv_str(schema).unwrap_err().contains("schema mismatch"));
        let order = "index,transcript_id,name,description,quote,run_id\r\n0,b,n,d,q,r\r\n1,a,n,d,q,r\r\n";
        assert!(codebook_from_csv_str(order).is_err());
    }

    #[test]
    fn quote_audit_reports_fraction() {
        let t = Transcript::new("a", "it", "Io penso che  i dati\nsiano testi.", "a.txt");
        let mut c1 = code("a", "x");
        c1.quote = "i dati siano testi".into();
        let mut c2 = code("a", "y");
        c2.quote = "parafrasi".into();
        let cb = aggregate_codebook(BTreeMap::from([("a".to_string(), vec![c1, c2])])).unwrap();
        let audit = quote_audit(&cb, &[t]);
        assert_eq!((audit.checked, audit.verbatim), (2, 1));
        assert_eq!(audit.fraction, 0.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_per_transcript() -> impl Strategy<Value = BTreeMap<String, Vec<InitialCode>>> {
            proptest::collection::btree_map(
                "[a-z]{1,6}",
                proptest::collection::vec("[A-Za-z][A-Za-z ]{0,11}", 1..8),
                1..6,
            )
            .prop_map(|m| {
                m.into_iter()
                    .map(|(tid, names)| {
                        let codes = names
                            .iter()
                            .enumerate()
                            .map(|(i, n)| InitialCode { index: i, ..code(&tid, n) })
                            .collect();
                        (tid, codes)
                    })
                    .collect()
            })
        }

        /// Independent count of distinct normalized names.
        fn brute_unique(names: &[String]) -> usize {
            let mut seen: Vec<String> = Vec::new();
            for n in names {
                let k = n.trim().to_lowercase();
                if !seen.contains(&k) {
                    seen.push(k);
                }
            }
            seen.len()
        }

        proptest! {
            #[test]
            fn aggregate_split_identity(per in arb_per_transcript()) {
                let cb = aggregate_codebook(per).unwrap();
                let again = aggregate_codebook(cb.split()).unwrap();
                prop_assert_eq!(&again, &cb);
                prop_assert_eq!(cb.per_transcript_counts.values().sum::<usize>(), cb.codes.len());
                prop_assert!(cb.codes.iter().enumerate().all(|(i, c)| c.index == i));
            }

            #[test]
            fn csv_round_trip(per in arb_per_transcript()) {
                let cb = aggregate_codebook(per).unwrap();
                prop_assert_eq!(codebook_from_csv_str(&codebook_to_csv_string(&cb)).unwrap(), cb);
            }

            #[test]
            fn saturation_matches_brute_force(per in arb_per_transcript(), dup in 0usize..100) {
                let cb = aggregate_codebook(per).unwrap();
                let names: Vec<String> = cb.codes.iter().map(|c| c.name.clone()).collect();
                let r = saturation(&cb, Normalization::CasefoldTrim).unwrap();
                prop_assert_eq!(r.unique_codes, brute_unique(&names));
                prop_assert!(r.ratio_total_to_unique >= 1.0);
                prop_assert_eq!(r.ratio_total_to_unique == 1.0, brute_unique(&names) == names.len());

                let mut more = cb.split();
                let victim = cb.codes[dup % cb.codes.len()].clone();
                more.get_mut(&victim.transcript_id).unwrap().push(victim.clone());
                let bigger = aggregate_codebook(more).unwrap();
                let r2 = saturation(&bigger, Normalization::CasefoldTrim).unwrap();
                prop_assert!(r2.ratio_total_to_unique > r.ratio_total_to_unique);
            }
        }
    }
}
