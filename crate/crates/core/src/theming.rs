//! Theme generation from a codebook, temperature sweeps, and cross-run theme
//! stability.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::coding::Codebook;
use crate::error::ErrorKind;
use crate::evaluation::cosine;
use crate::extract::{extract_json, find_key, get_ci};
use crate::gateway::{map_bounded, ChatProvider, ChatRequest, EmbeddingProvider, GatewayError, TokenUsage};
use crate::prompting::{
    format_code_list, render, Field, KeyMap, Phase, PromptError, PromptTemplate, CODES_LIST_VAR, MIN_THEMES_VAR,
};
use crate::reporting::write_atomic;

pub const DEFAULT_STABILITY_THRESHOLD: f64 = 0.7;

/// Tolerance applied to threshold comparisons; the cosine of two identical
/// unit vectors can land a few ulps below 1.
const SCORE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ThemeParseError {
    #[error("empty response")]
    Empty,
    #[error("no recognizable theme header or theme JSON")]
    NoThemes,
}

#[derive(Debug, Error)]
pub enum ThemingError {
    #[error("template {0} is not a theming template")]
    WrongPhase(String),
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("theming at T={temperature}: {source}")]
    Chat {
        temperature: f64,
        #[source]
        source: GatewayError,
    },
    #[error("theming at T={temperature}: unparseable response: {source}")]
    Parse {
        temperature: f64,
        #[source]
        source: ThemeParseError,
        raw: String,
    },
    #[error("theming at T={temperature}: no theme survived validation")]
    NoValidThemes { temperature: f64, raw: String },
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error("stability needs at least 2 theme sets, got {0}")]
    TooFewSets(usize),
    #[error("stability threshold must be in (0, 1], got {0}")]
    Threshold(f64),
    #[error("embedding themes: {0}")]
    Embed(#[source] GatewayError),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

impl ThemingError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ThemingError::Chat { .. } | ThemingError::Embed(_) => ErrorKind::Provider,
            ThemingError::Parse { .. } | ThemingError::NoValidThemes { .. } => ErrorKind::Parse,
            _ => ErrorKind::Input,
        }
    }

    pub fn raw_response(&self) -> Option<&str> {
        match self {
            ThemingError::Parse { raw, .. } | ThemingError::NoValidThemes { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub name: String,
    pub description: String,
    pub code_indices: Vec<usize>,
}

impl Theme {
    /// The text embedded when comparing themes.
    pub fn embedding_text(&self) -> String {
        if self.description.trim().is_empty() {
            self.name.clone()
        } else {
            format!("{}: {}", self.name, self.description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeSet {
    pub run_id: String,
    pub temperature: f64,
    pub min_themes: usize,
    pub model: String,
    pub themes: Vec<Theme>,
    /// Archived raw response, relative to the run directory.
    pub raw_response_path: Option<PathBuf>,
    pub warnings: Vec<String>,
}

impl ThemeSet {
    pub fn below_minimum(&self) -> bool {
        self.themes.len() < self.min_themes
    }

    /// Fraction of the codebook referenced by at least one theme.
    pub fn coverage(&self, codebook_len: usize) -> f64 {
        if codebook_len == 0 {
            return 0.0;
        }
        let used: BTreeSet<usize> = self.themes.iter().flat_map(|t| t.code_indices.iter().copied()).collect();
        used.len() as f64 / codebook_len as f64
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("theme sets serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), crate::Error> {
        write_atomic(path, self.to_json_string().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ThemingError> {
        let file_err = |message: String| ThemingError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
    }
}

/// `themes_T0.json`, `themes_T0.25.json`, ...
pub fn themes_file_name(temperature: f64) -> String {
    format!("themes_T{temperature}.json")
}

fn theme_prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(?:tema|theme)\s*\d+\s*[:.)\-–]\s*").expect("static regex"))
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:#+\s*)?(?:\d+\.\s*)?(?:\*\*)?\s*(?:tema|theme)\s+\d+\s*[:.)\-–]\s*(.+?)\s*(?:\*\*)?\s*$")
            .expect("static regex")
    })
}

fn index_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*[-*]?\s*(?:\*\*)?\s*(?:categorie|codici|codes|categories|indici|indices)(?:\s+\w+)?\s*(?:\*\*)?\s*:\s*(?:\*\*)?(.*)$")
            .expect("static regex")
    })
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").expect("static regex"))
}

/// Strips a leading `Tema 3:` / `Theme 3 -` numbering from a theme name.
pub fn strip_theme_prefix(name: &str) -> &str {
    match theme_prefix_re().find(name) {
        Some(m) if m.end() < name.len() => name[m.end()..].trim(),
        _ => name.trim(),
    }
}

fn numbers_in(s: &str) -> Vec<usize> {
    number_re().find_iter(s).filter_map(|m| m.as_str().parse().ok()).collect()
}

const NAME_KEYS: [&str; 6] = ["nome", "name", "tema", "theme", "titolo", "title"];
const DESCRIPTION_KEYS: [&str; 2] = ["descrizione", "description"];
const INDEX_KEYS: [&str; 8] = ["categorie", "codes", "indici", "indices", "code_indices", "codici", "categories", "indice"];
const CONTAINER_KEYS: [&str; 2] = ["Temi", "Themes"];

fn keys_with<'a>(key_map: Option<&'a KeyMap>, field: Field, fallback: &[&'a str]) -> Vec<&'a str> {
    let mut keys: Vec<&str> = key_map.and_then(|k| k.key_for(field)).into_iter().collect();
    keys.extend(fallback.iter().copied());
    keys
}

fn indices_from(value: &Value) -> Vec<usize> {
    match value {
        Value::Number(n) => n.as_u64().map(|n| vec![n as usize]).unwrap_or_default(),
        // "[12]: Open data" names one code, "0, 3, 5" lists several.
        Value::String(s) => numbers_in(s),
        Value::Array(items) => items
            .iter()
            .flat_map(|v| match v {
                Value::String(s) => numbers_in(s).into_iter().take(1).collect(),
                Value::Object(obj) => obj
                    .iter()
                    .find(|(k, _)| k.to_lowercase().starts_with("ind"))
                    .map(|(_, v)| indices_from(v))
                    .unwrap_or_default(),
                other => indices_from(other),
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn theme_from_object(obj: &Map<String, Value>, fallback_name: Option<&str>, key_map: Option<&KeyMap>) -> Option<Theme> {
    let text = |keys: &[&str]| {
        keys.iter()
            .find_map(|k| get_ci(obj, k))
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    };
    let name = text(&keys_with(key_map, Field::Name, &NAME_KEYS)).or_else(|| fallback_name.map(str::to_string))?;
    let description = text(&keys_with(key_map, Field::Description, &DESCRIPTION_KEYS)).unwrap_or_default();
    let code_indices = keys_with(key_map, Field::Indices, &INDEX_KEYS)
        .iter()
        .find_map(|k| get_ci(obj, k))
        .map(indices_from)
        .unwrap_or_default();
    Some(Theme {
        name: strip_theme_prefix(&name).to_string(),
        description,
        code_indices,
    })
}

fn themes_from_json(value: &Value, key_map: Option<&KeyMap>) -> Option<Vec<Theme>> {
    let container_keys = keys_with(key_map, Field::Themes, &CONTAINER_KEYS);
    let container = container_keys
        .iter()
        .find_map(|k| find_key(value, k))
        .or_else(|| value.is_array().then_some(value))?;
    let themes: Vec<Theme> = match container {
        Value::Array(items) => items
            .iter()
            .filter_map(Value::as_object)
            .filter_map(|obj| theme_from_object(obj, None, key_map))
            .collect(),
        Value::Object(map) => map
            .iter()
            .filter_map(|(k, v)| v.as_object().and_then(|obj| theme_from_object(obj, Some(k), key_map)))
            .collect(),
        _ => Vec::new(),
    };
    (!themes.is_empty()).then_some(themes)
}

fn themes_from_lines(raw: &str) -> Vec<Theme> {
    let mut themes: Vec<Theme> = Vec::new();
    let mut description: Vec<String> = Vec::new();
    let flush = |themes: &mut Vec<Theme>, description: &mut Vec<String>| {
        if let Some(last) = themes.last_mut() {
            last.description = description.join(" ");
        }
        description.clear();
    };
    for line in raw.lines() {
        if let Some(caps) = header_re().captures(line) {
            flush(&mut themes, &mut description);
            themes.push(Theme {
                name: caps[1].trim_matches(|c: char| c == '*' || c.is_whitespace()).to_string(),
                description: String::new(),
                code_indices: Vec::new(),
            });
            continue;
        }
        let Some(current) = themes.last_mut() else { continue };
        let trimmed = line.trim();
        if let Some(caps) = index_line_re().captures(line) {
            current.code_indices.extend(numbers_in(&caps[1]));
        } else if !trimmed.is_empty()
            && trimmed.chars().any(|c| c.is_ascii_digit())
            && trimmed.chars().all(|c| c.is_ascii_digit() || ", ;[]".contains(c))
        {
            current.code_indices.extend(numbers_in(trimmed));
        } else if !trimmed.is_empty() {
            let text = trimmed
                .strip_prefix("Descrizione:")
                .or_else(|| trimmed.strip_prefix("Description:"))
                .unwrap_or(trimmed)
                .trim();
            description.push(text.to_string());
        }
    }
    flush(&mut themes, &mut description);
    themes
}

/// Parses a theming response into themes in document order.
///
/// JSON is preferred (under `Temi`/`Themes`, or a bare array of theme
/// objects). Otherwise a line parser reads `Tema N: <name>` headers, the
/// description paragraph that follows, and index lines such as
/// `Categorie: 0, 3` or a bare `1, 5, 12`. Indices are not validated here.
pub fn parse_theme_response(raw: &str) -> Result<Vec<Theme>, ThemeParseError> {
    parse_theme_response_with(raw, None)
}

/// Like [`parse_theme_response`], trying the template's own keys first.
pub fn parse_theme_response_with(raw: &str, key_map: Option<&KeyMap>) -> Result<Vec<Theme>, ThemeParseError> {
    if raw.trim().is_empty() {
        return Err(ThemeParseError::Empty);
    }
    if let Some((value, _)) = extract_json(raw, |v| themes_from_json(v, key_map).is_some()) {
        return Ok(themes_from_json(&value, key_map).expect("predicate held"));
    }
    let themes = themes_from_lines(raw);
    if themes.is_empty() {
        return Err(ThemeParseError::NoThemes);
    }
    Ok(themes)
}

/// Drops out-of-range and repeated indices, then themes left empty.
/// Returns the surviving themes and one warning per change.
pub fn validate_themes(themes: Vec<Theme>, codebook_len: usize) -> (Vec<Theme>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    for mut theme in themes {
        if theme.name.trim().is_empty() {
            warnings.push("theme with empty name dropped".to_string());
            continue;
        }
        let mut seen = BTreeSet::new();
        let mut indices = Vec::with_capacity(theme.code_indices.len());
        for i in theme.code_indices {
            if i >= codebook_len {
                warnings.push(format!(
                    "theme {:?}: index {i} out of range (codebook has {codebook_len} codes); dropped",
                    theme.name
                ));
            } else if !seen.insert(i) {
                warnings.push(format!("theme {:?}: duplicate index {i} dropped", theme.name));
            } else {
                indices.push(i);
            }
        }
        if indices.is_empty() {
            warnings.push(format!("theme {:?} has no valid code indices; dropped", theme.name));
            continue;
        }
        theme.code_indices = indices;
        kept.push(theme);
    }
    (kept, warnings)
}

#[derive(Debug, Clone)]
pub struct ThemingOptions {
    pub model: String,
    pub temperature: f64,
    pub min_themes: usize,
    pub max_output_tokens: u32,
    pub run_id: String,
}

impl ThemingOptions {
    pub fn new(model: impl Into<String>, run_id: impl Into<String>) -> Self {
        ThemingOptions {
            model: model.into(),
            temperature: 0.0,
            min_themes: crate::prompting::DEFAULT_MIN_THEMES,
            max_output_tokens: 4096,
            run_id: run_id.into(),
        }
    }

    pub fn at(&self, temperature: f64) -> Self {
        ThemingOptions {
            temperature,
            ..self.clone()
        }
    }
}

/// A theme set plus what is needed to archive the call.
#[derive(Debug, Clone)]
pub struct ThemeRun {
    pub set: ThemeSet,
    pub raw_response: String,
    pub token_usage: TokenUsage,
    pub retries: u32,
}

pub fn render_theming_prompt(cb: &Codebook, template: &PromptTemplate, min_themes: usize) -> Result<String, ThemingError> {
    if template.phase != Phase::Theming {
        return Err(ThemingError::WrongPhase(template.name.clone()));
    }
    if cb.is_empty() {
        return Err(ThemingError::EmptyCodebook);
    }
    let bindings = BTreeMap::from([
        (CODES_LIST_VAR.to_string(), format_code_list(&cb.codes)?),
        (MIN_THEMES_VAR.to_string(), min_themes.to_string()),
    ]);
    Ok(render(template, &bindings)?)
}

pub fn generate_themes(
    cb: &Codebook,
    template: &PromptTemplate,
    provider: &dyn ChatProvider,
    opts: &ThemingOptions,
) -> Result<ThemeRun, ThemingError> {
    let temperature = opts.temperature;
    let prompt = render_theming_prompt(cb, template, opts.min_themes)?;
    let chat_err = |source| ThemingError::Chat { temperature, source };
    let request = ChatRequest::new(
        &opts.model,
        prompt,
        temperature,
        opts.max_output_tokens,
        format!("{}/theming/T{temperature}", opts.run_id),
    )
    .map_err(chat_err)?;
    let response = provider.chat(&request).map_err(chat_err)?;

    let parsed = parse_theme_response_with(&response.text, Some(&template.output_key_map)).map_err(|source| {
        ThemingError::Parse {
            temperature,
            source,
            raw: response.text.clone(),
        }
    })?;
    let (themes, mut warnings) = validate_themes(parsed, cb.len());
    if themes.is_empty() {
        return Err(ThemingError::NoValidThemes {
            temperature,
            raw: response.text,
        });
    }
    if response.truncated {
        warnings.push("response was truncated at the output-token limit".into());
    }
    if themes.len() < opts.min_themes {
        warnings.push(format!(
            "below minimum: {} themes, at least {} requested",
            themes.len(),
            opts.min_themes
        ));
    }
    for w in &warnings {
        log::warn!("T={temperature}: {w}");
    }
    Ok(ThemeRun {
        set: ThemeSet {
            run_id: opts.run_id.clone(),
            temperature,
            min_themes: opts.min_themes,
            model: response.model,
            themes,
            raw_response_path: None,
            warnings,
        },
        raw_response: response.text,
        token_usage: response.token_usage,
        retries: response.retries,
    })
}

/// Outcome of one sweep temperature.
pub type SweepResult = (f64, Result<ThemeRun, ThemingError>);

/// One theme run per temperature, in the order given. A failed run is
/// reported in place and does not stop the others.
pub fn sweep_temperatures(
    cb: &Codebook,
    template: &PromptTemplate,
    provider: &dyn ChatProvider,
    temps: &[f64],
    opts: &ThemingOptions,
    parallelism: usize,
) -> Result<Vec<SweepResult>, ThemingError> {
    if temps.is_empty() {
        return Err(ThemingError::Sweep("no temperatures given".into()));
    }
    if let Some(t) = temps.iter().find(|t| !(0.0..=2.0).contains(*t)) {
        return Err(ThemingError::Sweep(format!("temperature {t} outside [0, 2]")));
    }
    if template.phase != Phase::Theming {
        return Err(ThemingError::WrongPhase(template.name.clone()));
    }
    Ok(map_bounded(temps, parallelism, |&t| {
        (t, generate_themes(cb, template, provider, &opts.at(t)))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRef {
    pub run_id: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeMember {
    /// Position in [`StabilityReport::runs`].
    pub run: usize,
    /// Position of the theme within its set.
    pub theme: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    /// Positions in the cluster's member list.
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeCluster {
    /// Name of the member from the lowest-temperature run.
    pub name: String,
    pub members: Vec<ThemeMember>,
    pub scores: Vec<PairScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: Vec<RunRef>,
    pub clusters: Vec<ThemeCluster>,
    /// Themes matched in no other run.
    pub singletons: Vec<ThemeMember>,
    pub match_threshold: f64,
    pub embedder_id: String,
}

impl StabilityReport {
    pub fn member_count(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum::<usize>() + self.singletons.len()
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.runs.iter().map(|r| format!("T={}", r.temperature)).collect();
        out.push_str(&format!("| Cluster | {} |\n", header.join(" | ")));
        out.push_str(&format!("|---|{}\n", "---|".repeat(self.runs.len())));
        for cluster in &self.clusters {
            let cells: Vec<String> = (0..self.runs.len())
                .map(|run| {
                    cluster
                        .members
                        .iter()
                        .find(|m| m.run == run)
                        .map_or_else(String::new, |m| md_cell(&m.name))
                })
                .collect();
            out.push_str(&format!("| {} | {} |\n", md_cell(&cluster.name), cells.join(" | ")));
        }
        out.push_str("\n### Possibly not relevant\n\n");
        if self.singletons.is_empty() {
            out.push_str("None: every theme recurs in another run.\n");
        }
        for s in &self.singletons {
            out.push_str(&format!("- {} (T={})\n", s.name, self.runs[s.run].temperature));
        }
        out
    }
}

pub(crate) fn md_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

/// Matches themes across runs.
///
/// Runs are taken in ascending temperature. The first run seeds one cluster
/// per theme. For each later run, every (theme, cluster) pair whose best
/// cosine against any cluster member reaches `threshold` is a candidate;
/// candidates are accepted greedily by descending score (ties: lower theme
/// position, then lower cluster position), with at most one theme of the run
/// per cluster. Unmatched themes open new clusters. Clusters that end with a
/// single member are reported as singletons.
pub fn stability(
    sets: &[ThemeSet],
    embedder: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<StabilityReport, ThemingError> {
    if sets.len() < 2 {
        return Err(ThemingError::TooFewSets(sets.len()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ThemingError::Threshold(threshold));
    }
    let mut order: Vec<&ThemeSet> = sets.iter().collect();
    order.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));

    let texts: Vec<String> = order
        .iter()
        .flat_map(|s| s.themes.iter().map(Theme::embedding_text))
        .collect();
    let vectors = if texts.is_empty() {
        Vec::new()
    } else {
        embedder.embed(&texts).map_err(ThemingError::Embed)?
    };
    // vector_of[run][theme] -> position in `vectors`
    let mut vector_of: Vec<Vec<usize>> = Vec::new();
    let mut next = 0;
    for set in &order {
        vector_of.push((next..next + set.themes.len()).collect());
        next += set.themes.len();
    }
    let score = |(r1, t1): (usize, usize), (r2, t2): (usize, usize)| -> Result<f64, ThemingError> {
        cosine(&vectors[vector_of[r1][t1]], &vectors[vector_of[r2][t2]])
            .map_err(|e| ThemingError::Embed(GatewayError::Malformed(e.to_string())))
    };

    let mut clusters: Vec<Vec<(usize, usize)>> = Vec::new();
    for (run, set) in order.iter().enumerate() {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for theme in 0..set.themes.len() {
            for (c, members) in clusters.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for &m in members {
                    best = best.max(score((run, theme), m)?);
                }
                if best + SCORE_EPSILON >= threshold {
                    candidates.push((best, theme, c));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut theme_used = vec![false; set.themes.len()];
        let mut cluster_used = vec![false; clusters.len()];
        for (_, theme, c) in candidates {
            if !theme_used[theme] && !cluster_used[c] {
                theme_used[theme] = true;
                cluster_used[c] = true;
                clusters[c].push((run, theme));
            }
        }
        for (theme, used) in theme_used.into_iter().enumerate() {
            if !used {
                clusters.push(vec![(run, theme)]);
            }
        }
    }

    let member = |(run, theme): (usize, usize)| ThemeMember {
        run,
        theme,
        name: order[run].themes[theme].name.clone(),
    };
    let mut report_clusters = Vec::new();
    let mut singletons = Vec::new();
    for members in clusters {
        if members.len() == 1 {
            singletons.push(member(members[0]));
            continue;
        }
        let mut scores = Vec::new();
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                scores.push(PairScore {
                    a,
                    b,
                    score: score(members[a], members[b])?,
                });
            }
        }
        report_clusters.push(ThemeCluster {
            name: order[members[0].0].themes[members[0].1].name.clone(),
            members: members.into_iter().map(member).collect(),
            scores,
        });
    }
    singletons.sort_by_key(|m| (m.run, m.theme));
    Ok(StabilityReport {
        runs: order
            .iter()
            .map(|s| RunRef {
                run_id: s.run_id.clone(),
                temperature: s.temperature,
            })
            .collect(),
        clusters: report_clusters,
        singletons,
        match_threshold: threshold,
        embedder_id: embedder.id(),
    })
}
