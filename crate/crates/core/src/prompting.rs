//! Language-parameterized prompt templates for initial coding and theming.
//!
//! A template file is UTF-8 text with a small front-matter block followed by a
//! `---` line and the body:
//!
//! ```text
//! phase: coding
//! language: it
//! keys: Categorie=codes, nome=name, descrizione=description, citazione=quote
//! ---
//! ...prompt body with {testo}...
//! ```
//!
//! Placeholders are `{identifier}`. Substitution is single-pass: braces inside
//! bound values (interview text, code lists) are never expanded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coding::InitialCode;

pub const TRANSCRIPT_VAR: &str = "testo";
pub const CODES_LIST_VAR: &str = "codes_list";
pub const MIN_THEMES_VAR: &str = "min_themes";
pub const DEFAULT_MIN_THEMES: usize = 9;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("template {name}: {message}")]
    Invalid { name: String, message: String },
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("unknown builtin template {0:?}")]
    UnknownBuiltin(String),
    #[error("cannot format an empty code list")]
    EmptyCodeList,
    #[error("code indices must be contiguous from 0; position {position} has index {index}")]
    NonContiguous { position: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Coding,
    Theming,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Coding => "coding",
            Phase::Theming => "theming",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "coding" => Ok(Phase::Coding),
            "theming" => Ok(Phase::Theming),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

/// Canonical field a response JSON key maps onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    /// Container holding the list of codes (coding phase).
    Codes,
    /// Container holding the list of themes (theming phase).
    Themes,
    Name,
    Description,
    Quote,
    Indices,
}

impl std::str::FromStr for Field {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "codes" => Field::Codes,
            "themes" => Field::Themes,
            "name" => Field::Name,
            "description" => Field::Description,
            "quote" => Field::Quote,
            "indices" => Field::Indices,
            other => return Err(format!("unknown canonical field {other:?}")),
        })
    }
}

impl Field {
    fn as_str(self) -> &'static str {
        match self {
            Field::Codes => "codes",
            Field::Themes => "themes",
            Field::Name => "name",
            Field::Description => "description",
            Field::Quote => "quote",
            Field::Indices => "indices",
        }
    }
}

/// Maps the JSON keys a template asks the model to emit onto canonical fields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMap(BTreeMap<String, Field>);

impl KeyMap {
    pub fn new<'a>(pairs: impl IntoIterator<Item = (&'a str, Field)>) -> Self {
        KeyMap(pairs.into_iter().map(|(k, f)| (k.to_string(), f)).collect())
    }

    /// The template key for a canonical field, if mapped.
    pub fn key_for(&self, field: Field) -> Option<&str> {
        self.0
            .iter()
            .find(|(_, f)| **f == field)
            .map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Field)> {
        self.0.iter().map(|(k, f)| (k.as_str(), *f))
    }

    fn parse(line: &str) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for part in line.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, field) = part
                .split_once('=')
                .ok_or_else(|| format!("key mapping {part:?} is not key=field"))?;
            map.insert(key.trim().to_string(), field.parse::<Field>()?);
        }
        Ok(KeyMap(map))
    }

    fn to_line(&self) -> String {
        self.0
            .iter()
            .map(|(k, f)| format!("{k}={}", f.as_str()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Canonical fields this phase's response must provide.
    fn required(phase: Phase) -> [Field; 4] {
        match phase {
            Phase::Coding => [Field::Codes, Field::Name, Field::Description, Field::Quote],
            Phase::Theming => [Field::Themes, Field::Name, Field::Description, Field::Indices],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub phase: Phase,
    pub language: String,
    pub body: String,
    pub output_key_map: KeyMap,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"))
}

/// Placeholder names in order of first appearance.
pub fn placeholders(body: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    placeholder_re()
        .captures_iter(body)
        .map(|c| c[1].to_string())
        .filter(|name| seen.insert(name.clone()))
        .collect()
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        phase: Phase,
        language: impl Into<String>,
        body: impl Into<String>,
        output_key_map: KeyMap,
    ) -> Result<Self, PromptError> {
        let template = PromptTemplate {
            name: name.into(),
            phase,
            language: language.into(),
            body: body.into(),
            output_key_map,
        };
        template.validate()?;
        Ok(template)
    }

    fn invalid(&self, message: impl Into<String>) -> PromptError {
        PromptError::Invalid {
            name: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let count = |var: &str| {
            placeholder_re()
                .captures_iter(&self.body)
                .filter(|c| &c[1] == var)
                .count()
        };
        match self.phase {
            Phase::Coding => {
                let n = count(TRANSCRIPT_VAR);
                if n != 1 {
                    return Err(self.invalid(format!(
                        "coding templates need exactly one {{{TRANSCRIPT_VAR}}} placeholder, found {n}"
                    )));
                }
            }
            Phase::Theming => {
                for var in [CODES_LIST_VAR, MIN_THEMES_VAR] {
                    if count(var) == 0 {
                        return Err(self.invalid(format!("theming templates need a {{{var}}} placeholder")));
                    }
                }
            }
        }
        for field in KeyMap::required(self.phase) {
            if self.output_key_map.key_for(field).is_none() {
                return Err(self.invalid(format!("key map does not cover {}", field.as_str())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the unrendered body, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    /// Parses the front-matter file format described in the module docs.
    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let file_err = |message: String| PromptError::File {
            path: name.to_string(),
            message,
        };
        let source = source.strip_prefix('\u{feff}').unwrap_or(source);
        let mut lines = source.split_inclusive('\n');
        let mut phase = None;
        let mut language = None;
        let mut keys = None;
        let mut consumed = 0usize;
        let mut first = true;
        let mut closed = false;
        for line in lines.by_ref() {
            consumed += line.len();
            let trimmed = line.trim();
            if trimmed == "---" {
                if first {
                    first = false;
                    continue;
                }
                closed = true;
                break;
            }
            first = false;
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once(':')
                .ok_or_else(|| file_err(format!("front-matter line {trimmed:?} is not key: value")))?;
            let value = value.trim();
            match key.trim() {
                "phase" => phase = Some(value.parse::<Phase>().map_err(file_err)?),
                "language" => language = Some(value.to_string()),
                "keys" => keys = Some(KeyMap::parse(value).map_err(file_err)?),
                other => return Err(file_err(format!("unknown front-matter key {other:?}"))),
            }
        }
        if !closed {
            return Err(file_err("front-matter is not terminated by a --- line".into()));
        }
        let body = source[consumed..].to_string();
        PromptTemplate::new(
            name,
            phase.ok_or_else(|| file_err("front-matter lacks phase:".into()))?,
            language.ok_or_else(|| file_err("front-matter lacks language:".into()))?,
            body,
            keys.ok_or_else(|| file_err("front-matter lacks keys:".into()))?,
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let source = std::fs::read_to_string(path).map_err(|e| PromptError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("template")
            .to_string();
        PromptTemplate::parse(&name, &source)
    }

    /// Serializes back to the front-matter file format.
    pub fn to_file_string(&self) -> String {
        format!(
            "phase: {}\nlanguage: {}\nkeys: {}\n---\n{}",
            self.phase,
            self.language,
            self.output_key_map.to_line(),
            self.body
        )
    }
}

/// Substitutes every placeholder in `template.body`.
///
/// Bindings that name no placeholder are logged and ignored.
pub fn render(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String, PromptError> {
    render_body(&template.body, bindings)
}

pub fn render_body(body: &str, bindings: &BTreeMap<String, String>) -> Result<String, PromptError> {
    let names = placeholders(body);
    if let Some(missing) = names.iter().find(|n| !bindings.contains_key(*n)) {
        return Err(PromptError::MissingBinding(missing.clone()));
    }
    for unused in bindings.keys().filter(|k| !names.contains(k)) {
        log::warn!("binding {{{unused}}} does not appear in the template; ignored");
    }
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for caps in placeholder_re().captures_iter(body) {
        let whole = caps.get(0).expect("group 0");
        out.push_str(&body[last..whole.start()]);
        out.push_str(&bindings[&caps[1]]);
        last = whole.end();
    }
    out.push_str(&body[last..]);
    Ok(out)
}

/// Renders the code list injected into theming prompts: entries of the form
/// `[i]: name. description. quote` joined by `", "`.
///
/// Periods inside fields are not escaped; only the indices need to survive.
pub fn format_code_list(codes: &[InitialCode]) -> Result<String, PromptError> {
    if codes.is_empty() {
        return Err(PromptError::EmptyCodeList);
    }
    let mut entries = Vec::with_capacity(codes.len());
    for (position, code) in codes.iter().enumerate() {
        if code.index != position {
            return Err(PromptError::NonContiguous {
                position,
                index: code.index,
            });
        }
        entries.push(format!(
            "[{}]: {}. {}. {}",
            code.index, code.name, code.description, code.quote
        ));
    }
    Ok(entries.join(", "))
}

const CODING_IT: &str = "\
Puoi assistermi nella generazione di una vasta gamma di categorie iniziali (genera tutte le categorie che ritieni indispensabili per catturare a pieno il significato esplicito o latente, o gli eventi nel testo, concentrati sull'intervistato e non sull'intervistatore che fa le domande), L'obiettivo e' quello di raccogliere un ampio spettro di argomenti, azioni e idee presenti nel testo qui sotto, per aiutarmi nella conduzione di un'analisi tematica.

Fornisci un nome per ciascuna categoria, con una descrizione densa di massimo 25 parole e una citazione dell'intervistato per ogni categoria di massimo 100 parole.

Formatta la risposta come un file json mantenendo nomi, descrizioni e citazioni insieme nell'oggetto 'Categorie'.

```{testo}```
";

const CODING_EN: &str = "\
Can you assist me in generating a broad range of initial codes (generate all the codes you consider necessary to fully capture the explicit or latent meaning, or the events in the text, focusing on the interviewee and not on the interviewer asking the questions). The goal is to collect a wide spectrum of topics, actions and ideas present in the text below, to help me conduct a thematic analysis.

Provide a name for each code, with a dense description of at most 25 words and a quote from the interviewee for each code of at most 100 words. Write the names, descriptions and quotes in the original language of the interview data.

Format the response as a json file keeping names, descriptions and quotes together in the object 'Codes'.

```{testo}```
";

const THEMING_IT: &str = "\
Leggi prima l'elenco delle categorie iniziali della mia Analisi Tematica: {codes_list}.
Le categorie iniziali sono nel seguente formato:
[indice]: nome_codice. descrizione_codice. citazione

Determina tutti i possibili temi (almeno {min_themes}) ordinando, confrontando e raggruppando le categorie iniziali.

Fornisci un numero adeguato di temi insieme a un nome, una descrizione densa (120 parole) e l'elenco delle categorie (indice) per ciascun tema.
Assicurati che i temi catturino la ricchezza e la diversità dei codici iniziali.

Formatta la risposta come un file json con l'oggetto 'Temi': per ciascun tema indica 'nome', 'descrizione' e 'categorie' (l'elenco degli indici numerici).
";

const THEMING_EN: &str = "\
First read the list of initial codes of my Thematic Analysis: {codes_list}.
The initial codes are in the following format:
[index]: code_name. code_description. quote

Determine all the possible themes (at least {min_themes}) by sorting, comparing and grouping the initial codes.

Provide an appropriate number of themes together with a name, a dense description (120 words) and the list of codes (index) for each theme.
Make sure the themes capture the richness and diversity of the initial codes.

Format the response as a json file with the object 'Themes': for each theme give 'name', 'description' and 'codes' (the list of numeric indices).
";

/// Builtin template names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["coding-it", "theming-it", "coding-en", "theming-en"];

pub fn builtin_templates() -> Vec<PromptTemplate> {
    let italian_codes = KeyMap::new([
        ("Categorie", Field::Codes),
        ("nome", Field::Name),
        ("descrizione", Field::Description),
        ("citazione", Field::Quote),
    ]);
    let italian_themes = KeyMap::new([
        ("Temi", Field::Themes),
        ("nome", Field::Name),
        ("descrizione", Field::Description),
        ("categorie", Field::Indices),
    ]);
    let english_codes = KeyMap::new([
        ("Codes", Field::Codes),
        ("name", Field::Name),
        ("description", Field::Description),
        ("quote", Field::Quote),
    ]);
    let english_themes = KeyMap::new([
        ("Themes", Field::Themes),
        ("name", Field::Name),
        ("description", Field::Description),
        ("codes", Field::Indices),
    ]);
    [
        ("coding-it", Phase::Coding, "it", CODING_IT, italian_codes),
        ("theming-it", Phase::Theming, "it", THEMING_IT, italian_themes),
        ("coding-en", Phase::Coding, "en", CODING_EN, english_codes),
        ("theming-en", Phase::Theming, "en", THEMING_EN, english_themes),
    ]
    .into_iter()
    .map(|(name, phase, lang, body, keys)| {
        PromptTemplate::new(name, phase, lang, body, keys).expect("builtin templates are valid")
    })
    .collect()
}

pub fn builtin(name: &str) -> Result<PromptTemplate, PromptError> {
    builtin_templates()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| PromptError::UnknownBuiltin(name.to_string()))
}

/// Resolves `builtin:<name>`, a bare builtin name, or a template file path.
pub fn resolve(selector: &str) -> Result<PromptTemplate, PromptError> {
    if let Some(name) = selector.strip_prefix("builtin:") {
        return builtin(name);
    }
    if BUILTIN_NAMES.contains(&selector) {
        return builtin(selector);
    }
    PromptTemplate::from_file(Path::new(selector))
}

/// Default builtin for a phase and language; falls back to English.
pub fn default_for(phase: Phase, language: &str) -> PromptTemplate {
    let primary = language.split('-').next().unwrap_or(language);
    let all = builtin_templates();
    all.iter()
        .find(|t| t.phase == phase && t.language == primary)
        .or_else(|| all.iter().find(|t| t.phase == phase && t.language == "en"))
        .cloned()
        .expect("english builtins exist for every phase")
}
