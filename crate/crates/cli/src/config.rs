//! TOML run configuration and its resolution against command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use thema_core::corpus::DEFAULT_MAX_CHARS;
use thema_core::evaluation::{TextMode, DEFAULT_DIAGONAL_THRESHOLD};
use thema_core::prompting::DEFAULT_MIN_THEMES;
use thema_core::theming::DEFAULT_STABILITY_THRESHOLD;

use crate::CliError;

pub const CONFIG_ENV: &str = "THEMA_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub provider: ProviderKind,
    pub endpoint: String,
    pub coding_model: String,
    pub theming_model: String,
    /// Directory holding `fixtures.json` for the mock provider.
    pub fixtures: Option<PathBuf>,
    pub timeout_secs: u64,
    pub requests_per_minute: u32,
    pub max_output_tokens: u32,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            provider: ProviderKind::Http,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            coding_model: "gpt-3.5-turbo".into(),
            theming_model: "gpt-4-turbo".into(),
            fixtures: None,
            timeout_secs: 120,
            requests_per_minute: 30,
            max_output_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub provider: ProviderKind,
    pub endpoint: String,
    pub model: String,
    /// Vector size of the mock embedder.
    pub dimension: usize,
    pub batch_size: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            provider: ProviderKind::Http,
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            dimension: 512,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Temperatures {
    pub coding: f64,
    pub theming: f64,
    pub sweep: Vec<f64>,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            coding: 0.0,
            theming: 0.0,
            sweep: vec![0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub stability: f64,
    pub diagonal: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            stability: DEFAULT_STABILITY_THRESHOLD,
            diagonal: DEFAULT_DIAGONAL_THRESHOLD,
        }
    }
}

/// Template selectors: `builtin:<name>`, a builtin name, or a file path.
/// Unset means the builtin for the corpus language.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub coding: Option<String>,
    pub theming: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub embed_text: TextMode,
    pub rater: String,
    /// Heatmap anchors for -1, 0 and +1.
    pub colors: [String; 3],
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            embed_text: TextMode::Names,
            rater: "rater".into(),
            colors: ["#b2182b".into(), "#ffffff".into(), "#2166ac".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub language: String,
    pub corpus_dir: Option<PathBuf>,
    pub output_root: PathBuf,
    pub run_id: Option<String>,
    pub min_themes: usize,
    pub parallelism: usize,
    pub max_chars: usize,
    pub reference: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub chat: ChatConfig,
    pub embed: EmbedConfig,
    pub temperatures: Temperatures,
    pub thresholds: Thresholds,
    pub templates: Templates,
    pub evaluation: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            language: "it".into(),
            corpus_dir: None,
            output_root: PathBuf::from("runs"),
            run_id: None,
            min_themes: DEFAULT_MIN_THEMES,
            parallelism: 4,
            max_chars: DEFAULT_MAX_CHARS,
            reference: None,
            pairs: None,
            scores: None,
            chat: ChatConfig::default(),
            embed: EmbedConfig::default(),
            temperatures: Temperatures::default(),
            thresholds: Thresholds::default(),
            templates: Templates::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        rebase(base, p);
    }
}

/// Selectors that name a file are rebased; builtin names are left alone.
fn rebase_selector(base: &Path, s: &mut Option<String>) {
    if let Some(sel) = s {
        let builtin = sel.starts_with("builtin:") || thema_core::prompting::BUILTIN_NAMES.contains(&sel.as_str());
        if !builtin && Path::new(sel.as_str()).is_relative() {
            *sel = base.join(sel.as_str()).display().to_string();
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
    }

    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase_opt(base, &mut cfg.corpus_dir);
        rebase(base, &mut cfg.output_root);
        rebase_opt(base, &mut cfg.reference);
        rebase_opt(base, &mut cfg.pairs);
        rebase_opt(base, &mut cfg.scores);
        rebase_opt(base, &mut cfg.chat.fixtures);
        rebase_selector(base, &mut cfg.templates.coding);
        rebase_selector(base, &mut cfg.templates.theming);
        Ok(cfg)
    }

    /// `--config` wins over `THEMA_CONFIG`; with neither, builtin defaults.
    pub fn discover(flag: Option<&Path>) -> Result<Self, CliError> {
        match flag {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        for (name, v) in [("stability", self.thresholds.stability), ("diagonal", self.thresholds.diagonal)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} threshold {v} must be in (0, 1]"));
            }
        }
        let temps = [self.temperatures.coding, self.temperatures.theming]
            .into_iter()
            .chain(self.temperatures.sweep.iter().copied());
        for t in temps {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("temperature {t} must be in [0, 2]"));
            }
        }
        if self.min_themes < 1 {
            return bad("min_themes must be at least 1".into());
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1".into());
        }
        if self.embed.batch_size < 1 {
            return bad("embed.batch_size must be at least 1".into());
        }
        thema_core::corpus::validate_language(&self.language).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// The resolved configuration as recorded in the run manifest.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.min_themes, 9);
        assert_eq!(cfg.temperatures.sweep, [0.25, 0.5, 0.75]);
        assert_eq!(cfg.chat.coding_model, "gpt-3.5-turbo");
        assert_eq!(cfg.chat.theming_model, "gpt-4-turbo");
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml_str(
            "language = \"en\"\n[thresholds]\nstability = 0.8\n[evaluation]\nembed_text = \"names+descriptions\"\n",
        )
        .unwrap();
        assert_eq!(cfg.language, "en");
        assert_eq!(cfg.thresholds.stability, 0.8);
        assert_eq!(cfg.thresholds.diagonal, 0.6);
        assert_eq!(cfg.evaluation.embed_text, TextMode::NamesAndDescriptions);
    }

    #[test]
    fn rejects_out_of_range_and_unknown_keys() {
        let mut cfg = RunConfig::default();
        cfg.thresholds.diagonal = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.temperatures.sweep.push(2.5);
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            min_themes: 0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml_str("min_theme = 3").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thema.toml");
        std::fs::write(
            &path,
            "corpus_dir = \"corpus\"\n[chat]\nprovider = \"mock\"\nfixtures = \"mock\"\n[templates]\ncoding = \"builtin:coding-en\"\ntheming = \"t.txt\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus_dir.unwrap(), dir.path().join("corpus"));
        assert_eq!(cfg.chat.fixtures.unwrap(), dir.path().join("mock"));
        assert_eq!(cfg.output_root, dir.path().join("runs"));
        assert_eq!(cfg.templates.coding.as_deref(), Some("builtin:coding-en"));
        assert_eq!(cfg.templates.theming.unwrap(), dir.path().join("t.txt").display().to_string());
    }
}
