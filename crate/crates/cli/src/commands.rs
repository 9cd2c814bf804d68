//! Subcommand implementations.
//!
//! Each command opens (or reopens) a run directory, runs its phases, then
//! rebuilds `summary.md` from whatever artifacts the directory holds and
//! writes the manifest last, also when a phase failed.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use thema_core::coding::{
    aggregate_codebook, code_corpus, code_transcript, codebook_from_csv, codebook_to_csv_string, quote_audit,
    render_coding_prompt, saturation, Codebook, CodingOptions, Normalization,
};
use thema_core::corpus::{load_corpus_with, load_reference_categories, CorpusOptions, Transcript};
use thema_core::evaluation::{
    align_greedy, align_manual, compare_codebooks, diagonal_report, ingest_human_scores, similarity_matrix,
    CodebookComparison, DiagonalReport, HumanScoreSet, LabeledTextSet, SimilarityMatrix, TextMode,
};
use thema_core::gateway::{
    ChatProvider, Credential, EmbeddingProvider, HttpChatProvider, HttpConfig, HttpEmbeddingProvider,
    MockChatProvider, MockEmbeddingProvider, CHAT_KEY_ENV, EMBED_KEY_ENV,
};
use thema_core::prompting::{default_for, resolve, Phase, PromptTemplate};
use thema_core::reporting::{
    matrix_csv_string, new_run_id, render_heatmap_svg_string, write_run_summary, ColorScale, CorpusStats,
    EvalSection, PhaseStats, RunDir, RunManifest, SummaryInputs,
};
use thema_core::theming::{
    generate_themes, render_theming_prompt, stability, sweep_temperatures, themes_file_name, StabilityReport,
    ThemeRun, ThemeSet, ThemingOptions,
};

use crate::config::{ProviderKind, RunConfig};
use crate::{Cli, CliError, Command};

const SKIP_NOTE: &str = "evaluation skipped: ";

pub fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    let dry = cli.dry_run;
    match &cli.command {
        Command::Code(_) => cmd_code(cfg, dry).map(drop),
        Command::Themes(a) => cmd_themes(cfg, &a.codebook, dry).map(drop),
        Command::Refine(a) => cmd_refine(cfg, &a.codebook, dry).map(drop),
        Command::Eval(a) => cmd_eval(cfg, &a.themes, dry).map(drop),
        Command::ComparePrompts(a) => {
            cmd_compare_prompts(cfg, &a.transcript, &a.template_a, &a.template_b, a.pairs.as_deref(), dry).map(drop)
        }
        Command::Run(_) => cmd_run(cfg, dry).map(drop),
    }
}

#[derive(Debug)]
pub struct CodeOutcome {
    pub run_dir: PathBuf,
    pub codebook: Codebook,
    /// (transcript id, error)
    pub failures: Vec<(String, String)>,
}

#[derive(Debug)]
pub struct ThemesOutcome {
    pub run_dir: PathBuf,
    pub set: ThemeSet,
}

#[derive(Debug)]
pub struct RefineOutcome {
    pub run_dir: PathBuf,
    /// Sets produced by this sweep, in sweep order.
    pub sets: Vec<ThemeSet>,
    /// (temperature, error)
    pub failures: Vec<(f64, String)>,
    pub stability: Option<StabilityReport>,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub run_dir: PathBuf,
    pub text_mode: TextMode,
    /// Reordered so aligned pairs sit on the diagonal.
    pub matrix: SimilarityMatrix,
    pub report: DiagonalReport,
    pub human_scores: Option<HumanScoreSet>,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub run_dir: PathBuf,
    pub a: Codebook,
    pub b: Codebook,
    pub comparison: CodebookComparison,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub code: CodeOutcome,
    pub themes: ThemesOutcome,
    pub refine: RefineOutcome,
    pub eval: Option<EvalOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FailureRecord {
    phase: String,
    item: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct EvalRecord<'a> {
    themes: String,
    reference: String,
    text_mode: TextMode,
    embedder_id: &'a str,
    alignment: &'a thema_core::evaluation::PairAlignment,
    report: &'a DiagonalReport,
}

// ---------------------------------------------------------------- plumbing

pub fn chat_provider(cfg: &RunConfig) -> Result<Box<dyn ChatProvider>, CliError> {
    match cfg.chat.provider {
        ProviderKind::Mock => {
            let dir = cfg
                .chat
                .fixtures
                .as_ref()
                .ok_or_else(|| CliError::Usage("chat.provider is mock but chat.fixtures is not set".into()))?;
            let mock = MockChatProvider::from_dir(dir).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Box::new(mock))
        }
        ProviderKind::Http => {
            let credential = Credential::from_env(CHAT_KEY_ENV, None).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Box::new(HttpChatProvider::new(http_config(cfg, &cfg.chat.endpoint, credential))))
        }
    }
}

pub fn embed_provider(cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    match cfg.embed.provider {
        ProviderKind::Mock => Ok(Box::new(
            MockEmbeddingProvider::new(cfg.embed.dimension).map_err(|e| CliError::Usage(e.to_string()))?,
        )),
        ProviderKind::Http => {
            let credential =
                Credential::from_env(EMBED_KEY_ENV, Some(CHAT_KEY_ENV)).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Box::new(HttpEmbeddingProvider::new(
                http_config(cfg, &cfg.embed.endpoint, credential),
                &cfg.embed.model,
                cfg.embed.batch_size,
            )))
        }
    }
}

fn http_config(cfg: &RunConfig, endpoint: &str, credential: Credential) -> HttpConfig {
    let mut http = HttpConfig::new(endpoint, credential);
    http.timeout = Duration::from_secs(cfg.chat.timeout_secs);
    http.requests_per_minute = Some(cfg.chat.requests_per_minute).filter(|&n| n > 0);
    http
}

fn template(cfg: &RunConfig, phase: Phase, selector: Option<&str>) -> Result<PromptTemplate, CliError> {
    let t = match selector {
        Some(s) => resolve(s)?,
        None => default_for(phase, &cfg.language),
    };
    if t.phase != phase {
        return Err(CliError::Usage(format!(
            "template {} is a {} template; a {phase} template is needed here",
            t.name, t.phase
        )));
    }
    Ok(t)
}

fn coding_template(cfg: &RunConfig) -> Result<PromptTemplate, CliError> {
    template(cfg, Phase::Coding, cfg.templates.coding.as_deref())
}

fn theming_template(cfg: &RunConfig) -> Result<PromptTemplate, CliError> {
    template(cfg, Phase::Theming, cfg.templates.theming.as_deref())
}

fn load_transcripts(cfg: &RunConfig) -> Result<Vec<Transcript>, CliError> {
    let dir = cfg
        .corpus_dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("no corpus directory; pass --corpus or set corpus_dir".into()))?;
    let opts = CorpusOptions {
        max_chars: cfg.max_chars,
        ..CorpusOptions::default()
    };
    Ok(load_corpus_with(dir, &cfg.language, &opts)?)
}

/// If `artifact` sits inside a run directory (its folder holds a manifest),
/// that directory is reused; otherwise a fresh one is created.
fn open_run_dir(cfg: &RunConfig, artifact: Option<&Path>) -> Result<(RunDir, bool), CliError> {
    if let Some(parent) = artifact.and_then(Path::parent) {
        let parent = if parent.as_os_str().is_empty() { Path::new(".") } else { parent };
        if parent.join(RunDir::MANIFEST).is_file() {
            let abs = std::fs::canonicalize(parent).map_err(|e| CliError::Usage(format!("{}: {e}", parent.display())))?;
            if let (Some(root), Some(name)) = (abs.parent(), abs.file_name()) {
                let id = name.to_string_lossy().into_owned();
                let dir = RunDir::open(root, RunManifest::new(id, cfg.snapshot()))?;
                return Ok((dir, true));
            }
        }
    }
    let id = cfg.run_id.clone().unwrap_or_else(new_run_id);
    Ok((RunDir::open(&cfg.output_root, RunManifest::new(id, cfg.snapshot()))?, false))
}

fn read_json<T: DeserializeOwned>(dir: &RunDir, rel: &str) -> Option<T> {
    let text = std::fs::read_to_string(dir.join(rel)).ok()?;
    match serde_json::from_str(&text) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("ignoring unreadable {rel}: {e}");
            None
        }
    }
}

fn write_json<T: Serialize>(dir: &mut RunDir, name: &str, rel: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    dir.write(name, rel, text.as_bytes())?;
    Ok(())
}

fn record_failures(dir: &mut RunDir, phase: &str, new: &[(String, String)]) -> Result<(), CliError> {
    let mut all: Vec<FailureRecord> = read_json(dir, "failures.json").unwrap_or_default();
    all.retain(|f| f.phase != phase);
    all.extend(new.iter().map(|(item, error)| FailureRecord {
        phase: phase.into(),
        item: item.clone(),
        error: error.clone(),
    }));
    if all.is_empty() && !dir.join("failures.json").exists() {
        return Ok(());
    }
    write_json(dir, "failures", "failures.json", &all)
}

fn theme_set_files(dir: &RunDir) -> Vec<ThemeSet> {
    let mut sets: Vec<ThemeSet> = std::fs::read_dir(dir.path())
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            (name.starts_with("themes_T") && name.ends_with(".json")).then(|| ThemeSet::load(&e.path()).ok())?
        })
        .collect();
    sets.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
    sets
}

/// Rebuilds `summary.md` from the artifacts on disk, then writes the
/// manifest. The directory may hold output of several commands.
fn finalize(dir: &mut RunDir) -> Result<(), CliError> {
    let codebook = codebook_from_csv(&dir.join("codebook.csv")).ok();
    let failures: Vec<FailureRecord> = read_json(dir, "failures.json").unwrap_or_default();
    let evaluation: Vec<EvalSection> = read_json(dir, "eval/sections.json").unwrap_or_default();
    let evaluation_skipped = if evaluation.is_empty() {
        dir.manifest.notes.iter().find_map(|n| n.strip_prefix(SKIP_NOTE)).map(str::to_string)
    } else {
        None
    };
    let inputs = SummaryInputs {
        corpus: read_json::<CorpusStats>(dir, "corpus.json"),
        codebook: codebook.as_ref().map(|cb| (cb.len(), cb.transcript_ids().len())),
        saturation: read_json(dir, "saturation.json"),
        quote_audit: read_json(dir, "quote_audit.json"),
        failures: failures
            .into_iter()
            .map(|f| (format!("{} {}", f.phase, f.item), f.error))
            .collect(),
        theme_sets: theme_set_files(dir),
        stability: read_json(dir, "stability.json"),
        evaluation,
        evaluation_skipped,
        human_scores: read_json(dir, "human_scores.json"),
    };
    write_run_summary(dir, &inputs)?;
    dir.finish()?;
    Ok(())
}

/// Runs `body`, then finalizes the directory whatever the outcome.
fn with_run_dir<T>(
    mut dir: RunDir,
    body: impl FnOnce(&mut RunDir) -> Result<T, CliError>,
) -> Result<(T, PathBuf), CliError> {
    let result = body(&mut dir);
    let finished = finalize(&mut dir);
    let path = dir.path().to_path_buf();
    match (result, finished) {
        (Ok(v), Ok(())) => {
            println!("run directory: {}", path.display());
            Ok((v, path))
        }
        (Err(e), fin) => {
            if let Err(f) = fin {
                log::error!("could not finalize {}: {f}", path.display());
            }
            eprintln!("partial results in {}", path.display());
            Err(e)
        }
        (Ok(_), Err(f)) => Err(f),
    }
}

fn print_prompt(label: &str, prompt: &str) {
    println!("----- {label} -----\n{prompt}\n----- end {label} -----");
}

// ------------------------------------------------------------------ phases

fn phase_code(
    cfg: &RunConfig,
    dir: &mut RunDir,
    transcripts: &[Transcript],
    template: &PromptTemplate,
    chat: &dyn ChatProvider,
) -> Result<CodeOutcome, CliError> {
    let opts = CodingOptions {
        temperature: cfg.temperatures.coding,
        max_output_tokens: cfg.chat.max_output_tokens,
        ..CodingOptions::new(&cfg.chat.coding_model, &dir.manifest.run_id)
    };
    let started = Instant::now();
    let coding = code_corpus(transcripts, template, chat, &opts, cfg.parallelism);
    let fingerprint = template.fingerprint();
    let codebook = coding.codebook(Some(fingerprint.clone()));

    let mut stats = PhaseStats {
        duration_ms: started.elapsed().as_millis() as u64,
        requests: transcripts.len() as u64,
        ..PhaseStats::default()
    };
    let mut failures = Vec::new();
    let mut first_error = None;
    for (tid, result) in coding.results {
        match result {
            Ok(tc) => {
                stats.retries += u64::from(tc.retries);
                stats.tokens += tc.token_usage;
                dir.write(&format!("raw/{tid}"), format!("raw/{tid}.txt"), tc.raw_response.as_bytes())?;
                for w in &tc.warnings {
                    log::warn!("{tid}: {w}");
                }
            }
            Err(e) => {
                stats.failures += 1;
                if let Some(raw) = e.raw_response() {
                    dir.write(&format!("raw/{tid}"), format!("raw/{tid}.txt"), raw.as_bytes())?;
                }
                eprintln!("warning: {tid}: {e}");
                failures.push((tid, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    let m = &mut dir.manifest;
    m.prompt_fingerprints.insert("coding".into(), fingerprint);
    m.model_ids.insert("coding".into(), cfg.chat.coding_model.clone());
    m.providers.insert("chat".into(), chat.id());
    m.add_temperature(cfg.temperatures.coding);
    m.phases.insert("coding".into(), stats);
    record_failures(dir, "coding", &failures)?;

    let stats = CorpusStats {
        transcripts: transcripts.len(),
        language: cfg.language.clone(),
        total_chars: transcripts.iter().map(|t| t.char_count).sum(),
    };
    write_json(dir, "corpus", "corpus.json", &stats)?;

    let codebook = match codebook {
        Ok(cb) => cb,
        Err(e) => return Err(first_error.map_or_else(|| e.into(), Into::into)),
    };
    dir.write("codebook", "codebook.csv", codebook_to_csv_string(&codebook).as_bytes())?;
    let sat = saturation(&codebook, Normalization::default())?;
    write_json(dir, "saturation", "saturation.json", &sat)?;
    write_json(dir, "quote_audit", "quote_audit.json", &quote_audit(&codebook, transcripts))?;

    for (tid, n) in &codebook.per_transcript_counts {
        println!("{tid}: {n} codes");
    }
    println!(
        "{} codes from {} transcripts",
        codebook.len(),
        codebook.transcript_ids().len()
    );
    println!(
        "saturation: {} total / {} unique = {:.3}",
        sat.total_codes, sat.unique_codes, sat.ratio_total_to_unique
    );
    if !failures.is_empty() {
        println!("{} transcript(s) failed; see failures.json", failures.len());
    }
    Ok(CodeOutcome {
        run_dir: dir.path().to_path_buf(),
        codebook,
        failures,
    })
}

fn theming_options(cfg: &RunConfig, run_id: &str) -> ThemingOptions {
    ThemingOptions {
        temperature: cfg.temperatures.theming,
        min_themes: cfg.min_themes,
        max_output_tokens: cfg.chat.max_output_tokens,
        ..ThemingOptions::new(&cfg.chat.theming_model, run_id)
    }
}

fn raw_theme_path(temperature: f64) -> String {
    format!("raw/{}", themes_file_name(temperature).replace(".json", ".txt"))
}

fn save_theme_run(dir: &mut RunDir, run: ThemeRun) -> Result<ThemeSet, CliError> {
    let t = run.set.temperature;
    let raw = raw_theme_path(t);
    dir.write(&raw, &raw, run.raw_response.as_bytes())?;
    let mut set = run.set;
    set.raw_response_path = Some(PathBuf::from(&raw));
    let file = themes_file_name(t);
    dir.write(file.trim_end_matches(".json"), &file, set.to_json_string().as_bytes())?;
    println!("T={t}: {} themes", set.themes.len());
    for (i, theme) in set.themes.iter().enumerate() {
        println!("  {}. {} ({} codes)", i + 1, theme.name, theme.code_indices.len());
    }
    for w in &set.warnings {
        eprintln!("warning: T={t}: {w}");
    }
    Ok(set)
}

fn note_theming(cfg: &RunConfig, dir: &mut RunDir, template: &PromptTemplate, chat: &dyn ChatProvider) {
    let m = &mut dir.manifest;
    m.prompt_fingerprints.insert("theming".into(), template.fingerprint());
    m.model_ids.insert("theming".into(), cfg.chat.theming_model.clone());
    m.providers.insert("chat".into(), chat.id());
}

fn phase_themes(
    cfg: &RunConfig,
    dir: &mut RunDir,
    cb: &Codebook,
    template: &PromptTemplate,
    chat: &dyn ChatProvider,
) -> Result<ThemeSet, CliError> {
    let opts = theming_options(cfg, &dir.manifest.run_id);
    let started = Instant::now();
    let result = generate_themes(cb, template, chat, &opts);
    note_theming(cfg, dir, template, chat);
    dir.manifest.add_temperature(opts.temperature);
    let mut stats = PhaseStats {
        duration_ms: started.elapsed().as_millis() as u64,
        requests: 1,
        ..PhaseStats::default()
    };
    let outcome = match result {
        Ok(run) => {
            stats.retries = u64::from(run.retries);
            stats.tokens = run.token_usage;
            record_failures(dir, "themes", &[])?;
            save_theme_run(dir, run)
        }
        Err(e) => {
            stats.failures = 1;
            if let Some(raw) = e.raw_response() {
                let rel = raw_theme_path(opts.temperature);
                dir.write(&rel, &rel, raw.as_bytes())?;
            }
            record_failures(dir, "themes", &[(format!("T={}", opts.temperature), e.to_string())])?;
            Err(e.into())
        }
    };
    dir.manifest.phases.insert("themes".into(), stats);
    outcome
}

fn phase_refine(
    cfg: &RunConfig,
    dir: &mut RunDir,
    cb: &Codebook,
    template: &PromptTemplate,
    chat: &dyn ChatProvider,
    prior: Vec<ThemeSet>,
) -> Result<RefineOutcome, CliError> {
    let temps = &cfg.temperatures.sweep;
    let opts = theming_options(cfg, &dir.manifest.run_id);
    let started = Instant::now();
    let sweep = sweep_temperatures(cb, template, chat, temps, &opts, cfg.parallelism)?;
    note_theming(cfg, dir, template, chat);
    let mut stats = PhaseStats {
        requests: temps.len() as u64,
        ..PhaseStats::default()
    };
    let mut sets = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (t, result) in sweep {
        dir.manifest.add_temperature(t);
        match result {
            Ok(run) => {
                stats.retries += u64::from(run.retries);
                stats.tokens += run.token_usage;
                sets.push(save_theme_run(dir, run)?);
            }
            Err(e) => {
                stats.failures += 1;
                if let Some(raw) = e.raw_response() {
                    let rel = raw_theme_path(t);
                    dir.write(&rel, &rel, raw.as_bytes())?;
                }
                eprintln!("warning: T={t}: {e}");
                failures.push((t, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    let listed: Vec<(String, String)> = failures.iter().map(|(t, e)| (format!("T={t}"), e.clone())).collect();
    record_failures(dir, "refine", &listed)?;
    if sets.is_empty() {
        stats.duration_ms = started.elapsed().as_millis() as u64;
        dir.manifest.phases.insert("refine".into(), stats);
        return Err(first_error.expect("non-empty sweep with no successes has an error").into());
    }

    let mut compared: Vec<ThemeSet> = prior
        .into_iter()
        .filter(|p| !temps.iter().any(|t| (t - p.temperature).abs() < 1e-9))
        .collect();
    compared.extend(sets.iter().cloned());
    let report = if compared.len() >= 2 {
        let embedder = embed_provider(cfg)?;
        dir.manifest.providers.insert("embed".into(), embedder.id());
        let report = stability(&compared, embedder.as_ref(), cfg.thresholds.stability)?;
        write_json(dir, "stability", "stability.json", &report)?;
        dir.write("stability_md", "stability.md", report.to_markdown().as_bytes())?;
        println!(
            "stability over {} sets at threshold {}: {} clusters, {} singletons",
            compared.len(),
            cfg.thresholds.stability,
            report.clusters.len(),
            report.singletons.len()
        );
        if !report.singletons.is_empty() {
            println!("possibly not relevant:");
            for s in &report.singletons {
                println!("  {} (T={})", s.name, report.runs[s.run].temperature);
            }
        }
        Some(report)
    } else {
        println!("stability skipped: only one theme set available");
        None
    };
    stats.duration_ms = started.elapsed().as_millis() as u64;
    dir.manifest.phases.insert("refine".into(), stats);
    Ok(RefineOutcome {
        run_dir: dir.path().to_path_buf(),
        sets,
        failures,
        stability: report,
    })
}

fn mode_slug(mode: TextMode) -> &'static str {
    match mode {
        TextMode::Names => "names",
        TextMode::NamesAndDescriptions => "names-descriptions",
    }
}

fn phase_eval(
    cfg: &RunConfig,
    dir: &mut RunDir,
    set: &ThemeSet,
    embedder: &dyn EmbeddingProvider,
) -> Result<EvalOutcome, CliError> {
    let reference = cfg
        .reference
        .as_ref()
        .ok_or_else(|| CliError::Usage("no reference categories; pass --reference or set reference".into()))?;
    let started = Instant::now();
    let categories = load_reference_categories(reference)?;
    let mode = cfg.evaluation.embed_text;
    let themes_name = themes_file_name(set.temperature).trim_end_matches(".json").to_string();
    let rows = LabeledTextSet::from_categories("reference", &categories, mode)?;
    let cols = LabeledTextSet::from_themes(&themes_name, set, mode)?;
    let matrix = similarity_matrix(&rows, &cols, embedder)?;
    let alignment = match &cfg.pairs {
        Some(p) => align_manual(p, &rows.labels(), &cols.labels())?,
        None => align_greedy(&matrix)?,
    };
    let aligned = matrix.aligned(&alignment);
    let report = diagonal_report(&aligned, &alignment, cfg.thresholds.diagonal)?;
    let [neg, zero, pos] = &cfg.evaluation.colors;
    let scale = ColorScale::new(neg, zero, pos)?;

    let stem = format!("eval/reference_vs_{themes_name}_{}", mode_slug(mode));
    let csv = PathBuf::from(format!("{stem}.csv"));
    let svg = PathBuf::from(format!("{stem}.svg"));
    dir.write(&format!("{stem}.csv"), &csv, matrix_csv_string(&aligned).as_bytes())?;
    dir.write(&format!("{stem}.svg"), &svg, render_heatmap_svg_string(&aligned, &scale)?.as_bytes())?;
    let record = EvalRecord {
        themes: themes_name.clone(),
        reference: reference.display().to_string(),
        text_mode: mode,
        embedder_id: &aligned.embedder_id,
        alignment: &alignment,
        report: &report,
    };
    write_json(dir, &format!("{stem}.json"), &format!("{stem}.json"), &record)?;

    let title = format!("Reference categories vs {themes_name}");
    let mut sections: Vec<EvalSection> = read_json(dir, "eval/sections.json").unwrap_or_default();
    sections.retain(|s| !(s.title == title && s.text_mode == mode.to_string()));
    sections.push(EvalSection {
        title,
        text_mode: mode.to_string(),
        csv: csv.clone(),
        svg: svg.clone(),
        report: Some(report.clone()),
    });
    write_json(dir, "eval/sections", "eval/sections.json", &sections)?;

    println!("similarity matrix {}x{} ({mode})", aligned.row_labels.len(), aligned.col_labels.len());
    println!("{}", report.summary);

    let human_scores = match &cfg.scores {
        Some(path) => {
            let scores = ingest_human_scores(path, &alignment, &cfg.evaluation.rater)?;
            write_json(dir, "human_scores", "human_scores.json", &scores)?;
            println!("human scores: {}", scores.summary().text);
            for (row, col, human, cosine) in scores.overlay(&aligned) {
                let cosine = cosine.map_or_else(|| "-".to_string(), |c| format!("{c:.2}"));
                println!("  {row} / {col}: {human:.1} (cosine {cosine})");
            }
            Some(scores)
        }
        None => None,
    };

    let m = &mut dir.manifest;
    m.providers.insert("embed".into(), embedder.id());
    m.model_ids.insert("embed".into(), aligned.embedder_id.clone());
    m.notes.retain(|n| !n.starts_with(SKIP_NOTE));
    m.phases.insert(
        format!("eval_{}", mode_slug(mode)),
        PhaseStats {
            duration_ms: started.elapsed().as_millis() as u64,
            requests: 1,
            ..PhaseStats::default()
        },
    );
    Ok(EvalOutcome {
        run_dir: dir.path().to_path_buf(),
        text_mode: mode,
        matrix: aligned,
        report,
        human_scores,
        csv: dir.join(csv),
        svg: dir.join(svg),
    })
}

// ---------------------------------------------------------------- commands

/// Returns `None` on a dry run.
pub fn cmd_code(cfg: &RunConfig, dry_run: bool) -> Result<Option<CodeOutcome>, CliError> {
    let transcripts = load_transcripts(cfg)?;
    let template = coding_template(cfg)?;
    if dry_run {
        dry_run_coding(cfg, &transcripts, &template)?;
        return Ok(None);
    }
    let chat = chat_provider(cfg)?;
    let (dir, _) = open_run_dir(cfg, None)?;
    let (outcome, _) = with_run_dir(dir, |dir| phase_code(cfg, dir, &transcripts, &template, chat.as_ref()))?;
    Ok(Some(outcome))
}

fn dry_run_coding(cfg: &RunConfig, transcripts: &[Transcript], template: &PromptTemplate) -> Result<(), CliError> {
    println!(
        "dry run: {} coding request(s) to {} at T={} with template {}",
        transcripts.len(),
        cfg.chat.coding_model,
        cfg.temperatures.coding,
        template.name
    );
    for t in transcripts {
        print_prompt(&format!("coding {}", t.id), &render_coding_prompt(t, template)?);
    }
    Ok(())
}

fn load_codebook(path: &Path) -> Result<Codebook, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("codebook not found: {}", path.display())));
    }
    Ok(codebook_from_csv(path)?)
}

/// Copies an outside codebook into a fresh run directory so the run is
/// self-contained.
fn adopt_codebook(dir: &mut RunDir, reused: bool, cb: &Codebook) -> Result<(), CliError> {
    if !reused || !dir.join("codebook.csv").exists() {
        dir.write("codebook", "codebook.csv", codebook_to_csv_string(cb).as_bytes())?;
    }
    Ok(())
}

pub fn cmd_themes(cfg: &RunConfig, codebook_path: &Path, dry_run: bool) -> Result<Option<ThemesOutcome>, CliError> {
    let cb = load_codebook(codebook_path)?;
    let template = theming_template(cfg)?;
    if dry_run {
        println!(
            "dry run: 1 theming request to {} at T={}, at least {} themes, template {}",
            cfg.chat.theming_model, cfg.temperatures.theming, cfg.min_themes, template.name
        );
        print_prompt("theming", &render_theming_prompt(&cb, &template, cfg.min_themes)?);
        return Ok(None);
    }
    let chat = chat_provider(cfg)?;
    let (dir, reused) = open_run_dir(cfg, Some(codebook_path))?;
    let (set, run_dir) = with_run_dir(dir, |dir| {
        adopt_codebook(dir, reused, &cb)?;
        phase_themes(cfg, dir, &cb, &template, chat.as_ref())
    })?;
    Ok(Some(ThemesOutcome { run_dir, set }))
}

pub fn cmd_refine(cfg: &RunConfig, codebook_path: &Path, dry_run: bool) -> Result<Option<RefineOutcome>, CliError> {
    let cb = load_codebook(codebook_path)?;
    let template = theming_template(cfg)?;
    if dry_run {
        println!(
            "dry run: {} theming request(s) to {} at T={:?}, then stability at threshold {} ({:?} embeddings)",
            cfg.temperatures.sweep.len(),
            cfg.chat.theming_model,
            cfg.temperatures.sweep,
            cfg.thresholds.stability,
            cfg.embed.provider
        );
        print_prompt("theming", &render_theming_prompt(&cb, &template, cfg.min_themes)?);
        return Ok(None);
    }
    let chat = chat_provider(cfg)?;
    let (dir, reused) = open_run_dir(cfg, Some(codebook_path))?;
    let (outcome, _) = with_run_dir(dir, |dir| {
        adopt_codebook(dir, reused, &cb)?;
        let prior_path = dir.join(themes_file_name(cfg.temperatures.theming));
        let prior = if prior_path.is_file() {
            vec![ThemeSet::load(&prior_path)?]
        } else {
            Vec::new()
        };
        phase_refine(cfg, dir, &cb, &template, chat.as_ref(), prior)
    })?;
    Ok(Some(outcome))
}

pub fn cmd_eval(cfg: &RunConfig, themes_path: &Path, dry_run: bool) -> Result<Option<EvalOutcome>, CliError> {
    if !themes_path.is_file() {
        return Err(CliError::Usage(format!("themes file not found: {}", themes_path.display())));
    }
    let set = ThemeSet::load(themes_path)?;
    if dry_run {
        let reference = cfg
            .reference
            .as_ref()
            .ok_or_else(|| CliError::Usage("no reference categories; pass --reference or set reference".into()))?;
        let categories = load_reference_categories(reference)?;
        let mode = cfg.evaluation.embed_text;
        let rows = LabeledTextSet::from_categories("reference", &categories, mode)?;
        let cols = LabeledTextSet::from_themes("themes", &set, mode)?;
        println!(
            "dry run: embed {} reference and {} theme texts ({mode}) with {:?} embeddings",
            rows.items.len(),
            cols.items.len(),
            cfg.embed.provider
        );
        for item in rows.items.iter().chain(&cols.items) {
            println!("  {}", item.text);
        }
        return Ok(None);
    }
    let embedder = embed_provider(cfg)?;
    let (dir, _) = open_run_dir(cfg, Some(themes_path))?;
    let (outcome, _) = with_run_dir(dir, |dir| phase_eval(cfg, dir, &set, embedder.as_ref()))?;
    Ok(Some(outcome))
}

pub fn cmd_compare_prompts(
    cfg: &RunConfig,
    transcript_id: &str,
    template_a: &str,
    template_b: &str,
    pairs: Option<&Path>,
    dry_run: bool,
) -> Result<Option<CompareOutcome>, CliError> {
    let transcripts = load_transcripts(cfg)?;
    let transcript = transcripts.iter().find(|t| t.id == transcript_id).ok_or_else(|| {
        let ids: Vec<&str> = transcripts.iter().map(|t| t.id.as_str()).collect();
        CliError::Usage(format!("no transcript {transcript_id:?}; available: {}", ids.join(", ")))
    })?;
    let ta = template(cfg, Phase::Coding, Some(template_a))?;
    let tb = template(cfg, Phase::Coding, Some(template_b))?;
    if dry_run {
        println!(
            "dry run: 2 coding requests for {transcript_id} to {} at T={}",
            cfg.chat.coding_model, cfg.temperatures.coding
        );
        print_prompt(&format!("A ({})", ta.name), &render_coding_prompt(transcript, &ta)?);
        print_prompt(&format!("B ({})", tb.name), &render_coding_prompt(transcript, &tb)?);
        return Ok(None);
    }
    let chat = chat_provider(cfg)?;
    let embedder = embed_provider(cfg)?;
    let (dir, _) = open_run_dir(cfg, None)?;
    let (outcome, _) = with_run_dir(dir, |dir| {
        let opts = CodingOptions {
            temperature: cfg.temperatures.coding,
            max_output_tokens: cfg.chat.max_output_tokens,
            ..CodingOptions::new(&cfg.chat.coding_model, &dir.manifest.run_id)
        };
        let started = Instant::now();
        let mut books = Vec::new();
        for (side, t) in [("a", &ta), ("b", &tb)] {
            let coded = code_transcript(transcript, t, chat.as_ref(), &opts);
            let raw_rel = format!("raw/compare_{transcript_id}_{side}.txt");
            if let Some(raw) = coded.as_ref().map(|c| c.raw_response.as_str()).ok().or_else(|| {
                coded.as_ref().err().and_then(|e| e.raw_response())
            }) {
                dir.write(&raw_rel, &raw_rel, raw.as_bytes())?;
            }
            dir.manifest.prompt_fingerprints.insert(format!("compare_{side}"), t.fingerprint());
            let coded = coded?;
            let cb = aggregate_codebook([(transcript_id.to_string(), coded.codes)].into_iter().collect())?;
            let rel = format!("compare/{transcript_id}_{side}_codebook.csv");
            dir.write(&rel, &rel, codebook_to_csv_string(&cb).as_bytes())?;
            println!("template {side} ({}): {} codes", t.name, cb.len());
            books.push(cb);
        }
        let b = books.pop().expect("two codebooks");
        let a = books.pop().expect("two codebooks");
        let comparison = compare_codebooks(&a, &b, embedder.as_ref(), pairs, cfg.thresholds.diagonal)?;
        let [neg, zero, pos] = &cfg.evaluation.colors;
        let scale = ColorScale::new(neg, zero, pos)?;
        let stem = format!("compare/{transcript_id}_matrix");
        dir.write(&format!("{stem}.csv"), format!("{stem}.csv"), matrix_csv_string(&comparison.matrix).as_bytes())?;
        dir.write(
            &format!("{stem}.svg"),
            format!("{stem}.svg"),
            render_heatmap_svg_string(&comparison.matrix, &scale)?.as_bytes(),
        )?;
        let rel = format!("compare/{transcript_id}_comparison.json");
        write_json(dir, &rel, &rel, &comparison)?;

        println!("{}", comparison.report.summary);
        if !comparison.unmatched_a.is_empty() {
            println!("only in A: {}", comparison.unmatched_a.join("; "));
        }
        if !comparison.unmatched_b.is_empty() {
            println!("only in B: {}", comparison.unmatched_b.join("; "));
        }
        let m = &mut dir.manifest;
        m.model_ids.insert("coding".into(), cfg.chat.coding_model.clone());
        m.providers.insert("chat".into(), chat.id());
        m.providers.insert("embed".into(), embedder.id());
        m.add_temperature(cfg.temperatures.coding);
        m.phases.insert(
            "compare".into(),
            PhaseStats {
                duration_ms: started.elapsed().as_millis() as u64,
                requests: 2,
                ..PhaseStats::default()
            },
        );
        Ok(CompareOutcome {
            run_dir: dir.path().to_path_buf(),
            a,
            b,
            comparison,
        })
    })?;
    Ok(Some(outcome))
}

pub fn cmd_run(cfg: &RunConfig, dry_run: bool) -> Result<Option<RunOutcome>, CliError> {
    let transcripts = load_transcripts(cfg)?;
    let coding = coding_template(cfg)?;
    let theming = theming_template(cfg)?;
    if dry_run {
        dry_run_coding(cfg, &transcripts, &coding)?;
        println!(
            "then: 1 theming request at T={} and {} sweep request(s) at T={:?} to {} with template {} (prompt built from the codebook)",
            cfg.temperatures.theming,
            cfg.temperatures.sweep.len(),
            cfg.temperatures.sweep,
            cfg.chat.theming_model,
            theming.name
        );
        match &cfg.reference {
            Some(r) => println!("then: evaluation against {}", r.display()),
            None => println!("then: evaluation skipped (no reference file configured)"),
        }
        return Ok(None);
    }
    let chat = chat_provider(cfg)?;
    let (dir, _) = open_run_dir(cfg, None)?;
    let (outcome, _) = with_run_dir(dir, |dir| {
        let code = phase_code(cfg, dir, &transcripts, &coding, chat.as_ref())?;
        let set = phase_themes(cfg, dir, &code.codebook, &theming, chat.as_ref())?;
        let themes = ThemesOutcome {
            run_dir: dir.path().to_path_buf(),
            set,
        };
        let refine = phase_refine(cfg, dir, &code.codebook, &theming, chat.as_ref(), vec![themes.set.clone()])?;
        let eval = if cfg.reference.is_some() {
            let embedder = embed_provider(cfg)?;
            Some(phase_eval(cfg, dir, &themes.set, embedder.as_ref())?)
        } else {
            let note = format!("{SKIP_NOTE}no reference file configured");
            println!("{note}");
            if !dir.manifest.notes.contains(&note) {
                dir.manifest.notes.push(note);
            }
            None
        };
        Ok(RunOutcome {
            run_dir: dir.path().to_path_buf(),
            code,
            themes,
            refine,
            eval,
        })
    })?;
    Ok(Some(outcome))
}
