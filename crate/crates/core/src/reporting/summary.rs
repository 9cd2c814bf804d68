use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{ReportError, RunDir, RunManifest};
use crate::coding::{QuoteAudit, SaturationReport};
use crate::evaluation::{DiagonalReport, HumanScoreSet};
use crate::theming::{md_cell, StabilityReport, ThemeSet};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub transcripts: usize,
    pub language: String,
    pub total_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub title: String,
    pub text_mode: String,
    /// Paths relative to the run directory.
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub report: Option<DiagonalReport>,
}

/// Everything the summary may mention. Absent parts are left out or noted.
#[derive(Debug, Clone, Default)]
pub struct SummaryInputs {
    pub corpus: Option<CorpusStats>,
    pub codebook: Option<(usize, usize)>,
    pub saturation: Option<SaturationReport>,
    pub quote_audit: Option<QuoteAudit>,
    /// (what failed, why)
    pub failures: Vec<(String, String)>,
    pub theme_sets: Vec<ThemeSet>,
    pub stability: Option<StabilityReport>,
    pub evaluation: Vec<EvalSection>,
    /// Set when evaluation was not run, with the reason.
    pub evaluation_skipped: Option<String>,
    pub human_scores: Option<HumanScoreSet>,
}

pub type RunSummary = String;

pub fn render_run_summary(manifest: &RunManifest, inputs: &SummaryInputs) -> RunSummary {
    let mut md = String::new();
    let _ = writeln!(md, "# Run {}\n", manifest.run_id);
    for (phase, model) in &manifest.model_ids {
        let _ = writeln!(md, "- {phase} model: {model}");
    }
    if !manifest.model_ids.is_empty() {
        md.push('\n');
    }

    if let Some(c) = &inputs.corpus {
        let _ = writeln!(md, "## Corpus\n");
        let _ = writeln!(
            md,
            "{} transcripts ({}), {} characters in total.\n",
            c.transcripts, c.language, c.total_chars
        );
    }

    if let Some((codes, transcripts)) = inputs.codebook {
        let _ = writeln!(md, "## Codebook\n");
        let _ = writeln!(md, "{codes} codes from {transcripts} transcripts.\n");
        if let Some(s) = &inputs.saturation {
            let _ = writeln!(
                md,
                "Saturation: {} total / {} unique = {:.3} (unique/total {:.3}; {}).\n",
                s.total_codes, s.unique_codes, s.ratio_total_to_unique, s.ratio_unique_to_total, s.normalization
            );
        }
        if let Some(q) = &inputs.quote_audit {
            let _ = writeln!(
                md,
                "Quotes found verbatim in their transcript: {}/{} ({:.1}%).\n",
                q.verbatim,
                q.checked,
                q.fraction * 100.0
            );
        }
    }

    if !inputs.failures.is_empty() {
        let _ = writeln!(md, "## Failures\n");
        for (what, why) in &inputs.failures {
            let _ = writeln!(md, "- {what}: {}", why.replace('\n', " "));
        }
        md.push('\n');
    }

    for set in &inputs.theme_sets {
        let _ = writeln!(md, "## Themes at T={}\n", set.temperature);
        let _ = writeln!(
            md,
            "{} themes (minimum requested {}), model {}.\n",
            set.themes.len(),
            set.min_themes,
            set.model
        );
        let _ = writeln!(md, "| # | Theme | Codes |\n|---|---|---|");
        for (i, t) in set.themes.iter().enumerate() {
            let codes: Vec<String> = t.code_indices.iter().map(usize::to_string).collect();
            let _ = writeln!(md, "| {} | {} | {} |", i + 1, md_cell(&t.name), codes.join(", "));
        }
        md.push('\n');
        for w in &set.warnings {
            let _ = writeln!(md, "- warning: {w}");
        }
        if !set.warnings.is_empty() {
            md.push('\n');
        }
    }

    if let Some(s) = &inputs.stability {
        let _ = writeln!(
            md,
            "## Theme stability\n\nThreshold {} with {}; {} clusters, {} singletons.\n",
            s.match_threshold,
            s.embedder_id,
            s.clusters.len(),
            s.singletons.len()
        );
        md.push_str(&s.to_markdown());
        md.push('\n');
    }

    let _ = writeln!(md, "## Evaluation\n");
    match &inputs.evaluation_skipped {
        Some(reason) => {
            let _ = writeln!(md, "Skipped: {reason}\n");
        }
        None if inputs.evaluation.is_empty() => md.push_str("Not run.\n\n"),
        None => {}
    }
    for e in &inputs.evaluation {
        let _ = writeln!(
            md,
            "### {} ({})\n\n[matrix]({}) · [heatmap]({})\n",
            e.title,
            e.text_mode,
            e.csv.display(),
            e.svg.display()
        );
        if let Some(r) = &e.report {
            md.push_str(&r.to_markdown());
            md.push('\n');
        }
    }

    if let Some(h) = &inputs.human_scores {
        let _ = writeln!(md, "## Human scores ({})\n\n{}\n", h.rater_id, h.summary().text);
        let _ = writeln!(md, "| Row | Column | Score | Normalized |\n|---|---|---|---|");
        for s in &h.scores {
            let _ = writeln!(md, "| {} | {} | {} | {:.1} |", md_cell(&s.row), md_cell(&s.col), s.score, s.normalized);
        }
        md.push('\n');
    }
    md
}

/// Writes `summary.md` into the run directory and indexes it.
pub fn write_run_summary(dir: &mut RunDir, inputs: &SummaryInputs) -> Result<PathBuf, ReportError> {
    let text = render_run_summary(&dir.manifest, inputs);
    dir.write("summary", "summary.md", text.as_bytes())
}
