use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{write_atomic, ReportError};
use crate::evaluation::SimilarityMatrix;

const CELL: usize = 56;
const LABEL_WIDTH: usize = 260;
const HEADER_HEIGHT: usize = 200;
const MAX_LABEL_CHARS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rgb(u8, u8, u8);

impl FromStr for Rgb {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ReportError::Color(s.to_string());
        let hex = s.strip_prefix('#').ok_or_else(bad)?;
        if hex.len() != 6 || !hex.is_ascii() {
            return Err(bad());
        }
        let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
        Ok(Rgb(channel(0)?, channel(2)?, channel(4)?))
    }
}

impl Rgb {
    fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }

    fn lerp(self, other: Rgb, t: f64) -> Rgb {
        let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round().clamp(0.0, 255.0) as u8;
        Rgb(mix(self.0, other.0), mix(self.1, other.1), mix(self.2, other.2))
    }

    /// Relative luminance in [0, 1], used to choose a readable text color.
    fn luminance(self) -> f64 {
        (0.2126 * self.0 as f64 + 0.7152 * self.1 as f64 + 0.0722 * self.2 as f64) / 255.0
    }
}

/// Three anchors for -1, 0 and +1, as `#rrggbb`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorScale {
    pub negative: String,
    pub zero: String,
    pub positive: String,
}

impl Default for ColorScale {
    fn default() -> Self {
        ColorScale {
            negative: "#b2182b".into(),
            zero: "#ffffff".into(),
            positive: "#2166ac".into(),
        }
    }
}

impl ColorScale {
    pub fn new(negative: &str, zero: &str, positive: &str) -> Result<Self, ReportError> {
        let scale = ColorScale {
            negative: negative.to_string(),
            zero: zero.to_string(),
            positive: positive.to_string(),
        };
        scale.anchors()?;
        Ok(scale)
    }

    fn anchors(&self) -> Result<(Rgb, Rgb, Rgb), ReportError> {
        Ok((self.negative.parse()?, self.zero.parse()?, self.positive.parse()?))
    }

    /// Linear interpolation between the anchor colors; `value` is clamped to
    /// [-1, 1].
    pub fn color_for(&self, value: f64) -> Result<String, ReportError> {
        Ok(self.rgb_for(value)?.hex())
    }

    fn rgb_for(&self, value: f64) -> Result<Rgb, ReportError> {
        let (neg, zero, pos) = self.anchors()?;
        let v = value.clamp(-1.0, 1.0);
        Ok(if v >= 0.0 { zero.lerp(pos, v) } else { zero.lerp(neg, -v) })
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn shorten(label: &str) -> String {
    if label.chars().count() <= MAX_LABEL_CHARS {
        label.to_string()
    } else {
        let head: String = label.chars().take(MAX_LABEL_CHARS - 1).collect();
        format!("{head}…")
    }
}

fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Renders the matrix as a standalone SVG document. Output depends only on
/// the matrix and the scale, so identical input gives identical bytes.
pub fn render_heatmap_svg_string(m: &SimilarityMatrix, scale: &ColorScale) -> Result<String, ReportError> {
    if m.is_empty() {
        return Err(ReportError::EmptyMatrix);
    }
    scale.anchors()?;
    let (rows, cols) = m.shape();
    let width = LABEL_WIDTH + cols * CELL + 20;
    let height = HEADER_HEIGHT + rows * CELL + 20;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(&format!("cosine similarity ({})", m.embedder_id)));
    let _ = writeln!(svg, r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##);
    for (j, label) in m.col_labels.iter().enumerate() {
        let x = LABEL_WIDTH + j * CELL + CELL / 2;
        let y = HEADER_HEIGHT - 8;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" transform="rotate(-45 {x} {y})" text-anchor="start">{}</text>"#,
            escape(&shorten(label))
        );
    }
    for (i, label) in m.row_labels.iter().enumerate() {
        let y = HEADER_HEIGHT + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            LABEL_WIDTH - 8,
            escape(&shorten(label))
        );
        for (j, &v) in m.values[i].iter().enumerate() {
            let x = LABEL_WIDTH + j * CELL;
            let y = HEADER_HEIGHT + i * CELL;
            let fill = scale.rgb_for(v)?;
            let ink = if fill.luminance() < 0.5 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#cccccc"/>"##,
                fill.hex()
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4,
                fmt2(v)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_heatmap_svg(m: &SimilarityMatrix, path: &Path, scale: &ColorScale) -> Result<(), ReportError> {
    write_atomic(path, render_heatmap_svg_string(m, scale)?.as_bytes())
}
