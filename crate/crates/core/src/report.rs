//! Pitch and pitch-class histograms of whole corpora, as CSV tables and
//! minimal SVG bar charts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{NotePhrase, LOWEST_PITCH, PITCH_COUNT};
use crate::features::l1_normalize;

pub const OCTAVE_BANDS: [&str; 4] = ["I", "II", "III", "IV"];
pub const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("at least one corpus is required")]
    NoCorpus,
    #[error("corpus {0:?} has no notes")]
    EmptyCorpus(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Note counts per pitch row (48 bins, MIDI 48..=95).
pub fn pitch_histogram<'a>(phrases: impl IntoIterator<Item = &'a NotePhrase>) -> Vec<f64> {
    let mut h = vec![0.0; PITCH_COUNT];
    for p in phrases {
        for n in p.notes() {
            h[(n.pitch - LOWEST_PITCH) as usize] += 1.0;
        }
    }
    h
}

/// Note counts per pitch class (12 bins, C first).
pub fn pitch_class_totals<'a>(phrases: impl IntoIterator<Item = &'a NotePhrase>) -> Vec<f64> {
    let mut h = vec![0.0; 12];
    for p in phrases {
        for n in p.notes() {
            h[(n.pitch % 12) as usize] += 1.0;
        }
    }
    h
}

/// Octave band of a pitch row: 0 for C3..B3 up to 3 for C6..B6.
pub fn octave_band(row: usize) -> usize {
    row / 12
}

pub fn pitch_name(midi: u8) -> String {
    format!("{}{}", NOTE_NAMES[(midi % 12) as usize], midi as i32 / 12 - 1)
}

/// Several corpora binned the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub title: String,
    pub bins: Vec<String>,
    pub labels: Vec<String>,
    /// One series per label, each `bins.len()` long.
    pub series: Vec<Vec<f64>>,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReport {
    pub pitch: Histogram,
    pub pitch_class: Histogram,
}

/// Both histograms for the named corpora; `normalize` scales each series to sum 1.
pub fn histograms(corpora: &[(String, Vec<&NotePhrase>)], normalize: bool) -> Result<HistogramReport, ReportError> {
    if corpora.is_empty() {
        return Err(ReportError::NoCorpus);
    }
    let labels: Vec<String> = corpora.iter().map(|c| c.0.clone()).collect();
    let mut pitch = Vec::new();
    let mut classes = Vec::new();
    for (name, phrases) in corpora {
        let h = pitch_histogram(phrases.iter().copied());
        if h.iter().sum::<f64>() == 0.0 {
            return Err(ReportError::EmptyCorpus(name.clone()));
        }
        let c = pitch_class_totals(phrases.iter().copied());
        if normalize {
            pitch.push(l1_normalize(&h));
            classes.push(l1_normalize(&c));
        } else {
            pitch.push(h);
            classes.push(c);
        }
    }
    let pitch_bins = (0..PITCH_COUNT).map(|r| pitch_name(LOWEST_PITCH + r as u8)).collect();
    Ok(HistogramReport {
        pitch: Histogram {
            title: "Pitch histogram".into(),
            bins: pitch_bins,
            labels: labels.clone(),
            series: pitch,
            normalized: normalize,
        },
        pitch_class: Histogram {
            title: "Pitch class histogram".into(),
            bins: NOTE_NAMES.iter().map(|s| s.to_string()).collect(),
            labels,
            series: classes,
            normalized: normalize,
        },
    })
}

fn header(fixed: &str, labels: &[String]) -> String {
    let mut h = fixed.to_string();
    for l in labels {
        h.push(',');
        h.push_str(&csv_field(l));
    }
    h
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `bin,pitch,note,octave,<corpus...>`: one row per pitch row.
pub fn pitch_csv(h: &Histogram) -> String {
    let mut out = header("bin,pitch,note,octave", &h.labels);
    out.push('\n');
    for (i, name) in h.bins.iter().enumerate() {
        let _ = write!(out, "{i},{},{name},{}", LOWEST_PITCH as usize + i, OCTAVE_BANDS[octave_band(i)]);
        for s in &h.series {
            let _ = write!(out, ",{}", s[i]);
        }
        out.push('\n');
    }
    out
}

/// `bin,pitch_class,<corpus...>`: one row per pitch class.
pub fn pitch_class_csv(h: &Histogram) -> String {
    let mut out = header("bin,pitch_class", &h.labels);
    out.push('\n');
    for (i, name) in h.bins.iter().enumerate() {
        let _ = write!(out, "{i},{name}");
        for s in &h.series {
            let _ = write!(out, ",{}", s[i]);
        }
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart. With `bands`, bins are split into octave bands I–IV.
pub fn histogram_svg(h: &Histogram, bands: bool) -> String {
    let (width, height) = (960.0_f64, 360.0_f64);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 70.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let max = h.series.iter().flatten().copied().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let slot = plot_w / h.bins.len() as f64;
    let bar = slot * 0.8 / h.series.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(&h.title));
    let base = top + plot_h;
    let _ = writeln!(s, r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, left + plot_w);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{base}" stroke="black"/>"#);
    let y_label = if h.normalized { "frequency" } else { "count" };
    let _ = writeln!(s, r#"<text x="{}" y="{top}" text-anchor="end">{}</text>"#, left - 4.0, fmt_tick(max));
    let _ = writeln!(s, r#"<text x="{}" y="{base}" text-anchor="end">0</text>"#, left - 4.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{y_label}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (k, series) in h.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for (i, v) in series.iter().enumerate() {
            let bh = v / max * plot_h;
            let x = left + i as f64 * slot + slot * 0.1 + k as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{bh:.2}" fill="{color}"/>"#,
                base - bh
            );
        }
    }
    for (i, name) in h.bins.iter().enumerate() {
        if bands && i % 12 != 0 {
            continue;
        }
        let x = left + (i as f64 + 0.5) * slot;
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, base + 14.0, escape(name));
    }
    if bands {
        for (b, band) in OCTAVE_BANDS.iter().enumerate() {
            let x0 = left + (b * 12) as f64 * slot;
            let mid = x0 + 6.0 * slot;
            if b > 0 {
                let _ = writeln!(s, r##"<line x1="{x0:.2}" y1="{top}" x2="{x0:.2}" y2="{}" stroke="#999" stroke-dasharray="4 3"/>"##, base + 30.0);
            }
            let _ = writeln!(s, r#"<text x="{mid:.2}" y="{}" text-anchor="middle" font-size="13">{band}</text>"#, base + 32.0);
        }
    }
    for (k, label) in h.labels.iter().enumerate() {
        let x = left + k as f64 * 160.0;
        let y = height - 14.0;
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Writes `pitch_histogram.{csv,svg}` and `pitch_class_histogram.{csv,svg}` into `dir`.
pub fn write_histograms(dir: &Path, report: &HistogramReport) -> Result<Vec<PathBuf>, ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let files = [
        ("pitch_histogram.csv", pitch_csv(&report.pitch)),
        ("pitch_histogram.svg", histogram_svg(&report.pitch, true)),
        ("pitch_class_histogram.csv", pitch_class_csv(&report.pitch_class)),
        ("pitch_class_histogram.svg", histogram_svg(&report.pitch_class, false)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
