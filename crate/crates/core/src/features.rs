//! Per-phrase pitch and rhythm features: pitch count, pitch-class histogram
//! and transition matrix, pitch range, note count, note-length histogram and
//! transition matrix, plus per-bar variants of the two counts.
//!
//! Histograms and matrices hold raw counts. Matrices are row-major, indexed
//! `[from][to]`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{NotePhrase, BARS, PHRASE_STEPS, STEPS_PER_BAR};

/// Unit lengths per bar used for note-length quantization.
pub const UNITS_PER_BAR: u32 = 96;
/// Units per 16th-note step.
pub const UNITS_PER_STEP: u32 = UNITS_PER_BAR / STEPS_PER_BAR as u32;

pub const LENGTH_CLASS_NAMES: [&str; 12] = [
    "full",
    "half",
    "quarter",
    "8th",
    "16th",
    "dot-half",
    "dot-quarter",
    "dot-8th",
    "dot-16th",
    "half-triplet",
    "quarter-triplet",
    "8th-triplet",
];
pub const LENGTH_CLASS_UNITS: [u32; 12] = [96, 48, 24, 12, 6, 72, 36, 18, 9, 32, 16, 8];

pub const QUARTER: usize = 2;
pub const EIGHTH: usize = 3;
pub const FULL: usize = 0;

/// Nearest length class for a duration in steps; ties go to the shorter class.
/// Anything longer than a whole bar lands on `full`.
pub fn quantize_length(duration_steps: u32) -> usize {
    let units = duration_steps as i64 * UNITS_PER_STEP as i64;
    let mut best = 0;
    for (k, &u) in LENGTH_CLASS_UNITS.iter().enumerate() {
        let d = (units - u as i64).abs();
        let best_d = (units - LENGTH_CLASS_UNITS[best] as i64).abs();
        if d < best_d || (d == best_d && u < LENGTH_CLASS_UNITS[best]) {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Adds 12 rest classes to the note-length features.
    pub rests: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub pc: u32,
    pub pc_per_bar: f64,
    pub pr: u32,
    pub pch: [f64; 12],
    /// 12 x 12
    pub pctm: Vec<f64>,
    pub nc: u32,
    pub nc_per_bar: f64,
    /// 12, or 24 with rests
    pub nlh: Vec<f64>,
    /// 12 x 12, or 24 x 24 with rests
    pub nltm: Vec<f64>,
}

impl FeatureVector {
    pub fn length_classes(&self) -> usize {
        self.nlh.len()
    }

    /// The feature as a flat vector; scalars have length 1.
    pub fn values(&self, feature: Feature) -> Vec<f64> {
        match feature {
            Feature::Nc => vec![self.nc as f64],
            Feature::NcPerBar => vec![self.nc_per_bar],
            Feature::Nlh => self.nlh.clone(),
            Feature::Nltm => self.nltm.clone(),
            Feature::Pc => vec![self.pc as f64],
            Feature::PcPerBar => vec![self.pc_per_bar],
            Feature::Pr => vec![self.pr as f64],
            Feature::Pch => self.pch.to_vec(),
            Feature::Pctm => self.pctm.clone(),
        }
    }
}

/// The nine evaluated features, in report-row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Nc,
    NcPerBar,
    Nlh,
    Nltm,
    Pc,
    PcPerBar,
    Pr,
    Pch,
    Pctm,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::Nc,
        Feature::NcPerBar,
        Feature::Nlh,
        Feature::Nltm,
        Feature::Pc,
        Feature::PcPerBar,
        Feature::Pr,
        Feature::Pch,
        Feature::Pctm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Feature::Nc => "NC",
            Feature::NcPerBar => "NC/bar",
            Feature::Nlh => "NLH",
            Feature::Nltm => "NLTM",
            Feature::Pc => "PC",
            Feature::PcPerBar => "PC/bar",
            Feature::Pr => "PR",
            Feature::Pch => "PCH",
            Feature::Pctm => "PCTM",
        }
    }
}

pub fn pitch_count(phrase: &NotePhrase) -> u32 {
    phrase.notes().iter().map(|n| n.pitch).collect::<BTreeSet<_>>().len() as u32
}

/// Mean over the four bars of the distinct pitches sounding in each bar.
pub fn pitch_count_per_bar(phrase: &NotePhrase) -> f64 {
    let bar = STEPS_PER_BAR as u8;
    let total: usize = (0..BARS as u8)
        .map(|b| {
            let (lo, hi) = (b * bar, (b + 1) * bar);
            phrase
                .notes()
                .iter()
                .filter(|n| n.start < hi && n.end() > lo)
                .map(|n| n.pitch)
                .collect::<BTreeSet<_>>()
                .len()
        })
        .sum();
    total as f64 / BARS as f64
}

pub fn pitch_range(phrase: &NotePhrase) -> u32 {
    let notes = phrase.notes();
    match (notes.iter().map(|n| n.pitch).max(), notes.iter().map(|n| n.pitch).min()) {
        (Some(hi), Some(lo)) => (hi - lo) as u32,
        _ => 0,
    }
}

pub fn pitch_class_histogram(phrase: &NotePhrase) -> [f64; 12] {
    let mut h = [0.0; 12];
    for n in phrase.notes() {
        h[(n.pitch % 12) as usize] += 1.0;
    }
    h
}

pub fn pitch_class_transition_matrix(phrase: &NotePhrase) -> Vec<f64> {
    let mut m = vec![0.0; 144];
    for w in phrase.notes().windows(2) {
        m[(w[0].pitch % 12) as usize * 12 + (w[1].pitch % 12) as usize] += 1.0;
    }
    m
}

pub fn note_count(phrase: &NotePhrase) -> u32 {
    phrase.notes().len() as u32
}

/// Mean over the four bars of the onsets falling in each bar.
pub fn note_count_per_bar(phrase: &NotePhrase) -> f64 {
    let mut per_bar = [0u32; BARS];
    for n in phrase.notes() {
        per_bar[n.start as usize / STEPS_PER_BAR] += 1;
    }
    per_bar.iter().sum::<u32>() as f64 / BARS as f64
}

/// Length-class indices of the phrase's events in time order. Rests are
/// maximal silent runs and, when enabled, use indices 12..24.
fn length_events(phrase: &NotePhrase, rests: bool) -> Vec<usize> {
    let mut events = Vec::with_capacity(phrase.notes().len() * 2 + 1);
    let mut t = 0u32;
    for n in phrase.notes() {
        if rests && (n.start as u32) > t {
            events.push(12 + quantize_length(n.start as u32 - t));
        }
        events.push(quantize_length(n.duration as u32));
        t = n.end() as u32;
    }
    if rests && t < PHRASE_STEPS as u32 {
        events.push(12 + quantize_length(PHRASE_STEPS as u32 - t));
    }
    events
}

pub fn note_length_histogram(phrase: &NotePhrase, rests: bool) -> Vec<f64> {
    let mut h = vec![0.0; if rests { 24 } else { 12 }];
    for k in length_events(phrase, rests) {
        h[k] += 1.0;
    }
    h
}

pub fn note_length_transition_matrix(phrase: &NotePhrase, rests: bool) -> Vec<f64> {
    let dim = if rests { 24 } else { 12 };
    let mut m = vec![0.0; dim * dim];
    for w in length_events(phrase, rests).windows(2) {
        m[w[0] * dim + w[1]] += 1.0;
    }
    m
}

pub fn extract(phrase: &NotePhrase, opts: FeatureOptions) -> FeatureVector {
    FeatureVector {
        pc: pitch_count(phrase),
        pc_per_bar: pitch_count_per_bar(phrase),
        pr: pitch_range(phrase),
        pch: pitch_class_histogram(phrase),
        pctm: pitch_class_transition_matrix(phrase),
        nc: note_count(phrase),
        nc_per_bar: note_count_per_bar(phrase),
        nlh: note_length_histogram(phrase, opts.rests),
        nltm: note_length_transition_matrix(phrase, opts.rests),
    }
}

pub fn extract_all<'a>(
    phrases: impl IntoIterator<Item = &'a NotePhrase>,
    opts: FeatureOptions,
) -> Vec<FeatureVector> {
    phrases.into_iter().map(|p| extract(p, opts)).collect()
}

/// L1-normalized copy of a histogram; all-zero input stays zero.
pub fn l1_normalize(h: &[f64]) -> Vec<f64> {
    let s: f64 = h.iter().sum();
    if s == 0.0 {
        h.to_vec()
    } else {
        h.iter().map(|x| x / s).collect()
    }
}

/// Column names of the feature dump, in order.
pub fn dump_columns(opts: FeatureOptions) -> Vec<String> {
    let len_names: Vec<String> = LENGTH_CLASS_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(
            opts.rests
                .then(|| LENGTH_CLASS_NAMES.iter().map(|s| format!("rest-{s}")))
                .into_iter()
                .flatten(),
        )
        .collect();
    let mut cols = vec![
        "id".to_string(),
        "pc".into(),
        "pc_per_bar".into(),
        "pr".into(),
    ];
    cols.extend((0..12).map(|k| format!("pch_{k}")));
    for a in 0..12 {
        cols.extend((0..12).map(|b| format!("pctm_{a}_{b}")));
    }
    cols.push("nc".into());
    cols.push("nc_per_bar".into());
    cols.extend(len_names.iter().map(|s| format!("nlh_{s}")));
    for a in &len_names {
        cols.extend(len_names.iter().map(|b| format!("nltm_{a}_{b}")));
    }
    cols
}

/// CSV dump: header row then one row per phrase, matrices flattened row-major.
pub fn dump_csv(phrases: &[&NotePhrase], opts: FeatureOptions) -> String {
    let mut out = dump_columns(opts).join(",");
    out.push('\n');
    for p in phrases {
        let f = extract(p, opts);
        let _ = write!(out, "{},{},{},{}", p.id(), f.pc, f.pc_per_bar, f.pr);
        for x in f.pch.iter().chain(&f.pctm) {
            let _ = write!(out, ",{x}");
        }
        let _ = write!(out, ",{},{}", f.nc, f.nc_per_bar);
        for x in f.nlh.iter().chain(&f.nltm) {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

/// Column manifest: `column,group,description` lines.
pub fn dump_manifest(opts: FeatureOptions) -> String {
    let mut out = String::from("column,group\n");
    for c in dump_columns(opts) {
        let group = c.split('_').next().unwrap_or(&c).to_string();
        let group = match group.as_str() {
            "pc" if c == "pc_per_bar" => "PC/bar",
            "nc" if c == "nc_per_bar" => "NC/bar",
            "id" => "id",
            "pc" => "PC",
            "pr" => "PR",
            "pch" => "PCH",
            "pctm" => "PCTM",
            "nc" => "NC",
            "nlh" => "NLH",
            "nltm" => "NLTM",
            _ => "?",
        };
        let _ = writeln!(out, "{c},{group}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Genre, NoteEvent};

    fn phrase(notes: &[(u8, u8, u8)]) -> NotePhrase {
        NotePhrase::new(
            "f",
            Genre::Jazz,
            notes.iter().map(|&(p, s, d)| NoteEvent::new(p, s, d)).collect(),
        )
        .unwrap()
    }

    fn empty() -> NotePhrase {
        phrase(&[])
    }

    #[test]
    fn pitch_count_examples() {
        assert_eq!(pitch_count(&phrase(&[(60, 0, 1), (64, 1, 1), (67, 2, 1), (60, 3, 1)])), 3);
        assert_eq!(pitch_count(&empty()), 0);
        let chromatic: Vec<_> = (0..48).map(|i| (48 + i, i, 1)).collect();
        assert_eq!(pitch_count(&phrase(&chromatic)), 48);
    }

    #[test]
    fn pitch_count_per_bar_examples() {
        assert_eq!(pitch_count_per_bar(&phrase(&[(60, 0, 64)])), 1.0);
        assert_eq!(pitch_count_per_bar(&phrase(&[(60, 0, 4)])), 0.25);
        let distinct: Vec<_> = (0..64).map(|i| (48 + (i % 48), i, 1)).collect();
        // every bar has 16 different pitches
        assert_eq!(pitch_count_per_bar(&phrase(&distinct)), 16.0);
    }

    #[test]
    fn pitch_range_examples() {
        assert_eq!(pitch_range(&phrase(&[(70, 0, 1)])), 0);
        assert_eq!(pitch_range(&phrase(&[(48, 0, 1), (95, 1, 1)])), 47);
        assert_eq!(pitch_range(&empty()), 0);
    }

    #[test]
    fn pch_examples() {
        let h = pitch_class_histogram(&phrase(&[(60, 0, 1), (48, 1, 1), (72, 2, 1)]));
        assert_eq!(h[0], 3.0);
        assert_eq!(h.iter().sum::<f64>(), 3.0);
        assert_eq!(pitch_class_histogram(&empty()), [0.0; 12]);
        let all: Vec<_> = (0..12).map(|i| (60 + i, i, 1)).collect();
        assert_eq!(pitch_class_histogram(&phrase(&all)), [1.0; 12]);
    }

    #[test]
    fn pctm_examples() {
        let m = pitch_class_transition_matrix(&phrase(&[(60, 0, 1), (62, 1, 1), (60, 2, 1)]));
        assert_eq!(m[2], 1.0);
        assert_eq!(m[2 * 12], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 2.0);
        assert!(pitch_class_transition_matrix(&phrase(&[(60, 0, 4)]))
            .iter()
            .all(|&x| x == 0.0));
        let m = pitch_class_transition_matrix(&phrase(&[(60, 0, 2), (60, 4, 2)]));
        assert_eq!(m[0], 1.0);
    }

    #[test]
    fn note_count_examples() {
        assert_eq!(note_count(&empty()), 0);
        let ones: Vec<_> = (0..64).map(|i| (60, i, 1)).collect();
        assert_eq!(note_count(&phrase(&ones)), 64);
        assert_eq!(note_count(&phrase(&[(60, 0, 64)])), 1);
        assert_eq!(note_count_per_bar(&phrase(&[(60, 0, 1), (60, 16, 1), (60, 32, 1), (60, 48, 1)])), 1.0);
        assert_eq!(note_count_per_bar(&phrase(&[(60, 0, 1), (61, 1, 1), (62, 2, 1), (63, 3, 1)])), 1.0);
        assert_eq!(note_count_per_bar(&empty()), 0.0);
    }

    /// Exhaustive nearest-class scan used as the reference for quantization.
    fn nearest_class_oracle(units: i64) -> usize {
        let mut cands: Vec<(i64, u32, usize)> = LENGTH_CLASS_UNITS
            .iter()
            .enumerate()
            .map(|(k, &u)| ((units - u as i64).abs(), u, k))
            .collect();
        cands.sort();
        cands[0].2
    }

    #[test]
    fn quantize_length_examples() {
        assert_eq!(quantize_length(4), QUARTER);
        assert_eq!(quantize_length(5), 9); // half-triplet: |30-32| = 2
        assert_eq!(nearest_class_oracle(30), 9);
        assert_eq!(quantize_length(16), FULL);
        assert_eq!(quantize_length(7), 6); // 42 units: 36 and 48 tie, shorter wins
        assert_eq!(quantize_length(64), FULL);
        for steps in 1..=64 {
            assert_eq!(quantize_length(steps), nearest_class_oracle(steps as i64 * 6), "{steps}");
        }
    }

    #[test]
    fn nlh_examples() {
        let h = note_length_histogram(&phrase(&[(60, 0, 4)]), false);
        assert_eq!(h.len(), 12);
        assert_eq!(h[QUARTER], 1.0);
        let h = note_length_histogram(&empty(), true);
        assert_eq!(h.len(), 24);
        assert_eq!(h[12 + FULL], 1.0);
        assert_eq!(h.iter().sum::<f64>(), 1.0);
        let h = note_length_histogram(&phrase(&[(60, 0, 2), (62, 2, 2)]), false);
        assert_eq!(h[EIGHTH], 2.0);
    }

    #[test]
    fn nltm_examples() {
        let m = note_length_transition_matrix(&phrase(&[(60, 0, 4), (62, 4, 4)]), false);
        assert_eq!(m[QUARTER * 12 + QUARTER], 1.0);
        assert!(note_length_transition_matrix(&phrase(&[(60, 0, 4)]), false)
            .iter()
            .all(|&x| x == 0.0));
        // quarter, quarter rest, quarter, then the trailing rest of 52 steps
        let m = note_length_transition_matrix(&phrase(&[(60, 0, 4), (62, 8, 4)]), true);
        assert_eq!(m[QUARTER * 24 + 12 + QUARTER], 1.0);
        assert_eq!(m[(12 + QUARTER) * 24 + QUARTER], 1.0);
        assert_eq!(m[QUARTER * 24 + 12 + FULL], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn empty_phrase_is_all_zero_without_rests() {
        let f = extract(&empty(), FeatureOptions::default());
        assert_eq!((f.pc, f.pr, f.nc), (0, 0, 0));
        assert_eq!((f.pc_per_bar, f.nc_per_bar), (0.0, 0.0));
        assert!(f.pch.iter().chain(&f.pctm).chain(&f.nlh).chain(&f.nltm).all(|&x| x == 0.0));
    }

    #[test]
    fn dump_shapes() {
        let opts = FeatureOptions { rests: true };
        let cols = dump_columns(opts);
        assert_eq!(cols.len(), 1 + 3 + 12 + 144 + 2 + 24 + 576);
        let p = phrase(&[(60, 0, 4)]);
        let csv = dump_csv(&[&p], opts);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), cols.len());
        assert_eq!(dump_manifest(opts).lines().count(), cols.len() + 1);
    }
}
