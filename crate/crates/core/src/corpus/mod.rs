//! Four-bar monophonic melody phrases and the corpora built from them.
//!
//! A phrase is 4 bars of 4/4 at 16 steps per bar (64 steps) over the
//! 48 MIDI pitches C3..=B6 (48..=95, with C4 = 60). Corpora are stored as
//! line-delimited JSON, one phrase per line.

mod pianoroll;
mod smf;
mod synth;

pub use pianoroll::{binarize_monophonic, from_pianoroll, to_pianoroll, PianoRoll};
pub use smf::{parse_smf, parse_smf_bytes, SmfImport, SmfOptions, SmfRegion};
pub use synth::{synth_corpus, SynthProfile};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BARS: usize = 4;
pub const STEPS_PER_BAR: usize = 16;
pub const PHRASE_STEPS: usize = BARS * STEPS_PER_BAR;
pub const PITCH_COUNT: usize = 48;
pub const LOWEST_PITCH: u8 = 48;
pub const HIGHEST_PITCH: u8 = 95;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhraseError {
    #[error("pitch out of range [48,95]: {pitch}")]
    PitchOutOfRange { pitch: i64 },
    #[error("note starting at {start} has non-positive duration {duration}")]
    BadDuration { start: i64, duration: i64 },
    #[error("note start {start} outside the phrase")]
    BadStart { start: i64 },
    #[error("phrase longer than 64 steps (note ends at step {end})")]
    TooLong { end: i64 },
    #[error("overlapping notes at steps {first} and {second}")]
    Overlap { first: u8, second: u8 },
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: phrase {id:?}: {source}")]
    InvalidPhrase {
        line: usize,
        id: String,
        #[source]
        source: PhraseError,
    },
    #[error("duplicate phrase id {0:?}")]
    DuplicateId(String),
    #[error("transposing {id:?} by {semitones} leaves range [48,95] for notes {offending:?}")]
    TransposeOutOfRange {
        id: String,
        semitones: i32,
        /// (start, shifted pitch) of every offending note
        offending: Vec<(u8, i32)>,
    },
    #[error("count ≥ 1 required")]
    EmptyCount,
    #[error("invalid synth profile: {0}")]
    BadProfile(String),
    #[error("insufficient source phrases: need {needed}, have {available}")]
    InsufficientSource { needed: usize, available: usize },
    #[error("ratio R must be ≥ 1")]
    BadRatio,
    #[error("not a Standard MIDI File")]
    NotSmf,
    #[error("unsupported SMF: {0}")]
    UnsupportedSmf(String),
    #[error("malformed SMF: {0}")]
    MalformedSmf(String),
    #[error("no note events on track {0}")]
    NoNotes(usize),
    #[error("time signature never 4/4 (no 4/4 region)")]
    NoFourFour,
    #[error("polyphonic grid at step {step}")]
    Polyphonic { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Jazz,
    Other,
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Genre::Jazz => f.write_str("jazz"),
            Genre::Other => f.write_str("other"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One note of a phrase. `start` and `duration` are in 16th-note steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub start: u8,
    pub duration: u8,
}

impl NoteEvent {
    pub fn new(pitch: u8, start: u8, duration: u8) -> Self {
        NoteEvent {
            pitch,
            start,
            duration,
        }
    }

    /// One past the last step covered.
    pub fn end(&self) -> u8 {
        self.start + self.duration
    }

    fn check(&self) -> Result<(), PhraseError> {
        check_note(self.pitch as i64, self.start as i64, self.duration as i64)
    }
}

fn check_note(pitch: i64, start: i64, duration: i64) -> Result<(), PhraseError> {
    if !(LOWEST_PITCH as i64..=HIGHEST_PITCH as i64).contains(&pitch) {
        return Err(PhraseError::PitchOutOfRange { pitch });
    }
    if !(0..PHRASE_STEPS as i64).contains(&start) {
        return Err(PhraseError::BadStart { start });
    }
    if duration < 1 {
        return Err(PhraseError::BadDuration { start, duration });
    }
    if start + duration > PHRASE_STEPS as i64 {
        return Err(PhraseError::TooLong {
            end: start + duration,
        });
    }
    Ok(())
}

/// A validated four-bar monophonic melody.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotePhrase {
    id: String,
    genre: Genre,
    notes: Vec<NoteEvent>,
}

impl NotePhrase {
    /// Validates and sorts `notes` by start.
    pub fn new(
        id: impl Into<String>,
        genre: Genre,
        mut notes: Vec<NoteEvent>,
    ) -> Result<Self, PhraseError> {
        for n in &notes {
            n.check()?;
        }
        notes.sort_by_key(|n| n.start);
        for w in notes.windows(2) {
            if w[1].start < w[0].end() {
                return Err(PhraseError::Overlap {
                    first: w[0].start,
                    second: w[1].start,
                });
            }
        }
        Ok(NotePhrase {
            id: id.into(),
            genre,
            notes,
        })
    }

    pub fn empty(id: impl Into<String>, genre: Genre) -> Self {
        NotePhrase {
            id: id.into(),
            genre,
            notes: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn genre(&self) -> Genre {
        self.genre
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_genre(mut self, genre: Genre) -> Self {
        self.genre = genre;
        self
    }

    /// Merges adjacent notes of equal pitch (`a.end() == b.start`). This is the
    /// canonical form a binary pianoroll can represent.
    pub fn merged(&self) -> NotePhrase {
        let mut out: Vec<NoteEvent> = Vec::with_capacity(self.notes.len());
        for &n in &self.notes {
            match out.last_mut() {
                Some(prev) if prev.pitch == n.pitch && prev.end() == n.start => {
                    prev.duration += n.duration;
                }
                _ => out.push(n),
            }
        }
        NotePhrase {
            id: self.id.clone(),
            genre: self.genre,
            notes: out,
        }
    }
}

/// Shifts every pitch by `semitones`; rhythm is untouched.
pub fn transpose_phrase(phrase: &NotePhrase, semitones: i32) -> Result<NotePhrase, CorpusError> {
    let offending: Vec<(u8, i32)> = phrase
        .notes
        .iter()
        .map(|n| (n.start, n.pitch as i32 + semitones))
        .filter(|&(_, p)| !(LOWEST_PITCH as i32..=HIGHEST_PITCH as i32).contains(&p))
        .collect();
    if !offending.is_empty() {
        return Err(CorpusError::TransposeOutOfRange {
            id: phrase.id.clone(),
            semitones,
            offending,
        });
    }
    let notes = phrase
        .notes
        .iter()
        .map(|n| NoteEvent {
            pitch: (n.pitch as i32 + semitones) as u8,
            ..*n
        })
        .collect();
    Ok(NotePhrase {
        id: phrase.id.clone(),
        genre: phrase.genre,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub phrase: NotePhrase,
    pub split: Split,
}

/// An ordered collection of phrases with unique ids, each tagged train or test.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    ids: HashSet<String>,
    provenance: String,
}

impl Corpus {
    pub fn new(provenance: impl Into<String>) -> Self {
        Corpus {
            entries: Vec::new(),
            ids: HashSet::new(),
            provenance: provenance.into(),
        }
    }

    pub fn push(&mut self, phrase: NotePhrase, split: Split) -> Result<(), CorpusError> {
        if !self.ids.insert(phrase.id.clone()) {
            return Err(CorpusError::DuplicateId(phrase.id));
        }
        self.entries.push(CorpusEntry { phrase, split });
        Ok(())
    }

    pub fn from_phrases(
        provenance: impl Into<String>,
        phrases: impl IntoIterator<Item = NotePhrase>,
        split: Split,
    ) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::new(provenance);
        for p in phrases {
            corpus.push(p, split)?;
        }
        Ok(corpus)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn phrases(&self) -> impl Iterator<Item = &NotePhrase> {
        self.entries.iter().map(|e| &e.phrase)
    }

    pub fn split(&self, split: Split) -> Vec<&NotePhrase> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| &e.phrase)
            .collect()
    }

    pub fn train(&self) -> Vec<&NotePhrase> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&NotePhrase> {
        self.split(Split::Test)
    }

    pub fn bar_count(&self) -> usize {
        self.len() * BARS
    }

    /// Line-delimited JSON, one record per phrase, in corpus order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let rec = PhraseRecordOut {
                id: &e.phrase.id,
                genre: e.phrase.genre,
                notes: &e.phrase.notes,
                split: e.split,
            };
            out.push_str(&serde_json::to_string(&rec).expect("phrase record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

#[derive(Serialize)]
struct PhraseRecordOut<'a> {
    id: &'a str,
    genre: Genre,
    notes: &'a [NoteEvent],
    split: Split,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhraseRecordIn {
    id: String,
    genre: Genre,
    notes: Vec<NoteRecordIn>,
    #[serde(default)]
    split: Split,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoteRecordIn {
    pitch: i64,
    start: i64,
    duration: i64,
}

/// Parses a line-delimited JSON corpus from a string. Blank lines are skipped;
/// line numbers in errors are 1-based.
pub fn parse_jsonl_str(text: &str, provenance: &str) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::new(provenance);
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: PhraseRecordIn = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let invalid = |source| CorpusError::InvalidPhrase {
            line,
            id: rec.id.clone(),
            source,
        };
        let mut notes = Vec::with_capacity(rec.notes.len());
        for n in &rec.notes {
            check_note(n.pitch, n.start, n.duration).map_err(invalid)?;
            notes.push(NoteEvent::new(n.pitch as u8, n.start as u8, n.duration as u8));
        }
        let phrase = NotePhrase::new(rec.id.clone(), rec.genre, notes).map_err(invalid)?;
        corpus.push(phrase, rec.split).map_err(|e| match e {
            CorpusError::DuplicateId(id) => CorpusError::Malformed {
                line,
                message: format!("duplicate phrase id {id:?}"),
            },
            other => other,
        })?;
    }
    Ok(corpus)
}

pub fn parse_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_jsonl_str(&text, &path.display().to_string())
}

/// A note on an unbounded step timeline, before slicing into phrases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedNote {
    pub pitch: u8,
    pub start: u32,
    pub duration: u32,
}

impl TimedNote {
    pub fn end(&self) -> u32 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlicePolicy {
    /// Disjoint 64-step windows at bar boundaries.
    #[default]
    NonOverlapping,
    /// 64-step windows advanced one bar (16 steps) at a time.
    Sliding,
}

/// Cuts a quantized monophonic note stream spanning `span_steps` steps into
/// four-bar phrases. Incomplete trailing windows and windows without notes are
/// dropped; notes crossing a window edge are clipped to the window.
pub fn slice_phrases(
    events: &[TimedNote],
    span_steps: u32,
    policy: SlicePolicy,
    id_prefix: &str,
    genre: Genre,
) -> Vec<NotePhrase> {
    let window = PHRASE_STEPS as u32;
    let stride = match policy {
        SlicePolicy::NonOverlapping => window,
        SlicePolicy::Sliding => STEPS_PER_BAR as u32,
    };
    let mut phrases = Vec::new();
    let mut start = 0u32;
    while start + window <= span_steps {
        let end = start + window;
        let notes: Vec<NoteEvent> = events
            .iter()
            .filter(|n| n.start < end && n.end() > start)
            .filter(|n| (LOWEST_PITCH..=HIGHEST_PITCH).contains(&n.pitch))
            .map(|n| {
                let s = n.start.max(start);
                let e = n.end().min(end);
                NoteEvent::new(n.pitch, (s - start) as u8, (e - s) as u8)
            })
            .collect();
        if !notes.is_empty() {
            // Monophonic input yields monophonic windows; anything else is skipped.
            if let Ok(p) = NotePhrase::new(format!("{id_prefix}-s{start}"), genre, notes) {
                phrases.push(p);
            }
        }
        start += stride;
    }
    phrases
}

/// Uniform subsample of `source`'s training split of size exactly
/// `ratio * |target train|`, in source order.
pub fn sample_ratio(
    source: &Corpus,
    target: &Corpus,
    ratio: u32,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    if ratio == 0 {
        return Err(CorpusError::BadRatio);
    }
    let pool = source.train();
    let needed = ratio as usize * target.train().len();
    if pool.len() < needed {
        return Err(CorpusError::InsufficientSource {
            needed,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, pool.len(), needed).into_vec();
    picked.sort_unstable();
    let mut out = Corpus::new(format!(
        "sample_ratio(R={ratio}, seed={seed}) of {}",
        source.provenance()
    ));
    for i in picked {
        out.push(pool[i].clone(), Split::Train)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(pitch: u8, start: u8, duration: u8) -> NoteEvent {
        NoteEvent::new(pitch, start, duration)
    }

    #[test]
    fn parses_single_record_without_split() {
        let c = parse_jsonl_str(
            r#"{"id":"p1","genre":"jazz","notes":[{"pitch":60,"start":0,"duration":16}]}"#,
            "mem",
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.entries()[0].phrase.notes(), &[n(60, 0, 16)]);
        assert_eq!(c.entries()[0].split, Split::Train);
        assert_eq!(c.entries()[0].phrase.genre(), Genre::Jazz);
    }

    #[test]
    fn rejects_pitch_96_with_line_number() {
        let text = concat!(
            r#"{"id":"a","genre":"jazz","notes":[]}"#,
            "\n",
            r#"{"id":"b","genre":"other","notes":[{"pitch":96,"start":0,"duration":1}]}"#
        );
        let err = parse_jsonl_str(text, "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pitch out of range [48,95]"), "{msg}");
        assert!(msg.starts_with("line 2"), "{msg}");
    }

    #[test]
    fn rejects_overlapping_notes() {
        let text = r#"{"id":"a","genre":"jazz","notes":[{"pitch":60,"start":0,"duration":8},{"pitch":62,"start":4,"duration":4}]}"#;
        let msg = parse_jsonl_str(text, "mem").unwrap_err().to_string();
        assert!(msg.contains("overlapping notes"), "{msg}");
    }

    #[test]
    fn rejects_overlong_unknown_fields_and_garbage() {
        let long = r#"{"id":"a","genre":"jazz","notes":[{"pitch":60,"start":60,"duration":5}]}"#;
        assert!(parse_jsonl_str(long, "m")
            .unwrap_err()
            .to_string()
            .contains("longer than 64"));
        let unknown = r#"{"id":"a","genre":"jazz","notes":[],"tempo":120}"#;
        assert!(matches!(
            parse_jsonl_str(unknown, "m"),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse_jsonl_str("\n{not json", "m"),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
        let dup = "{\"id\":\"a\",\"genre\":\"jazz\",\"notes\":[]}\n{\"id\":\"a\",\"genre\":\"jazz\",\"notes\":[]}";
        assert!(matches!(
            parse_jsonl_str(dup, "m"),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn notes_are_sorted_on_construction() {
        let p = NotePhrase::new("x", Genre::Jazz, vec![n(62, 8, 4), n(60, 0, 4)]).unwrap();
        assert_eq!(p.notes(), &[n(60, 0, 4), n(62, 8, 4)]);
    }

    #[test]
    fn transpose_examples() {
        let p = NotePhrase::new("x", Genre::Jazz, vec![n(60, 0, 4)]).unwrap();
        assert_eq!(transpose_phrase(&p, 2).unwrap().notes(), &[n(62, 0, 4)]);
        assert_eq!(transpose_phrase(&p, 0).unwrap(), p);
        let top = NotePhrase::new("y", Genre::Jazz, vec![n(95, 0, 4), n(70, 4, 1)]).unwrap();
        match transpose_phrase(&top, 1) {
            Err(CorpusError::TransposeOutOfRange { offending, .. }) => {
                assert_eq!(offending, vec![(0, 96)])
            }
            other => panic!("{other:?}"),
        }
    }

    fn stream(span: u32) -> Vec<TimedNote> {
        (0..span / 4)
            .map(|i| TimedNote {
                pitch: 60 + (i % 12) as u8,
                start: i * 4,
                duration: 4,
            })
            .collect()
    }

    #[test]
    fn slicing_window_arithmetic() {
        let ev = stream(128);
        assert_eq!(
            slice_phrases(&ev, 128, SlicePolicy::NonOverlapping, "s", Genre::Jazz).len(),
            2
        );
        let sliding = slice_phrases(&ev, 128, SlicePolicy::Sliding, "s", Genre::Jazz);
        let ids: Vec<_> = sliding.iter().map(|p| p.id().to_string()).collect();
        assert_eq!(ids, ["s-s0", "s-s16", "s-s32", "s-s48", "s-s64"]);
        assert!(slice_phrases(&stream(63), 63, SlicePolicy::NonOverlapping, "s", Genre::Jazz)
            .is_empty());
        assert!(slice_phrases(&[], 0, SlicePolicy::Sliding, "s", Genre::Jazz).is_empty());
    }

    #[test]
    fn slicing_clips_and_drops_empty_windows() {
        let ev = [
            TimedNote { pitch: 60, start: 60, duration: 8 },
            TimedNote { pitch: 62, start: 200, duration: 4 },
        ];
        let ps = slice_phrases(&ev, 256, SlicePolicy::NonOverlapping, "c", Genre::Other);
        assert_eq!(ps.len(), 3);
        assert_eq!(ps[0].notes(), &[n(60, 60, 4)]);
        assert_eq!(ps[1].notes(), &[n(60, 0, 4)]);
        assert_eq!(ps[2].id(), "c-s192");
        assert_eq!(ps[2].notes(), &[n(62, 8, 4)]);
    }

    fn corpus_with(train: usize, test: usize, prefix: &str) -> Corpus {
        let mut c = Corpus::new(prefix);
        for i in 0..train + test {
            let split = if i < train { Split::Train } else { Split::Test };
            c.push(NotePhrase::empty(format!("{prefix}{i}"), Genre::Other), split)
                .unwrap();
        }
        c
    }

    #[test]
    fn sample_ratio_sizes() {
        let target = corpus_with(1446, 162, "t");
        let source = corpus_with(9000, 100, "s");
        let s = sample_ratio(&source, &target, 3, 1).unwrap();
        assert_eq!(s.len(), 4338);
        assert!(s.phrases().all(|p| p.id().starts_with('s')));

        let target = corpus_with(100, 0, "t");
        assert_eq!(sample_ratio(&source, &target, 1, 5).unwrap().len(), 100);
        let small = corpus_with(500, 0, "s");
        assert!(matches!(
            sample_ratio(&small, &target, 6, 0),
            Err(CorpusError::InsufficientSource { needed: 600, available: 500 })
        ));
        assert_eq!(
            sample_ratio(&source, &target, 2, 9).unwrap(),
            sample_ratio(&source, &target, 2, 9).unwrap()
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let mut c = Corpus::new("rt");
        c.push(
            NotePhrase::new("a", Genre::Jazz, vec![n(48, 0, 2), n(95, 10, 54)]).unwrap(),
            Split::Train,
        )
        .unwrap();
        c.push(NotePhrase::empty("b", Genre::Other), Split::Test).unwrap();
        let text = c.to_jsonl();
        let back = parse_jsonl_str(&text, "rt").unwrap();
        assert_eq!(back, c);
    }
}
