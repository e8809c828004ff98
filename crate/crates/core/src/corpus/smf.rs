//! Standard MIDI File ingestion: one track's melody, quantized to 16th-note
//! steps, restricted to 4/4 regions, then sliced into phrases.

use std::path::Path;

use midly::{Format, MetaMessage, MidiMessage, Smf, Timing, TrackEventKind};

use super::{
    slice_phrases, Corpus, CorpusError, Genre, SlicePolicy, Split, TimedNote, HIGHEST_PITCH,
    LOWEST_PITCH,
};

/// 16 steps per 4/4 bar.
const STEPS_PER_QUARTER: u64 = 4;

#[derive(Debug, Clone)]
pub struct SmfOptions {
    pub track_index: usize,
    pub transpose: i32,
    pub genre: Genre,
    pub policy: SlicePolicy,
    pub split: Split,
}

impl Default for SmfOptions {
    fn default() -> Self {
        SmfOptions {
            track_index: 0,
            transpose: 0,
            genre: Genre::Jazz,
            policy: SlicePolicy::NonOverlapping,
            split: Split::Train,
        }
    }
}

/// Quantized notes of one 4/4 stretch, with steps counted from its start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmfRegion {
    pub start_tick: u64,
    pub span_steps: u32,
    pub notes: Vec<TimedNote>,
}

#[derive(Debug, Clone)]
pub struct SmfImport {
    pub regions: Vec<SmfRegion>,
    /// Notes dropped because their transposed pitch left [48, 95].
    pub dropped_out_of_range: usize,
    pub corpus: Corpus,
}

pub fn parse_smf(path: impl AsRef<Path>, opts: &SmfOptions) -> Result<SmfImport, CorpusError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "smf".to_string());
    parse_smf_bytes(&bytes, &stem, opts)
}

struct RawNote {
    key: u8,
    on: u64,
    off: u64,
}

pub fn parse_smf_bytes(
    bytes: &[u8],
    name: &str,
    opts: &SmfOptions,
) -> Result<SmfImport, CorpusError> {
    if bytes.len() < 4 || &bytes[..4] != b"MThd" {
        return Err(CorpusError::NotSmf);
    }
    let smf = Smf::parse(bytes).map_err(|e| CorpusError::MalformedSmf(e.to_string()))?;
    if smf.header.format == Format::Sequential {
        return Err(CorpusError::UnsupportedSmf("format 2".into()));
    }
    let ppq = match smf.header.timing {
        Timing::Metrical(t) => t.as_int() as u64,
        Timing::Timecode(..) => {
            return Err(CorpusError::UnsupportedSmf("SMPTE timecode timing".into()))
        }
    };
    if ppq == 0 {
        return Err(CorpusError::MalformedSmf("zero ticks per quarter".into()));
    }
    if opts.track_index >= smf.tracks.len() {
        return Err(CorpusError::UnsupportedSmf(format!(
            "track {} requested, file has {}",
            opts.track_index,
            smf.tracks.len()
        )));
    }

    // Meta events from every track form the shared timeline (format 1 keeps
    // them in the conductor track).
    let mut time_sigs: Vec<(u64, u8, u8)> = Vec::new();
    let mut end_tick = 0u64;
    for track in &smf.tracks {
        let mut tick = 0u64;
        for ev in track {
            tick += ev.delta.as_int() as u64;
            match ev.kind {
                TrackEventKind::Meta(MetaMessage::TimeSignature(num, denom_pow, _, _)) => {
                    time_sigs.push((tick, num, denom_pow));
                }
                // Tempo does not affect step quantization.
                TrackEventKind::Meta(MetaMessage::Tempo(_)) => {}
                _ => {}
            }
        }
        end_tick = end_tick.max(tick);
    }

    let mut raw: Vec<RawNote> = Vec::new();
    let mut sounding: Option<(u8, u64)> = None;
    let mut tick = 0u64;
    for ev in &smf.tracks[opts.track_index] {
        tick += ev.delta.as_int() as u64;
        let TrackEventKind::Midi { message, .. } = ev.kind else {
            continue;
        };
        let (key, on) = match message {
            MidiMessage::NoteOn { key, vel } => (key.as_int(), vel.as_int() > 0),
            MidiMessage::NoteOff { key, .. } => (key.as_int(), false),
            _ => continue,
        };
        if on {
            // A new onset ends whatever is sounding.
            if let Some((k, t0)) = sounding.take() {
                raw.push(RawNote { key: k, on: t0, off: tick });
            }
            sounding = Some((key, tick));
        } else if let Some((k, t0)) = sounding {
            if k == key {
                raw.push(RawNote { key: k, on: t0, off: tick });
                sounding = None;
            }
        }
    }
    if let Some((k, t0)) = sounding {
        raw.push(RawNote { key: k, on: t0, off: end_tick.max(t0) });
    }
    if raw.is_empty() {
        return Err(CorpusError::NoNotes(opts.track_index));
    }

    let regions = four_four_regions(&time_sigs, end_tick);
    if regions.is_empty() {
        return Err(CorpusError::NoFourFour);
    }

    let quantize = |ticks: u64| -> u64 { (ticks * STEPS_PER_QUARTER + ppq / 2) / ppq };
    let mut dropped = 0usize;
    let mut out_regions = Vec::new();
    let mut corpus = Corpus::new(format!("smf:{name}"));
    for (ri, &(r0, r1)) in regions.iter().enumerate() {
        let mut notes: Vec<(TimedNote, u64)> = Vec::new();
        for n in raw.iter().filter(|n| n.on < r1 && n.off > r0 && n.on >= r0) {
            let pitch = n.key as i32 + opts.transpose;
            if !(LOWEST_PITCH as i32..=HIGHEST_PITCH as i32).contains(&pitch) {
                dropped += 1;
                continue;
            }
            let start = quantize(n.on - r0);
            let end = quantize(n.off.min(r1) - r0);
            let duration = end.saturating_sub(start).max(1);
            notes.push((
                TimedNote {
                    pitch: pitch as u8,
                    start: start as u32,
                    duration: duration as u32,
                },
                n.on,
            ));
        }
        let notes = resolve_overlaps(notes);
        let span_steps = quantize(r1 - r0) as u32;
        let prefix = format!("{name}-t{}-r{ri}", opts.track_index);
        for p in slice_phrases(&notes, span_steps, opts.policy, &prefix, opts.genre) {
            corpus.push(p, opts.split)?;
        }
        out_regions.push(SmfRegion {
            start_tick: r0,
            span_steps,
            notes,
        });
    }

    Ok(SmfImport {
        regions: out_regions,
        dropped_out_of_range: dropped,
        corpus,
    })
}

/// Half-open tick ranges in 4/4. Without any time-signature event the whole
/// file is 4/4, the SMF default.
fn four_four_regions(time_sigs: &[(u64, u8, u8)], end_tick: u64) -> Vec<(u64, u64)> {
    let mut changes: Vec<(u64, bool)> = Vec::new();
    let mut sorted = time_sigs.to_vec();
    sorted.sort_by_key(|&(t, _, _)| t);
    if sorted.first().is_none_or(|&(t, _, _)| t > 0) {
        changes.push((0, true));
    }
    for (t, num, denom_pow) in sorted {
        let is_44 = num == 4 && denom_pow == 2;
        match changes.last_mut() {
            Some(last) if last.0 == t => last.1 = is_44,
            _ => changes.push((t, is_44)),
        }
    }
    let mut regions = Vec::new();
    for (i, &(t0, is_44)) in changes.iter().enumerate() {
        let t1 = changes.get(i + 1).map_or(end_tick, |c| c.0);
        if is_44 && t1 > t0 {
            regions.push((t0, t1));
        }
    }
    regions
}

/// Orders by step; for equal steps the later onset wins; earlier notes are
/// cut at the next onset.
fn resolve_overlaps(mut notes: Vec<(TimedNote, u64)>) -> Vec<TimedNote> {
    notes.sort_by_key(|&(n, tick)| (n.start, tick));
    let mut out: Vec<TimedNote> = Vec::with_capacity(notes.len());
    for (n, _) in notes {
        if let Some(prev) = out.last_mut() {
            if prev.start == n.start {
                *prev = n;
                continue;
            }
            if prev.end() > n.start {
                prev.duration = n.start - prev.start;
            }
        }
        out.push(n);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vlq(mut v: u32) -> Vec<u8> {
        let mut out = vec![(v & 0x7f) as u8];
        v >>= 7;
        while v > 0 {
            out.insert(0, (v & 0x7f) as u8 | 0x80);
            v >>= 7;
        }
        out
    }

    fn smf(format: u16, ppq: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut b = b"MThd".to_vec();
        b.extend(6u32.to_be_bytes());
        b.extend(format.to_be_bytes());
        b.extend((tracks.len() as u16).to_be_bytes());
        b.extend(ppq.to_be_bytes());
        for t in tracks {
            b.extend(b"MTrk");
            b.extend((t.len() as u32).to_be_bytes());
            b.extend(t);
        }
        b
    }

    fn end_of_track() -> Vec<u8> {
        vec![0x00, 0xFF, 0x2F, 0x00]
    }

    #[test]
    fn single_quarter_note_quantizes_to_four_steps() {
        // delta 0 note-on C4, delta 480 note-off, end of track
        let mut track = vec![0x00, 0x90, 0x3C, 0x40];
        track.extend(vlq(480));
        assert_eq!(vlq(480), vec![0x83, 0x60]);
        track.extend([0x80, 0x3C, 0x40]);
        track.extend(end_of_track());
        let bytes = smf(0, 480, &[track]);
        let imp = parse_smf_bytes(&bytes, "one", &SmfOptions::default()).unwrap();
        assert_eq!(imp.regions.len(), 1);
        assert_eq!(
            imp.regions[0].notes,
            vec![TimedNote { pitch: 60, start: 0, duration: 4 }]
        );
        // four steps cannot fill a phrase
        assert!(imp.corpus.is_empty());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = parse_smf_bytes(b"RIFF....", "x", &SmfOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "not a Standard MIDI File");
    }

    #[test]
    fn format_two_is_rejected() {
        let bytes = smf(2, 96, &[end_of_track()]);
        assert!(matches!(
            parse_smf_bytes(&bytes, "x", &SmfOptions::default()),
            Err(CorpusError::UnsupportedSmf(_))
        ));
    }

    fn melody_track(prefix: &[u8], keys: &[u8], step_ticks: u32) -> Vec<u8> {
        // running status after the first note-on; velocity 0 as note-off
        let mut t = prefix.to_vec();
        t.extend([0x00, 0x90, keys[0], 0x50]);
        t.extend(vlq(step_ticks));
        t.extend([keys[0], 0x00]);
        for &k in &keys[1..] {
            t.extend([0x00, k, 0x50]);
            t.extend(vlq(step_ticks));
            t.extend([k, 0x00]);
        }
        t.extend(end_of_track());
        t
    }

    #[test]
    fn low_pitch_is_dropped_and_counted() {
        let keys: Vec<u8> = (0..64).map(|i| if i == 3 { 40 } else { 60 + (i % 5) as u8 }).collect();
        let bytes = smf(0, 96, &[melody_track(&[], &keys, 24)]);
        let imp = parse_smf_bytes(&bytes, "m", &SmfOptions::default()).unwrap();
        assert_eq!(imp.dropped_out_of_range, 1);
        assert_eq!(imp.regions[0].notes.len(), 63);
        assert!(imp.regions[0].notes.iter().all(|n| n.pitch >= 48));
        assert_eq!(imp.corpus.len(), 1);
        assert_eq!(imp.corpus.entries()[0].phrase.notes().len(), 63);
    }

    #[test]
    fn transpose_is_applied_before_filtering() {
        let keys: Vec<u8> = (0..64).map(|_| 45).collect();
        let bytes = smf(0, 96, &[melody_track(&[], &keys, 24)]);
        let opts = SmfOptions { transpose: 12, ..Default::default() };
        let imp = parse_smf_bytes(&bytes, "m", &opts).unwrap();
        assert_eq!(imp.dropped_out_of_range, 0);
        assert!(imp.regions[0].notes.iter().all(|n| n.pitch == 57));
    }

    #[test]
    fn three_four_only_file_has_no_region() {
        let ts = [0x00, 0xFF, 0x58, 0x04, 0x03, 0x02, 0x18, 0x08];
        let bytes = smf(0, 96, &[melody_track(&ts, &[60, 62, 64], 24)]);
        let err = parse_smf_bytes(&bytes, "w", &SmfOptions::default()).unwrap_err();
        assert!(err.to_string().contains("no 4/4 region"));
    }

    #[test]
    fn format_one_uses_conductor_time_signature() {
        // conductor: 4/4 at 0, tempo, then 3/4 after two bars (2 * 4 * 96 ticks)
        let mut conductor = vec![0x00, 0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08];
        conductor.extend([0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20]);
        conductor.extend(vlq(768));
        conductor.extend([0xFF, 0x58, 0x04, 0x03, 0x02, 0x18, 0x08]);
        conductor.extend(end_of_track());
        let keys: Vec<u8> = (0..48).map(|i| 60 + (i % 7) as u8).collect();
        let bytes = smf(1, 96, &[conductor, melody_track(&[], &keys, 24)]);
        let opts = SmfOptions { track_index: 1, ..Default::default() };
        let imp = parse_smf_bytes(&bytes, "f1", &opts).unwrap();
        assert_eq!(imp.regions.len(), 1);
        assert_eq!(imp.regions[0].span_steps, 32);
        assert_eq!(imp.regions[0].notes.len(), 32);
    }

    #[test]
    fn empty_track_reports_no_notes() {
        let bytes = smf(0, 96, &[end_of_track()]);
        assert!(matches!(
            parse_smf_bytes(&bytes, "e", &SmfOptions::default()),
            Err(CorpusError::NoNotes(0))
        ));
    }

    #[test]
    fn overlaps_are_resolved_toward_later_onsets() {
        let n = |pitch, start, duration| TimedNote { pitch, start, duration };
        let out = resolve_overlaps(vec![(n(60, 0, 8), 0), (n(62, 4, 4), 50), (n(64, 4, 2), 60)]);
        assert_eq!(out, vec![n(60, 0, 4), n(64, 4, 2)]);
    }
}
