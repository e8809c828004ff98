use super::{
    CorpusError, Genre, NoteEvent, NotePhrase, BARS, LOWEST_PITCH, PHRASE_STEPS, PITCH_COUNT,
    STEPS_PER_BAR,
};

/// Binary 4 x 16 x 48 grid, stored as 64 frames of 48 cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PianoRoll {
    cells: Vec<u8>,
}

impl Default for PianoRoll {
    fn default() -> Self {
        PianoRoll::zeros()
    }
}

impl PianoRoll {
    pub const SHAPE: [usize; 3] = [BARS, STEPS_PER_BAR, PITCH_COUNT];
    pub const LEN: usize = BARS * STEPS_PER_BAR * PITCH_COUNT;

    pub fn zeros() -> Self {
        PianoRoll {
            cells: vec![0; Self::LEN],
        }
    }

    /// Builds a grid from 3072 cells in (bar, step, pitch) row-major order.
    /// Returns `None` if the length is wrong or a cell is not 0/1.
    pub fn from_cells(cells: Vec<u8>) -> Option<Self> {
        (cells.len() == Self::LEN && cells.iter().all(|&c| c <= 1)).then_some(PianoRoll { cells })
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    fn index(bar: usize, step: usize, pitch_row: usize) -> usize {
        assert!(bar < BARS && step < STEPS_PER_BAR && pitch_row < PITCH_COUNT);
        (bar * STEPS_PER_BAR + step) * PITCH_COUNT + pitch_row
    }

    pub fn get(&self, bar: usize, step: usize, pitch_row: usize) -> u8 {
        self.cells[Self::index(bar, step, pitch_row)]
    }

    pub fn set(&mut self, bar: usize, step: usize, pitch_row: usize, on: bool) {
        self.cells[Self::index(bar, step, pitch_row)] = on as u8;
    }

    /// The 48 cells at global step `t` (`t = bar * 16 + step`).
    pub fn frame(&self, t: usize) -> &[u8] {
        &self.cells[t * PITCH_COUNT..(t + 1) * PITCH_COUNT]
    }

    pub fn active_cells(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| c as f64).collect()
    }
}

pub fn to_pianoroll(phrase: &NotePhrase) -> PianoRoll {
    let mut roll = PianoRoll::zeros();
    for n in phrase.notes() {
        let row = (n.pitch - LOWEST_PITCH) as usize;
        for t in n.start as usize..n.end() as usize {
            roll.cells[t * PITCH_COUNT + row] = 1;
        }
    }
    roll
}

/// Each maximal run of consecutive active steps on one pitch becomes a note.
pub fn from_pianoroll(
    grid: &PianoRoll,
    id: impl Into<String>,
    genre: Genre,
) -> Result<NotePhrase, CorpusError> {
    let mut notes: Vec<NoteEvent> = Vec::new();
    let mut current: Option<NoteEvent> = None;
    for t in 0..PHRASE_STEPS {
        let mut active = grid
            .frame(t)
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 1)
            .map(|(row, _)| row);
        let row = active.next();
        if active.next().is_some() {
            return Err(CorpusError::Polyphonic { step: t });
        }
        let pitch = row.map(|r| LOWEST_PITCH + r as u8);
        current = match (current, pitch) {
            (Some(mut c), Some(p)) if c.pitch == p => {
                c.duration += 1;
                Some(c)
            }
            (prev, p) => {
                notes.extend(prev);
                p.map(|p| NoteEvent::new(p, t as u8, 1))
            }
        };
    }
    notes.extend(current);
    Ok(NotePhrase::new(id, genre, notes).expect("runs of a monophonic grid form a valid phrase"))
}

/// Per step, activates the single most probable pitch if its probability
/// reaches `threshold` (ties go to the lower pitch); otherwise the step rests.
///
/// Panics if `probs` is not 3072 long or `threshold` is outside (0, 1).
pub fn binarize_monophonic(probs: &[f64], threshold: f64) -> PianoRoll {
    assert_eq!(probs.len(), PianoRoll::LEN, "expected a 4x16x48 grid");
    assert!(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0,1)");
    let mut roll = PianoRoll::zeros();
    for t in 0..PHRASE_STEPS {
        let frame = &probs[t * PITCH_COUNT..(t + 1) * PITCH_COUNT];
        let mut best = 0;
        for (row, &p) in frame.iter().enumerate() {
            if p > frame[best] {
                best = row;
            }
        }
        if frame[best] >= threshold {
            roll.cells[t * PITCH_COUNT + best] = 1;
        }
    }
    roll
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn phrase(notes: &[(u8, u8, u8)]) -> NotePhrase {
        NotePhrase::new(
            "p",
            Genre::Jazz,
            notes.iter().map(|&(p, s, d)| NoteEvent::new(p, s, d)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn held_lowest_note_fills_row_zero() {
        let roll = to_pianoroll(&phrase(&[(48, 0, 64)]));
        for b in 0..4 {
            for s in 0..16 {
                assert_eq!(roll.get(b, s, 0), 1);
            }
        }
        assert_eq!(roll.active_cells(), 64);
    }

    #[test]
    fn empty_and_two_note_rolls() {
        assert_eq!(to_pianoroll(&phrase(&[])).active_cells(), 0);
        let roll = to_pianoroll(&phrase(&[(60, 0, 2), (62, 2, 2)]));
        assert_eq!(roll.active_cells(), 4);
        assert_eq!(roll.get(0, 1, 12), 1);
        assert_eq!(roll.get(0, 2, 14), 1);
    }

    #[test]
    fn runs_become_notes() {
        let mut roll = PianoRoll::zeros();
        for s in (0..4).chain(8..12) {
            roll.set(0, s, 12, true);
        }
        let p = from_pianoroll(&roll, "r", Genre::Jazz).unwrap();
        assert_eq!(p.notes(), &[NoteEvent::new(60, 0, 4), NoteEvent::new(60, 8, 4)]);

        assert!(from_pianoroll(&PianoRoll::zeros(), "z", Genre::Jazz)
            .unwrap()
            .notes()
            .is_empty());

        let mut roll = PianoRoll::zeros();
        for s in 0..4 {
            roll.set(0, s, 12, true);
            roll.set(0, s + 4, 14, true);
        }
        let p = from_pianoroll(&roll, "r", Genre::Jazz).unwrap();
        assert_eq!(p.notes(), &[NoteEvent::new(60, 0, 4), NoteEvent::new(62, 4, 4)]);
    }

    #[test]
    fn runs_cross_bar_lines() {
        let p = phrase(&[(70, 12, 8)]);
        let back = from_pianoroll(&to_pianoroll(&p), "p", Genre::Jazz).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn polyphonic_grid_is_rejected() {
        let mut roll = PianoRoll::zeros();
        roll.set(1, 3, 0, true);
        roll.set(1, 3, 5, true);
        assert!(matches!(
            from_pianoroll(&roll, "x", Genre::Jazz),
            Err(CorpusError::Polyphonic { step: 19 })
        ));
    }

    #[test]
    fn binarize_rules() {
        let mut probs = vec![0.0; PianoRoll::LEN];
        // step 0: 60 beats 64
        probs[12] = 0.9;
        probs[16] = 0.8;
        // step 1: below threshold
        probs[48 + 12] = 0.4;
        // step 2: tie between 60 and 61
        probs[96 + 12] = 0.9;
        probs[96 + 13] = 0.9;
        let roll = binarize_monophonic(&probs, 0.5);
        assert_eq!(roll.frame(0).iter().position(|&c| c == 1), Some(12));
        assert_eq!(roll.frame(0).iter().filter(|&&c| c == 1).count(), 1);
        assert!(roll.frame(1).iter().all(|&c| c == 0));
        assert_eq!(roll.frame(2).iter().position(|&c| c == 1), Some(12));
        assert_eq!(roll.active_cells(), 2);
    }

    fn arb_phrase() -> impl Strategy<Value = NotePhrase> {
        proptest::collection::vec((48u8..=95, 0u8..2, 1u8..8), 0..24).prop_map(|raw| {
            let mut t = 0u8;
            let mut notes = Vec::new();
            for (pitch, gap, dur) in raw {
                let start = t + gap;
                if start as usize >= PHRASE_STEPS {
                    break;
                }
                let dur = dur.min(PHRASE_STEPS as u8 - start);
                notes.push(NoteEvent::new(pitch, start, dur));
                t = start + dur;
            }
            NotePhrase::new("g", Genre::Other, notes).unwrap()
        })
    }

    proptest! {
        #[test]
        fn round_trip_up_to_merging(p in arb_phrase()) {
            let back = from_pianoroll(&to_pianoroll(&p), "g", Genre::Other).unwrap();
            prop_assert_eq!(back, p.merged());
        }

        #[test]
        fn binarize_is_monophonic(probs in proptest::collection::vec(0.0f64..1.0, PianoRoll::LEN),
                                  th in 0.05f64..0.95) {
            let roll = binarize_monophonic(&probs, th);
            for t in 0..PHRASE_STEPS {
                prop_assert!(roll.frame(t).iter().filter(|&&c| c == 1).count() <= 1);
            }
            prop_assert!(from_pianoroll(&roll, "b", Genre::Jazz).is_ok());
        }
    }
}
