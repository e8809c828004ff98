//! Deterministic synthetic phrase corpora.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Genre, NoteEvent, NotePhrase, Split, LOWEST_PITCH, PHRASE_STEPS};

/// Sampling distributions for one synthetic genre.
///
/// Octaves are the four bands C3-B3, C4-B4, C5-B5, C6-B6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthProfile {
    pub name: String,
    pub genre: Genre,
    pub pitch_class_weights: [f64; 12],
    pub octave_weights: [f64; 4],
    /// (duration in steps, weight)
    pub duration_weights: Vec<(u8, f64)>,
    pub rest_probability: f64,
    /// Fraction of phrases, taken from the end, tagged as test.
    pub test_fraction: f64,
    /// Number of template phrases; 0 draws every phrase independently.
    #[serde(default)]
    pub motifs: usize,
    /// Probability that a templated note gets a freshly drawn pitch.
    #[serde(default)]
    pub variation: f64,
}

impl SynthProfile {
    /// C-major material spread over octaves II and III.
    pub fn jazz_major() -> Self {
        SynthProfile {
            name: "jazz-major".into(),
            genre: Genre::Jazz,
            pitch_class_weights: [3.0, 0.0, 2.0, 0.0, 2.5, 1.5, 0.0, 2.5, 0.0, 2.0, 0.0, 1.5],
            octave_weights: [0.1, 0.45, 0.4, 0.05],
            duration_weights: vec![
                (1, 1.0),
                (2, 4.0),
                (3, 1.0),
                (4, 3.0),
                (6, 0.8),
                (8, 1.0),
                (12, 0.3),
                (16, 0.2),
            ],
            rest_probability: 0.15,
            test_fraction: 0.1,
            motifs: 0,
            variation: 0.0,
        }
    }

    /// Union of C major and C minor (adds E♭, A♭, B♭), mostly in octave III.
    pub fn source_mixed() -> Self {
        SynthProfile {
            name: "source-mixed".into(),
            genre: Genre::Other,
            pitch_class_weights: [3.0, 0.0, 2.0, 1.5, 1.5, 1.5, 0.0, 2.5, 1.0, 1.2, 1.5, 1.0],
            octave_weights: [0.05, 0.2, 0.65, 0.1],
            duration_weights: vec![(2, 3.0), (4, 4.0), (6, 0.5), (8, 2.0), (16, 0.5)],
            rest_probability: 0.2,
            test_fraction: 0.1,
            motifs: 0,
            variation: 0.0,
        }
    }

    /// Major pentatonic on the white keys {C, D, E, G, A}, built from four
    /// recurring motifs.
    pub fn jazz_pentatonic() -> Self {
        SynthProfile {
            name: "jazz-pentatonic".into(),
            genre: Genre::Jazz,
            pitch_class_weights: [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
            octave_weights: [0.0, 1.0, 0.0, 0.0],
            duration_weights: vec![(4, 1.0), (8, 2.0), (16, 1.0)],
            rest_probability: 0.05,
            test_fraction: 0.2,
            motifs: 4,
            variation: 0.1,
        }
    }

    /// Black-key pentatonic {C♯, E♭, F♯, A♭, B♭}; disjoint from `jazz_pentatonic`.
    pub fn other_pentatonic() -> Self {
        SynthProfile {
            name: "other-pentatonic".into(),
            genre: Genre::Other,
            pitch_class_weights: [0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            octave_weights: [0.0, 1.0, 0.0, 0.0],
            duration_weights: vec![(4, 1.0), (8, 2.0), (16, 1.0)],
            rest_probability: 0.05,
            test_fraction: 0.2,
            motifs: 4,
            variation: 0.1,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        Self::presets().into_iter().find(|p| p.name == name)
    }

    pub fn presets() -> Vec<Self> {
        vec![
            Self::jazz_major(),
            Self::source_mixed(),
            Self::jazz_pentatonic(),
            Self::other_pentatonic(),
        ]
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::BadProfile(format!("{}: {m}", self.name)));
        let ok_weights = |w: &[f64]| w.iter().all(|&x| x >= 0.0 && x.is_finite()) && w.iter().sum::<f64>() > 0.0;
        if !ok_weights(&self.pitch_class_weights) {
            return bad("pitch-class weights must be non-negative with positive sum");
        }
        if !ok_weights(&self.octave_weights) {
            return bad("octave weights must be non-negative with positive sum");
        }
        let dw: Vec<f64> = self.duration_weights.iter().map(|d| d.1).collect();
        if !ok_weights(&dw) || self.duration_weights.iter().any(|d| d.0 == 0) {
            return bad("durations must be ≥ 1 step with non-negative weights of positive sum");
        }
        if !(0.0..1.0).contains(&self.rest_probability) {
            return bad("rest probability must lie in [0,1)");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test fraction must lie in [0,1)");
        }
        if !(0.0..=1.0).contains(&self.variation) {
            return bad("variation must lie in [0,1]");
        }
        Ok(())
    }
}

/// Draws `count` phrases from `profile`. A pure function of its arguments.
pub fn synth_corpus(profile: &SynthProfile, count: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if count == 0 {
        return Err(CorpusError::EmptyCount);
    }
    profile.validate()?;
    let pcs = WeightedIndex::new(profile.pitch_class_weights).expect("validated");
    let octaves = WeightedIndex::new(profile.octave_weights).expect("validated");
    let durs = WeightedIndex::new(profile.duration_weights.iter().map(|d| d.1)).expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_test = (count as f64 * profile.test_fraction).floor() as usize;
    let pitch = |rng: &mut ChaCha8Rng| (LOWEST_PITCH as usize + 12 * octaves.sample(rng) + pcs.sample(rng)) as u8;
    let draw = |rng: &mut ChaCha8Rng| loop {
        let mut notes = Vec::new();
        let mut t = 0usize;
        while t < PHRASE_STEPS {
            let dur = profile.duration_weights[durs.sample(rng)].0 as usize;
            let dur = dur.min(PHRASE_STEPS - t);
            if rng.random::<f64>() >= profile.rest_probability {
                notes.push(NoteEvent::new(pitch(rng), t as u8, dur as u8));
            }
            t += dur;
        }
        if !notes.is_empty() {
            break notes;
        }
    };
    let templates: Vec<Vec<NoteEvent>> = (0..profile.motifs).map(|_| draw(&mut rng)).collect();
    let mut corpus = Corpus::new(format!("synth:{} count={count} seed={seed}", profile.name));
    for i in 0..count {
        let notes = if templates.is_empty() {
            draw(&mut rng)
        } else {
            let t = &templates[rng.random_range(0..templates.len())];
            t.iter()
                .map(|n| {
                    if rng.random::<f64>() < profile.variation {
                        NoteEvent::new(pitch(&mut rng), n.start, n.duration)
                    } else {
                        *n
                    }
                })
                .collect()
        };
        let phrase = NotePhrase::new(format!("{}-{seed}-{i:05}", profile.name), profile.genre, notes)
            .expect("generator emits valid phrases");
        let split = if i >= count - n_test { Split::Test } else { Split::Train };
        corpus.push(phrase, split)?;
    }
    Ok(corpus)
}
