mod common;

use common::oracle::{compare, length_class};
use melody_transfer::corpus::{transpose_phrase, Genre, NoteEvent, NotePhrase};
use melody_transfer::features::{extract, quantize_length, FeatureOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn quantization_matches_scan() {
    for d in 1..=64 {
        assert_eq!(quantize_length(d), length_class(d), "duration {d}");
    }
}

#[test]
fn random_phrases_match_oracle() {
    for p in common::random_phrases(300, 5) {
        for rests in [false, true] {
            assert_eq!(compare(&p, rests), None);
        }
    }
}

#[test]
fn edge_phrases_match_oracle() {
    let full = NotePhrase::new("held", Genre::Jazz, vec![NoteEvent::new(60, 0, 64)]).unwrap();
    let steps: Vec<NoteEvent> = (0..64).map(|t| NoteEvent::new(48 + (t % 48) as u8, t as u8, 1)).collect();
    let run = NotePhrase::new("run", Genre::Jazz, steps).unwrap();
    let late = NotePhrase::new("late", Genre::Jazz, vec![NoteEvent::new(95, 63, 1)]).unwrap();
    for p in [NotePhrase::empty("e", Genre::Jazz), full, run, late] {
        assert_eq!(compare(&p, false), None);
        assert_eq!(compare(&p, true), None);
    }
}

proptest! {
    #[test]
    fn oracle_agrees(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_phrase(&mut rng, "p".into());
        prop_assert_eq!(compare(&p, false), None);
        prop_assert_eq!(compare(&p, true), None);
    }

    #[test]
    fn sums_match_counts(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_phrase(&mut rng, "p".into());
        let f = extract(&p, FeatureOptions::default());
        prop_assert_eq!(f.pch.iter().sum::<f64>(), f.nc as f64);
        prop_assert_eq!(f.pctm.iter().sum::<f64>(), f.nc.saturating_sub(1) as f64);
        prop_assert_eq!(f.nlh.iter().sum::<f64>(), f.nc as f64);
        prop_assert!(f.pc <= 48 && f.pr <= 47);
    }

    #[test]
    fn transposition_rotates_pch(seed in any::<u64>(), k in -3i32..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_phrase(&mut rng, "p".into());
        if let Ok(q) = transpose_phrase(&p, k) {
            let (a, b) = (extract(&p, FeatureOptions { rests: true }), extract(&q, FeatureOptions { rests: true }));
            for c in 0..12 {
                prop_assert_eq!(a.pch[c], b.pch[(c as i32 + k).rem_euclid(12) as usize]);
            }
            prop_assert_eq!((a.pc, a.pr, a.nc), (b.pc, b.pr, b.nc));
            prop_assert_eq!(a.nlh, b.nlh);
            prop_assert_eq!(a.nltm, b.nltm);
        }
    }
}
