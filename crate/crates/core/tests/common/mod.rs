#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};

use melody_transfer::corpus::{synth_corpus, Genre, NoteEvent, NotePhrase, SynthProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random monophonic phrase: notes and gaps of random lengths until step 64.
pub fn random_phrase(rng: &mut ChaCha8Rng, id: String) -> NotePhrase {
    let mut notes = Vec::new();
    let mut t = rng.random_range(0..8u32);
    while t < 64 {
        let dur = rng.random_range(1..=20u32).min(64 - t);
        let pitch = rng.random_range(48..=95u8);
        notes.push(NoteEvent::new(pitch, t as u8, dur as u8));
        t += dur;
        if rng.random_bool(0.4) {
            t += rng.random_range(1..10u32);
        }
    }
    if rng.random_bool(0.05) {
        notes.clear();
    }
    NotePhrase::new(id, Genre::Jazz, notes).expect("generator keeps phrases valid")
}

pub fn random_phrases(n: usize, seed: u64) -> Vec<NotePhrase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_phrase(&mut rng, format!("r{i}"))).collect()
}

/// Writes source and target synthetic corpora into `dir` and returns their paths.
pub fn write_corpora(dir: &Path, target: usize, source: usize) -> (PathBuf, PathBuf) {
    let s = dir.join("source.jsonl");
    let t = dir.join("target.jsonl");
    synth_corpus(&SynthProfile::other_pentatonic(), source, 2).unwrap().write_jsonl(&s).unwrap();
    synth_corpus(&SynthProfile::jazz_pentatonic(), target, 1).unwrap().write_jsonl(&t).unwrap();
    (s, t)
}

/// A config small enough to run all regimes over R = 1..6 in seconds.
pub fn tiny_config(dir: &Path, source: &Path, target: &Path) -> String {
    format!(
        r#"output_dir = "{out}"
seed = 11

[corpus]
source = "{s}"
target = "{t}"

[model]
hidden = 3
dense = [6]
latent = 2

[train]
stage1_epochs = 2
stage2_epochs = 2
batch_size = 16

[classifier]
hidden = 3
dense = [4]

[classifier_train]
epochs = 1

[experiment]
generate_count = 12

[eval]
grid_points = 128
"#,
        out = dir.join("out").display(),
        s = source.display(),
        t = target.display(),
    )
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = melody_transfer::cli::run(std::iter::once("melody-transfer").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
