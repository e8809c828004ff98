mod common;

use std::fs;

use common::run_cli;
use melody_transfer::cli::{EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use melody_transfer::corpus::parse_jsonl;
use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};

fn smf_bytes(numerator: u8) -> Vec<u8> {
    let ev = |delta: u32, kind| TrackEvent { delta: u28::new(delta), kind };
    let note = |on: bool, key: u8| TrackEventKind::Midi {
        channel: u4::new(0),
        message: if on {
            MidiMessage::NoteOn { key: u7::new(key), vel: u7::new(90) }
        } else {
            MidiMessage::NoteOff { key: u7::new(key), vel: u7::new(0) }
        },
    };
    let mut track = vec![
        ev(0, TrackEventKind::Meta(MetaMessage::TimeSignature(numerator, 2, 24, 8))),
        ev(0, TrackEventKind::Meta(MetaMessage::Tempo(u24::new(500_000)))),
    ];
    for i in 0..32u8 {
        track.push(ev(0, note(true, 60 + i % 12)));
        track.push(ev(480, note(false, 60 + i % 12)));
    }
    track.push(ev(0, TrackEventKind::Meta(MetaMessage::EndOfTrack)));
    let smf = Smf { header: Header::new(Format::SingleTrack, Timing::Metrical(u15::new(480))), tracks: vec![track] };
    let mut out = Vec::new();
    smf.write_std(&mut out).unwrap();
    out
}

fn jsonl_line(id: &str, pitch: u8) -> String {
    format!(
        r#"{{"id":"{id}","genre":"jazz","notes":[{{"pitch":{pitch},"start":0,"duration":4}},{{"pitch":62,"start":8,"duration":8}}]}}"#
    )
}

#[test]
fn ingest_counts_phrases_and_bars() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let lines: Vec<String> = (0..10).map(|i| jsonl_line(&format!("p{i}"), 60)).collect();
    fs::write(&input, lines.join("\n") + "\n").unwrap();
    let output = dir.path().join("out.jsonl");
    let (code, out, err) = run_cli(&["ingest", "-o", output.to_str().unwrap(), input.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.trim(), "10 phrases, 40 bars");
    assert_eq!(parse_jsonl(&output).unwrap().len(), 10);
}

#[test]
fn ingest_bad_pitch_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(&input, format!("{}\n{}\n", jsonl_line("a", 60), jsonl_line("b", 30))).unwrap();
    let output = dir.path().join("out.jsonl");
    let (code, _, err) = run_cli(&["ingest", "-o", output.to_str().unwrap(), input.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("line 2"), "{err}");
    assert!(!output.exists());
}

#[test]
fn ingest_smf() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("tune.mid");
    let waltz = dir.path().join("waltz.mid");
    fs::write(&good, smf_bytes(4)).unwrap();
    fs::write(&waltz, smf_bytes(3)).unwrap();
    let output = dir.path().join("out.jsonl");
    let (code, out, err) = run_cli(&["ingest", "--format", "smf", "-o", output.to_str().unwrap(), good.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.trim(), "2 phrases, 8 bars");
    let (code, _, err) = run_cli(&["ingest", "--format", "smf", "-o", output.to_str().unwrap(), waltz.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("no 4/4 region"), "{err}");
}

#[test]
fn synth_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    assert_eq!(run_cli(&["synth", "--profile", "jazz-major", "--count", "40", "--seed", "1", "-o", a.to_str().unwrap()]).0, 0);
    assert_eq!(run_cli(&["synth", "--profile", "source-mixed", "--count", "30", "--seed", "2", "-o", b.to_str().unwrap()]).0, 0);
    let (code, out, err) = run_cli(&[
        "eval", "--target", a.to_str().unwrap(), "--generated", b.to_str().unwrap(), "--split", "all", "--grid-points", "200",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "feature,oa");
    assert_eq!(rows.len(), 11);
    assert!(rows[10].starts_with("average,"));

    let figs = dir.path().join("figs");
    let (code, out, err) = run_cli(&[
        "report", "-o", figs.to_str().unwrap(), "--normalize", &format!("target={}", a.display()), b.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.lines().count(), 4);
    let pitch = fs::read_to_string(figs.join("pitch_histogram.csv")).unwrap();
    assert_eq!(pitch.lines().next().unwrap(), "bin,pitch,note,octave,target,b");
    assert_eq!(pitch.lines().count(), 49);
    let sum: f64 = pitch.lines().skip(1).map(|l| l.split(',').nth(4).unwrap().parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() <= 1e-9);
    assert_eq!(fs::read_to_string(figs.join("pitch_class_histogram.csv")).unwrap().lines().count(), 13);
    assert!(fs::read_to_string(figs.join("pitch_histogram.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn report_on_empty_corpus_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, r#"{"id":"s","genre":"jazz","notes":[]}"#.to_string() + "\n").unwrap();
    let (code, _, err) = run_cli(&["report", "-o", dir.path().join("f").to_str().unwrap(), empty.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA, "{err}");
}

#[test]
fn train_generate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = common::write_corpora(dir.path(), 20, 40);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, common::tiny_config(dir.path(), &s, &t)).unwrap();
    let (code, out, err) = run_cli(&["train", "-c", cfg.to_str().unwrap(), "--set", "train.regime=fine-tune", "--set", "train.ratio=2"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("wrote"));
    let run = dir.path().join("out");
    for f in ["config.toml", "train_log.csv", "checkpoint.bin", "stage1.bin"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let resolved = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(resolved.contains("ratio = 2"));
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 + 2);

    let gen = dir.path().join("gen.jsonl");
    let ckpt = run.join("checkpoint.bin");
    let (code, out, err) = run_cli(&["generate", "--checkpoint", ckpt.to_str().unwrap(), "--count", "5", "-o", gen.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.trim(), "5 phrases, 20 bars");
    let (code, _, _) = run_cli(&["generate", "--checkpoint", ckpt.to_str().unwrap(), "--genre", "jazz", "-o", gen.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn train_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\n").unwrap();
    assert_eq!(run_cli(&["train", "-c", cfg.to_str().unwrap()]).0, EXIT_USAGE);
    let (s, t) = common::write_corpora(dir.path(), 20, 40);
    fs::write(&cfg, common::tiny_config(dir.path(), &s, &t)).unwrap();
    assert_eq!(run_cli(&["train", "-c", cfg.to_str().unwrap(), "--set", "train.ratio=9"]).0, EXIT_USAGE);
    let (code, _, err) = run_cli(&["train", "-c", cfg.to_str().unwrap(), "--set", "train.ratio=5"]);
    assert_eq!(code, EXIT_DATA, "{err}");
    assert!(err.contains("insufficient source"), "{err}");
    assert_eq!(run_cli(&["train", "-c", dir.path().join("missing.toml").to_str().unwrap()]).0, EXIT_DATA);
}

#[test]
fn non_finite_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = common::write_corpora(dir.path(), 20, 40);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, common::tiny_config(dir.path(), &s, &t)).unwrap();
    let (code, _, err) = run_cli(&[
        "train", "-c", cfg.to_str().unwrap(), "--set", "train.regime=baseline-target", "--set", "train.pretrain_lr=1e300",
        "--set", "train.clip_norm=0",
    ]);
    assert_eq!(code, EXIT_NUMERICAL, "{err}");
    assert!(err.contains("non-finite"), "{err}");
}

#[test]
fn gradcheck_exit_codes() {
    let (code, out, err) = run_cli(&["gradcheck"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("PASS tanh"));
    assert!(out.contains("elbo_objective"));
    let (code, out, err) = run_cli(&["gradcheck", "--fault", "sigmoid"]);
    assert_eq!(code, EXIT_NUMERICAL);
    assert!(out.contains("FAIL sigmoid"), "{out}");
    assert!(err.contains("worst"), "{err}");
}
