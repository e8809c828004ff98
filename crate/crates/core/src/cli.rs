//! The `melody-transfer` command line.
//!
//! Exit codes: 0 success, 1 usage or invalid config, 2 data error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::corpus::{parse_jsonl, parse_smf, synth_corpus, Corpus, Genre, SlicePolicy, SmfOptions, Split, SynthProfile};
use crate::experiment::{
    execute_run, load_corpus, run_experiment, train_classifier_into, train_into, ExperimentError, RunConfig,
};
use crate::features::FeatureOptions;
use crate::gradcheck;
use crate::model::{GenreLabel, Vae};
use crate::oa::{evaluate_sets, EvalOptions, DEFAULT_GRID_POINTS};
use crate::report::{histograms, write_histograms, ReportError};
use crate::tensor::{read_checkpoint, set_backward_fault, OpKind};
use crate::train::{generate, Regime, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match &e {
            _ if e.is_numerical() => CliError::Numerical(e.to_string()),
            ExperimentError::Config(_) | ExperimentError::Train(TrainError::Config(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        ExperimentError::from(e).into()
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "melody-transfer", version, about = "Jazz melody generation with transfer learning, and OA evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Jsonl,
    Smf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GenreArg {
    Jazz,
    Other,
}

impl From<GenreArg> for Genre {
    fn from(g: GenreArg) -> Self {
        match g {
            GenreArg::Jazz => Genre::Jazz,
            GenreArg::Other => Genre::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate JSONL or Standard MIDI files and write one JSONL corpus.
    Ingest {
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
        #[arg(long, short)]
        output: PathBuf,
        /// Genre of SMF phrases.
        #[arg(long, value_enum, default_value = "jazz")]
        genre: GenreArg,
        /// Melody track of SMF input.
        #[arg(long, default_value_t = 0)]
        track: usize,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        transpose: i32,
        /// Split assigned to SMF phrases.
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Four-bar windows advanced one bar at a time.
        #[arg(long)]
        sliding: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Draw a synthetic corpus from a named profile.
    Synth {
        #[arg(long, default_value = "jazz-major")]
        profile: String,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Train the regime in `[train]` of the config.
    Train {
        #[arg(long, short)]
        config: PathBuf,
        /// Override a config field, e.g. `--set train.ratio=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also generate and evaluate, as one experiment run.
        #[arg(long)]
        evaluate: bool,
    },
    /// Sample phrases from a trained checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Genre condition of a multitask model (defaults to jazz).
        #[arg(long, value_enum)]
        genre: Option<GenreArg>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Overlapping-area evaluation of a generated corpus against a target.
    Eval {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// Target split used as reference.
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        rests: bool,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run every configured regime and ratio and write the OA grids.
    Experiment {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Pitch and pitch-class histograms (CSV + SVG) of one or more corpora.
    Report {
        #[arg(long, short)]
        output_dir: PathBuf,
        /// Scale each histogram to sum 1.
        #[arg(long)]
        normalize: bool,
        /// Corpora as `PATH` or `LABEL=PATH`.
        #[arg(required = true)]
        corpora: Vec<String>,
    },
    /// Finite-difference check of every op and both training objectives.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the backward rule of one op (mutation check).
        #[arg(long, value_name = "OP")]
        fault: Option<String>,
    },
}

fn split_phrases(corpus: &Corpus, split: SplitArg) -> Vec<&crate::corpus::NotePhrase> {
    match split {
        SplitArg::Train => corpus.train(),
        SplitArg::Test => corpus.test(),
        SplitArg::All => corpus.phrases().collect(),
    }
}

fn cmd_ingest(
    format: Format,
    inputs: &[PathBuf],
    output: &Path,
    smf: SmfOptions,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut merged = Corpus::new(inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" + "));
    for input in inputs {
        let corpus = match format {
            Format::Jsonl => parse_jsonl(input).map_err(|e| data(format!("{}: {e}", input.display())))?,
            Format::Smf => {
                let import = parse_smf(input, &smf).map_err(|e| data(format!("{}: {e}", input.display())))?;
                if import.dropped_out_of_range > 0 {
                    let _ = writeln!(out, "{}: dropped {} out-of-range notes", input.display(), import.dropped_out_of_range);
                }
                import.corpus
            }
        };
        for e in corpus.entries() {
            merged.push(e.phrase.clone(), e.split).map_err(data)?;
        }
    }
    merged.write_jsonl(output).map_err(|e| data(format!("{}: {e}", output.display())))?;
    let _ = writeln!(out, "{} phrases, {} bars", merged.len(), merged.bar_count());
    Ok(())
}

fn cmd_synth(profile: &str, count: usize, seed: u64, output: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let p = SynthProfile::preset(profile).ok_or_else(|| {
        let names: Vec<String> = SynthProfile::presets().into_iter().map(|p| p.name).collect();
        CliError::Usage(format!("unknown profile {profile:?}; known: {}", names.join(", ")))
    })?;
    let corpus = synth_corpus(&p, count, seed).map_err(data)?;
    corpus.write_jsonl(output).map_err(|e| data(format!("{}: {e}", output.display())))?;
    let _ = writeln!(out, "{} phrases, {} bars", corpus.len(), corpus.bar_count());
    Ok(())
}

fn cmd_train(config: &Path, overrides: &[String], evaluate: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, overrides)?;
    let run = cfg.for_run(cfg.train.regime, cfg.train.ratio);
    run.train.validate()?;
    let source = load_corpus(&cfg.corpus.source)?;
    let target = load_corpus(&cfg.corpus.target)?;
    let dir = &cfg.output_dir;
    let clf = if run.train.regime == Regime::Multitask {
        let c = train_classifier_into(&run, &source, &target, dir)?;
        let _ = writeln!(out, "classifier train accuracy {:.4}", c.train_accuracy);
        Some(c.classifier)
    } else {
        None
    };
    if evaluate {
        let summary = execute_run(&run, &source, &target, clf.as_ref(), dir)?;
        let _ = write!(out, "{}", summary.report.to_csv());
    } else {
        let outcome = train_into(&run, &source, &target, clf.as_ref(), dir)?;
        if let Some(last) = outcome.log.records.last() {
            let _ = writeln!(out, "final l_recon {:.6} l_lat {:.6}", last.l_recon, last.l_lat);
        }
    }
    let _ = writeln!(out, "wrote {}", dir.display());
    Ok(())
}

fn cmd_generate(
    checkpoint: &Path,
    count: usize,
    seed: u64,
    genre: Option<GenreArg>,
    output: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let ckpt = read_checkpoint(checkpoint).map_err(|e| data(format!("{}: {e}", checkpoint.display())))?;
    let vae = Vae::from_checkpoint(&ckpt).map_err(data)?;
    let y = match (vae.config.multitask, genre) {
        (true, g) => Some(GenreLabel::from(Genre::from(g.unwrap_or(GenreArg::Jazz)))),
        (false, None) => None,
        (false, Some(_)) => return Err(CliError::Usage("--genre needs a multitask checkpoint".into())),
    };
    let corpus = generate(&vae, count, seed, y)?;
    corpus.write_jsonl(output).map_err(|e| data(format!("{}: {e}", output.display())))?;
    let _ = writeln!(out, "{} phrases, {} bars", corpus.len(), corpus.bar_count());
    Ok(())
}

fn cmd_eval(
    target: &Path,
    generated: &Path,
    split: SplitArg,
    opts: EvalOptions,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let t = load_corpus(target)?;
    let g = load_corpus(generated)?;
    let reference = split_phrases(&t, split);
    let gen: Vec<_> = g.phrases().collect();
    let report = evaluate_sets(&reference, &gen, &opts).map_err(data)?;
    let csv = report.to_csv();
    match output {
        Some(path) => std::fs::write(path, csv).map_err(|e| data(format!("{}: {e}", path.display())))?,
        None => {
            let _ = write!(out, "{csv}");
        }
    }
    Ok(())
}

fn cmd_experiment(config: &Path, overrides: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, overrides)?;
    let outcome = run_experiment(&cfg)?;
    for run in &outcome.runs {
        let _ = writeln!(out, "{}: average OA {:.4}", run.dir.display(), run.report.average);
    }
    for (_, path) in &outcome.grids {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    let _ = writeln!(out, "wrote {}", outcome.summary.display());
    for path in &outcome.figures {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok(())
}

fn cmd_report(output_dir: &Path, normalize: bool, specs: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let mut corpora = Vec::new();
    for spec in specs {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        corpora.push((label, load_corpus(&path)?));
    }
    let named: Vec<(String, Vec<_>)> = corpora.iter().map(|(l, c)| (l.clone(), c.phrases().collect())).collect();
    let report = histograms(&named, normalize)?;
    for path in write_histograms(output_dir, &report)? {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, fault: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let kind = match fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            let names: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Usage(format!("unknown op {name:?}; known: {}", names.join(", ")))
        })?),
        None => None,
    };
    set_backward_fault(kind);
    let result = gradcheck::run_all(seed);
    set_backward_fault(None);
    let report = result.map_err(data)?;
    let _ = write!(out, "{report}");
    if report.passed() {
        let _ = writeln!(out, "all {} checks passed", report.entries.len());
        return Ok(());
    }
    let worst = report.worst().expect("a failing report has entries");
    Err(CliError::Numerical(format!(
        "gradient check failed; worst {} at {} (relative error {:.3e}, tolerance {:.0e})",
        worst.name, worst.worst, worst.max_rel_err, worst.tolerance
    )))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { format, output, genre, track, transpose, split, sliding, inputs } => {
            let smf = SmfOptions {
                track_index: track,
                transpose,
                genre: genre.into(),
                policy: if sliding { SlicePolicy::Sliding } else { SlicePolicy::NonOverlapping },
                split: match split {
                    SplitArg::Test => Split::Test,
                    _ => Split::Train,
                },
            };
            cmd_ingest(format, &inputs, &output, smf, out)
        }
        Command::Synth { profile, count, seed, output } => cmd_synth(&profile, count, seed, &output, out),
        Command::Train { config, overrides, evaluate } => cmd_train(&config, &overrides, evaluate, out),
        Command::Generate { checkpoint, count, seed, genre, output } => {
            cmd_generate(&checkpoint, count, seed, genre, &output, out)
        }
        Command::Eval { target, generated, split, rests, grid_points, output } => {
            let opts = EvalOptions { features: FeatureOptions { rests }, grid_points };
            cmd_eval(&target, &generated, split, opts, output.as_deref(), out)
        }
        Command::Experiment { config, overrides } => cmd_experiment(&config, &overrides, out),
        Command::Report { output_dir, normalize, corpora } => cmd_report(&output_dir, normalize, &corpora, out),
        Command::Gradcheck { seed, fault } => cmd_gradcheck(seed, fault.as_deref(), out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            if code == EXIT_OK {
                let _ = write!(out, "{}", e.render());
            } else {
                let _ = write!(err, "{}", e.render());
            }
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
