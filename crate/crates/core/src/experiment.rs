//! Config-driven runs: one regime per output directory, plus the R-grid
//! experiment that assembles OA tables across regimes and ratios.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_jsonl, Corpus, CorpusError, PHRASE_STEPS};
use crate::features::{Feature, FeatureOptions};
use crate::model::{ClassifierConfig, GenreClassifier, GenreLabel, ModelConfig, ModelError};
use crate::oa::{evaluate_sets, EvalOptions, OaError, OaReport, DEFAULT_GRID_POINTS, MIN_GRID_POINTS};
use crate::report::{histograms, write_histograms, ReportError};
use crate::tensor::{write_checkpoint, CheckpointError};
use crate::train::{
    generate, train_classifier, train_regime_with_hook, ClassifierTrainConfig, Regime, TrainConfig, TrainError,
    TrainOutcome,
};

pub const CONFIG_FILE: &str = "config.toml";
/// Seed offset between regimes; the ratio R is added on top.
pub const REGIME_SEED_STRIDE: u64 = 1000;
/// Seed offset of the genre classifier (the slot after the last regime).
pub const CLASSIFIER_SEED_OFFSET: u64 = 4 * REGIME_SEED_STRIDE;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{run}: evaluation failed: {source}")]
    Oa {
        run: String,
        #[source]
        source: OaError,
    },
}

impl ExperimentError {
    pub fn is_numerical(&self) -> bool {
        match self {
            ExperimentError::Train(e) => e.is_numerical(),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError {
    let path = path.to_path_buf();
    move |source| ExperimentError::Io { path, source }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, body).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub source: PathBuf,
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub regimes: Vec<Regime>,
    pub ratios: Vec<u32>,
    /// Phrases generated per run for evaluation.
    pub generate_count: usize,
    /// Extra checkpoint every K epochs; 0 keeps stage boundaries only.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            regimes: Regime::ALL.to_vec(),
            ratios: (1..=6).collect(),
            generate_count: 200,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Rest classes in the note-length features.
    pub rests: bool,
    /// L1-normalized histogram figures (never applied to OA).
    pub normalize: bool,
    pub grid_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { rests: false, normalize: false, grid_points: DEFAULT_GRID_POINTS }
    }
}

impl EvalConfig {
    pub fn options(&self) -> EvalOptions {
        EvalOptions { features: FeatureOptions { rests: self.rests }, grid_points: self.grid_points }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// The single document driving `train` and `experiment`.
///
/// Seeds inside `model`, `train`, `classifier` and `classifier_train` are
/// replaced by values derived from `seed` (see [`run_seed`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub corpus: CorpusPaths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub classifier_train: ClassifierTrainConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn regime_index(regime: Regime) -> u64 {
    Regime::ALL.iter().position(|r| *r == regime).expect("listed regime") as u64
}

/// Seed of one run: `master + 1000·regime_index + R` (R = 0 for baselines),
/// regime_index following [`Regime::ALL`].
pub fn run_seed(master: u64, regime: Regime, ratio: Option<u32>) -> u64 {
    master
        .wrapping_add(REGIME_SEED_STRIDE * regime_index(regime))
        .wrapping_add(ratio.unwrap_or(0) as u64)
}

/// Sets `path` (dotted) in `table` to `value`, read as a TOML value when it
/// parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ExperimentError> {
    let bad = |m: String| ExperimentError::Config(m);
    let (key, raw) = assignment.split_once('=').ok_or_else(|| bad(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad(format!("bad override key {key:?}")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    if value.is_table() {
        return Err(bad(format!("override {key:?} must be a scalar or array")));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| bad(format!("override {key:?}: {p:?} is not a table")))?;
    }
    if cur.get(*last).is_some_and(toml::Value::is_table) {
        return Err(bad(format!("override {key:?} names a table, not a field")));
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        self.model.validate()?;
        if self.model.frames != PHRASE_STEPS || self.classifier.frames != PHRASE_STEPS {
            return bad("model and classifier frames must be 64");
        }
        let mut probe = self.train.clone();
        if probe.regime.uses_ratio() && probe.ratio.is_none() {
            probe.ratio = Some(1);
        }
        probe.validate()?;
        let e = &self.experiment;
        if e.regimes.is_empty() {
            return bad("experiment.regimes is empty");
        }
        if e.regimes.iter().any(|r| r.uses_ratio()) && e.ratios.is_empty() {
            return bad("experiment.ratios is empty");
        }
        if e.ratios.iter().any(|r| !(1..=6).contains(r)) {
            return bad("experiment.ratios must lie in 1..=6");
        }
        let mut seen = e.ratios.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != e.ratios.len() {
            return bad("experiment.ratios has duplicates");
        }
        if e.generate_count < 2 {
            return bad("experiment.generate_count must be ≥ 2");
        }
        if self.eval.grid_points < MIN_GRID_POINTS {
            return bad("eval.grid_points below the minimum grid size");
        }
        if self.classifier_train.epochs == 0 && e.regimes.contains(&Regime::Multitask) {
            return bad("multitask runs need classifier_train.epochs ≥ 1");
        }
        Ok(())
    }

    /// The config of one run, with derived seeds and the regime and ratio set.
    pub fn for_run(&self, regime: Regime, ratio: Option<u32>) -> RunConfig {
        let seed = run_seed(self.seed, regime, ratio);
        let mut cfg = self.clone();
        cfg.train.regime = regime;
        cfg.train.ratio = if regime.uses_ratio() { ratio } else { None };
        cfg.train.shuffle_seed = seed;
        cfg.train.noise_seed = seed;
        cfg.train.sample_seed = seed;
        cfg.model.init_seed = seed;
        cfg.model.multitask = regime == Regime::Multitask;
        cfg.experiment.regimes = vec![regime];
        cfg.experiment.ratios = ratio.into_iter().collect();
        cfg.classifier.init_seed = self.seed.wrapping_add(CLASSIFIER_SEED_OFFSET);
        cfg.classifier_train.seed = self.seed.wrapping_add(CLASSIFIER_SEED_OFFSET);
        cfg
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus, ExperimentError> {
    parse_jsonl(path).map_err(|source| ExperimentError::Corpus { path: path.to_path_buf(), source })
}

/// Directory name of a run below the output directory.
pub fn run_name(regime: Regime, ratio: Option<u32>) -> String {
    match ratio {
        Some(r) if regime.uses_ratio() => format!("{}/R{r}", regime.name()),
        _ => regime.name().to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierSummary {
    pub classifier: GenreClassifier,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Trains the genre classifier and writes `classifier.bin` and `classifier.csv` into `dir`.
pub fn train_classifier_into(
    cfg: &RunConfig,
    source: &Corpus,
    target: &Corpus,
    dir: &Path,
) -> Result<ClassifierSummary, ExperimentError> {
    let mut model = cfg.classifier.clone();
    let mut train = cfg.classifier_train.clone();
    model.init_seed = cfg.seed.wrapping_add(CLASSIFIER_SEED_OFFSET);
    train.seed = model.init_seed;
    let out = train_classifier(source, target, &model, &train)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let extra = serde_json::json!({ "train": train, "train_accuracy": out.train_accuracy, "test_accuracy": out.test_accuracy });
    let path = dir.join("classifier.bin");
    write_checkpoint(&path, &out.classifier.to_checkpoint(extra))
        .map_err(|source| ExperimentError::Checkpoint { path: path.clone(), source })?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in out.losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l:.9}");
    }
    let _ = writeln!(csv, "# train_accuracy={:.6}", out.train_accuracy);
    if let Some(a) = out.test_accuracy {
        let _ = writeln!(csv, "# test_accuracy={a:.6}");
    }
    write(&dir.join("classifier.csv"), csv)?;
    Ok(ClassifierSummary { classifier: out.classifier, train_accuracy: out.train_accuracy, test_accuracy: out.test_accuracy })
}

/// Trains `run.train.regime` and writes `config.toml`, `train_log.csv`,
/// `checkpoint.bin` (final), `stage1.bin` (fine-tuning) and any periodic
/// `epoch-S-E.bin` checkpoints into `dir`.
pub fn train_into(
    run: &RunConfig,
    source: &Corpus,
    target: &Corpus,
    classifier: Option<&GenreClassifier>,
    dir: &Path,
) -> Result<TrainOutcome, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(&dir.join(CONFIG_FILE), run.to_toml())?;
    let meta = |stage: u32, epoch: Option<usize>| {
        serde_json::json!({
            "regime": run.train.regime,
            "ratio": run.train.ratio,
            "seed": run.train.shuffle_seed,
            "stage": stage,
            "epoch": epoch,
        })
    };
    let every = run.experiment.checkpoint_every;
    let mut hook = |vae: &crate::model::Vae, rec: &crate::train::EpochRecord| -> Result<(), TrainError> {
        if every > 0 && (rec.epoch + 1).is_multiple_of(every) {
            let path = dir.join(format!("epoch-{}-{:04}.bin", rec.stage, rec.epoch + 1));
            write_checkpoint(&path, &vae.to_checkpoint(meta(rec.stage, Some(rec.epoch + 1))))
                .map_err(|e| TrainError::Hook(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    };
    let out = train_regime_with_hook(&run.train, &run.model, source, target, classifier, &mut hook)?;
    write(&dir.join("train_log.csv"), out.log.to_csv())?;
    let ckpt = |path: PathBuf, vae: &crate::model::Vae, stage: u32| {
        write_checkpoint(&path, &vae.to_checkpoint(meta(stage, None)))
            .map_err(|source| ExperimentError::Checkpoint { path, source })
    };
    if let Some(s1) = &out.stage1 {
        ckpt(dir.join("stage1.bin"), s1, 1)?;
    }
    let last_stage = if out.stage1.is_some() { 2 } else { 1 };
    ckpt(dir.join("checkpoint.bin"), &out.vae, last_stage)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub regime: Regime,
    pub ratio: Option<u32>,
    pub dir: PathBuf,
    pub report: OaReport,
    pub generated: Corpus,
}

/// Trains, generates and evaluates one run inside `dir`.
pub fn execute_run(
    run: &RunConfig,
    source: &Corpus,
    target: &Corpus,
    classifier: Option<&GenreClassifier>,
    dir: &Path,
) -> Result<RunSummary, ExperimentError> {
    let regime = run.train.regime;
    let out = train_into(run, source, target, classifier, dir)?;
    let y = (regime == Regime::Multitask).then_some(GenreLabel::Jazz);
    let generated = generate(&out.vae, run.experiment.generate_count, run.train.shuffle_seed, y)?;
    let path = dir.join("generated.jsonl");
    generated.write_jsonl(&path).map_err(|source| ExperimentError::Corpus { path, source })?;
    let gen: Vec<_> = generated.phrases().collect();
    let name = run_name(regime, run.train.ratio);
    let mut report = evaluate_sets(&target.train(), &gen, &run.eval.options())
        .map_err(|source| ExperimentError::Oa { run: name.clone(), source })?;
    report.config.insert("run".into(), name);
    report.config.insert("seed".into(), run.train.shuffle_seed.to_string());
    write(&dir.join("oa.csv"), report.to_csv())?;
    Ok(RunSummary { regime, ratio: run.train.ratio, dir: dir.to_path_buf(), report, generated })
}

/// OA values per column, for the rows of [`OaReport::labels`].
fn report_values(r: &OaReport) -> Vec<f64> {
    Feature::ALL.iter().map(|f| r.get(*f)).chain([r.average]).collect()
}

/// `feature,<col...>,best`: one row per feature plus `average`; `best` names
/// the column holding the row maximum (first on ties).
pub fn grid_csv(columns: &[(String, &OaReport)]) -> String {
    let mut out = String::from("feature");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",best\n");
    let values: Vec<Vec<f64>> = columns.iter().map(|c| report_values(c.1)).collect();
    for (row, label) in OaReport::labels().into_iter().enumerate() {
        out.push_str(label);
        let mut best = 0;
        for (c, v) in values.iter().enumerate() {
            let _ = write!(out, ",{:.6}", v[row]);
            if v[row] > values[best][row] {
                best = c;
            }
        }
        let _ = writeln!(out, ",{}", columns.get(best).map(|c| c.0.as_str()).unwrap_or(""));
    }
    out
}

fn summary_label(regime: Regime, ratio: Option<u32>) -> String {
    match (regime, ratio) {
        (Regime::BaselineSource, _) => "Baseline 1 (source)".into(),
        (Regime::BaselineTarget, _) => "Baseline 2 (target)".into(),
        (Regime::FineTune, r) => format!("Method 1 (R={})", r.unwrap_or(0)),
        (Regime::Multitask, r) => format!("Method 2 (R={})", r.unwrap_or(0)),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunSummary>,
    /// `(regime, path)` of every R-grid CSV.
    pub grids: Vec<(Regime, PathBuf)>,
    pub summary: PathBuf,
    pub figures: Vec<PathBuf>,
    pub classifier: Option<ClassifierSummary>,
}

/// Runs every configured regime (each ratio regime at every R), then writes
/// `<regime>_grid.csv` per ratio regime and `summary.csv` comparing the
/// baselines with each method at its best average R, and histogram figures
/// of both corpora and each of those runs into `figures/`.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let source = load_corpus(&cfg.corpus.source)?;
    let target = load_corpus(&cfg.corpus.target)?;
    let root = &cfg.output_dir;
    fs::create_dir_all(root).map_err(io_err(root))?;
    write(&root.join(CONFIG_FILE), cfg.to_toml())?;
    let classifier = if cfg.experiment.regimes.contains(&Regime::Multitask) {
        Some(train_classifier_into(cfg, &source, &target, root)?)
    } else {
        None
    };
    let mut runs = Vec::new();
    let mut grids = Vec::new();
    let mut summary: Vec<(String, usize)> = Vec::new();
    for &regime in &cfg.experiment.regimes {
        let ratios: Vec<Option<u32>> =
            if regime.uses_ratio() { cfg.experiment.ratios.iter().map(|r| Some(*r)).collect() } else { vec![None] };
        let first = runs.len();
        for ratio in ratios {
            let run = cfg.for_run(regime, ratio);
            let dir = root.join(run_name(regime, ratio));
            let clf = classifier.as_ref().map(|c| &c.classifier);
            runs.push(execute_run(&run, &source, &target, clf, &dir)?);
        }
        let block = &runs[first..];
        if regime.uses_ratio() {
            let columns: Vec<(String, &OaReport)> =
                block.iter().map(|r| (format!("R={}", r.ratio.unwrap_or(0)), &r.report)).collect();
            let path = root.join(format!("{}_grid.csv", regime.name()));
            write(&path, grid_csv(&columns))?;
            grids.push((regime, path));
        }
        let best = (first..runs.len())
            .reduce(|a, b| if runs[b].report.average > runs[a].report.average { b } else { a })
            .expect("at least one run per regime");
        summary.push((summary_label(regime, runs[best].ratio), best));
    }
    let columns: Vec<(String, &OaReport)> = summary.iter().map(|(l, i)| (l.clone(), &runs[*i].report)).collect();
    let summary_path = root.join("summary.csv");
    write(&summary_path, grid_csv(&columns))?;
    let mut named = vec![("target".to_string(), target.train()), ("source".to_string(), source.train())];
    for (label, i) in &summary {
        named.push((label.clone(), runs[*i].generated.phrases().collect()));
    }
    // silent generations have nothing to plot
    named.retain(|(_, p)| p.iter().any(|p| !p.notes().is_empty()));
    let figures = write_histograms(&root.join("figures"), &histograms(&named, cfg.eval.normalize)?)?;
    Ok(ExperimentOutcome { runs, grids, summary: summary_path, figures, classifier })
}
