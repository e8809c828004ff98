//! Training regimes (two baselines, fine-tuning, multitask), the genre
//! classifier, and sampling from a trained model.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{binarize_monophonic, from_pianoroll, to_pianoroll};
use crate::corpus::{sample_ratio, Corpus, CorpusError, Genre, NotePhrase, Split, PHRASE_STEPS};
use crate::model::{
    batch_tensor, standard_normal, Batch, ClassifierConfig, GenreClassifier, GenreLabel, LossWeights, ModelConfig,
    ModelError, Vae,
};
use crate::tensor::{clip_global_norm, AdamConfig, AdamState, Graph, Tensor};

/// Learning rate used for pre-training and for both baselines.
pub const PRETRAIN_LR: f64 = 1e-3;
pub const GENERATION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}: empty corpus")]
    EmptyCorpus(&'static str),
    #[error("regime {0} needs a source-to-target ratio R")]
    MissingRatio(Regime),
    #[error("non-finite {what} at stage {stage}, epoch {epoch}")]
    NonFinite { what: &'static str, stage: u32, epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch hook failed: {0}")]
    Hook(String),
}

/// Called after every epoch with the current model and its log record.
pub type EpochHook<'a> = dyn FnMut(&Vae, &EpochRecord) -> Result<(), TrainError> + 'a;

fn no_hook(_: &Vae, _: &EpochRecord) -> Result<(), TrainError> {
    Ok(())
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainError::NonFinite { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Baseline 1: source corpus only.
    BaselineSource,
    /// Baseline 2: target corpus only.
    BaselineTarget,
    /// Method 1: pre-train on sampled source, fine-tune on target.
    FineTune,
    /// Method 2: joint training with genre labels and a frozen classifier.
    Multitask,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::BaselineSource, Regime::BaselineTarget, Regime::FineTune, Regime::Multitask];

    pub fn name(self) -> &'static str {
        match self {
            Regime::BaselineSource => "baseline-source",
            Regime::BaselineTarget => "baseline-target",
            Regime::FineTune => "fine-tune",
            Regime::Multitask => "multitask",
        }
    }

    /// Whether the regime subsamples the source corpus with a ratio R.
    pub fn uses_ratio(self) -> bool {
        matches!(self, Regime::FineTune | Regime::Multitask)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub ratio: Option<u32>,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub beta: f64,
    pub lambda_genre: f64,
    pub shuffle_seed: u64,
    pub noise_seed: u64,
    pub sample_seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Epochs over which β ramps linearly from 0; 0 disables.
    pub kl_warmup_epochs: usize,
    pub reset_adam_between_stages: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::FineTune,
            ratio: Some(1),
            stage1_epochs: 100,
            stage2_epochs: 120,
            batch_size: 32,
            pretrain_lr: PRETRAIN_LR,
            beta: 1.0,
            lambda_genre: 1.0,
            shuffle_seed: 0,
            noise_seed: 0,
            sample_seed: 0,
            clip_norm: 5.0,
            kl_warmup_epochs: 0,
            reset_adam_between_stages: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if !(self.pretrain_lr > 0.0 && self.pretrain_lr.is_finite()) {
            return bad("pretrain_lr must be positive");
        }
        if !(self.beta >= 0.0 && self.lambda_genre >= 0.0 && self.clip_norm >= 0.0) {
            return bad("beta, lambda_genre and clip_norm must be non-negative");
        }
        match (self.regime.uses_ratio(), self.ratio) {
            (true, None) => Err(TrainError::MissingRatio(self.regime)),
            (true, Some(r)) if !(1..=6).contains(&r) => bad("ratio R must lie in 1..=6"),
            _ => Ok(()),
        }
    }
}

/// Learning rate of fine-tuning epoch `t`.
pub fn lr_schedule_finetune(t: usize) -> f64 {
    if t < 40 {
        1e-5
    } else if t < 80 {
        1e-7
    } else {
        1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: u32,
    /// Epoch index within the stage, from 0.
    pub epoch: usize,
    pub lr: f64,
    pub l_recon: f64,
    pub l_lat: f64,
    pub l_genre: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,stage,lr,l_recon,l_lat,l_genre,seconds";

    pub fn stage(&self, stage: u32) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    /// CSV with the header above; `l_genre` is empty when absent.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.records {
            let genre = r.l_genre.map(|g| format!("{g:.9}")).unwrap_or_default();
            writeln!(out, "{},{},{:e},{:.9},{:.9},{},{:.3}", r.epoch, r.stage, r.lr, r.l_recon, r.l_lat, genre, r.seconds)
                .unwrap();
        }
        out
    }
}

/// A trained VAE with its history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub vae: Vae,
    pub log: TrainLog,
    pub adam: AdamState,
    /// Model at the end of pre-training (fine-tuning only).
    pub stage1: Option<Vae>,
}

/// Flattened pianoroll of each phrase.
pub fn phrase_rows(phrases: &[&NotePhrase]) -> Vec<Vec<f64>> {
    phrases.iter().map(|p| to_pianoroll(p).to_f64()).collect()
}

fn check_frames(model: &ModelConfig) -> Result<(), TrainError> {
    if model.frames != PHRASE_STEPS {
        return Err(TrainError::Config(format!("training needs {PHRASE_STEPS} frames, model has {}", model.frames)));
    }
    Ok(())
}

struct Stage<'a> {
    index: u32,
    epochs: usize,
    lr: &'a dyn Fn(usize) -> f64,
    warmup: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    vae: &mut Vae,
    adam: &mut AdamState,
    data: &[(Vec<f64>, GenreLabel)],
    stage: Stage<'_>,
    cfg: &TrainConfig,
    classifier: Option<&GenreClassifier>,
    log: &mut TrainLog,
    hook: &mut EpochHook<'_>,
) -> Result<(), TrainError> {
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed.wrapping_add(stage.index as u64));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed.wrapping_add(stage.index as u64));
    let latent = vae.config.latent;
    let width = vae.config.input_len();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..stage.epochs {
        let started = Instant::now();
        let lr = (stage.lr)(epoch);
        let beta = if stage.warmup > 0 {
            cfg.beta * (epoch as f64 / stage.warmup as f64).min(1.0)
        } else {
            cfg.beta
        };
        let weights = LossWeights { beta, lambda_genre: cfg.lambda_genre };
        order.shuffle(&mut shuffle_rng);
        let (mut recon, mut kl, mut genre) = (0.0, 0.0, 0.0);
        let non_finite = |what| TrainError::NonFinite { what, stage: stage.index, epoch };
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| data[i].0.clone()).collect();
            let eps = standard_normal(&mut noise_rng, chunk.len() * latent);
            let batch = Batch {
                x: batch_tensor(&rows, width)?,
                labels: chunk.iter().map(|&i| data[i].1).collect(),
                eps: Tensor::new(vec![chunk.len(), latent], eps).expect("batch x latent"),
            };
            let mut g = Graph::new();
            let p = vae.params.bind(&mut g, true);
            let cp = classifier.map(|c| (c, c.params.bind(&mut g, false)));
            let (_, loss) = vae.loss_graph(&mut g, &p, &batch, weights, cp.as_ref().map(|(c, b)| (*c, b)))?;
            let total = g.value(loss.total).item();
            if !total.is_finite() {
                return Err(non_finite("loss"));
            }
            g.backward(loss.total).map_err(ModelError::from)?;
            let mut grads = p.grads(&g);
            if !grads.iter().all(Tensor::is_finite) {
                return Err(non_finite("gradient"));
            }
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm);
            }
            adam.step(&mut vae.params, &grads, lr).map_err(ModelError::from)?;
            let n = chunk.len() as f64;
            recon += g.value(loss.recon).item() * n;
            kl += g.value(loss.kl).item() * n;
            if let Some(l) = loss.genre {
                genre += g.value(l).item() * n;
            }
        }
        if !vae.params.all_finite() {
            return Err(non_finite("parameter"));
        }
        let n = data.len() as f64;
        log.records.push(EpochRecord {
            stage: stage.index,
            epoch,
            lr,
            l_recon: recon / n,
            l_lat: kl / n,
            l_genre: classifier.map(|_| genre / n),
            seconds: started.elapsed().as_secs_f64(),
        });
        hook(vae, log.records.last().expect("just pushed"))?;
    }
    Ok(())
}

fn labelled(phrases: &[&NotePhrase], label: GenreLabel) -> Vec<(Vec<f64>, GenreLabel)> {
    phrase_rows(phrases).into_iter().map(|r| (r, label)).collect()
}

fn model_for(model: &ModelConfig, multitask: bool) -> Result<Vae, TrainError> {
    check_frames(model)?;
    let cfg = ModelConfig { multitask, ..model.clone() };
    Ok(Vae::new(cfg)?)
}

/// ELBO training at the pre-training rate on the training split of `corpus`.
pub fn train_baseline(cfg: &TrainConfig, model: &ModelConfig, corpus: &Corpus) -> Result<TrainOutcome, TrainError> {
    baseline_with(cfg, model, corpus, &mut no_hook)
}

fn baseline_with(
    cfg: &TrainConfig,
    model: &ModelConfig,
    corpus: &Corpus,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train = corpus.train();
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus("baseline training"));
    }
    let mut vae = model_for(model, false)?;
    let mut adam = AdamState::new(&vae.params, cfg.adam);
    let mut log = TrainLog::default();
    let data = labelled(&train, GenreLabel::Jazz);
    let lr = |_| cfg.pretrain_lr;
    let stage = Stage { index: 1, epochs: cfg.stage1_epochs, lr: &lr, warmup: cfg.kl_warmup_epochs };
    run_stage(&mut vae, &mut adam, &data, stage, cfg, None, &mut log, hook)?;
    Ok(TrainOutcome { vae, log, adam, stage1: None })
}

/// Pre-train on `sample_ratio(source, target, R)`, then fine-tune on the
/// target training split with [`lr_schedule_finetune`].
pub fn train_finetune(
    cfg: &TrainConfig,
    model: &ModelConfig,
    source: &Corpus,
    target: &Corpus,
) -> Result<TrainOutcome, TrainError> {
    finetune_with(cfg, model, source, target, &mut no_hook)
}

fn finetune_with(
    cfg: &TrainConfig,
    model: &ModelConfig,
    source: &Corpus,
    target: &Corpus,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let r = cfg.ratio.ok_or(TrainError::MissingRatio(Regime::FineTune))?;
    if target.train().is_empty() {
        return Err(TrainError::EmptyCorpus("fine-tuning target"));
    }
    let sampled = sample_ratio(source, target, r, cfg.sample_seed)?;
    let mut out = baseline_with(cfg, model, &sampled, hook)?;
    out.stage1 = Some(out.vae.clone());
    if cfg.reset_adam_between_stages {
        out.adam.reset();
    }
    let data = labelled(&target.train(), GenreLabel::Jazz);
    let stage = Stage { index: 2, epochs: cfg.stage2_epochs, lr: &lr_schedule_finetune, warmup: 0 };
    run_stage(&mut out.vae, &mut out.adam, &data, stage, cfg, None, &mut out.log, hook)?;
    Ok(out)
}

/// Training rows of the multitask union: sampled source as `[1,0]`, target as `[0,1]`.
pub fn multitask_union(
    source: &Corpus,
    target: &Corpus,
    ratio: u32,
    seed: u64,
) -> Result<Vec<(Vec<f64>, GenreLabel)>, TrainError> {
    let sampled = sample_ratio(source, target, ratio, seed)?;
    let mut data = labelled(&sampled.train(), GenreLabel::Other);
    data.extend(labelled(&target.train(), GenreLabel::Jazz));
    Ok(data)
}

/// Joint genre-conditioned training with the frozen `classifier` supplying
/// the genre term.
pub fn train_multitask(
    cfg: &TrainConfig,
    model: &ModelConfig,
    source: &Corpus,
    target: &Corpus,
    classifier: &GenreClassifier,
) -> Result<TrainOutcome, TrainError> {
    multitask_with(cfg, model, source, target, classifier, &mut no_hook)
}

fn multitask_with(
    cfg: &TrainConfig,
    model: &ModelConfig,
    source: &Corpus,
    target: &Corpus,
    classifier: &GenreClassifier,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let r = cfg.ratio.ok_or(TrainError::MissingRatio(Regime::Multitask))?;
    if target.train().is_empty() {
        return Err(TrainError::EmptyCorpus("multitask target"));
    }
    if classifier.config.frames != model.frames {
        return Err(TrainError::Config("classifier and model frame counts differ".into()));
    }
    let data = multitask_union(source, target, r, cfg.sample_seed)?;
    let mut vae = model_for(model, true)?;
    let mut adam = AdamState::new(&vae.params, cfg.adam);
    let mut log = TrainLog::default();
    let lr = |_| cfg.pretrain_lr;
    let stage = Stage { index: 1, epochs: cfg.stage1_epochs, lr: &lr, warmup: cfg.kl_warmup_epochs };
    run_stage(&mut vae, &mut adam, &data, stage, cfg, Some(classifier), &mut log, hook)?;
    Ok(TrainOutcome { vae, log, adam, stage1: None })
}

/// Dispatches on `cfg.regime`.
pub fn train_regime(
    cfg: &TrainConfig,
    model: &ModelConfig,
    source: &Corpus,
    target: &Corpus,
    classifier: Option<&GenreClassifier>,
) -> Result<TrainOutcome, TrainError> {
    train_regime_with_hook(cfg, model, source, target, classifier, &mut no_hook)
}

/// [`train_regime`] with `hook` run after every epoch of every stage.
pub fn train_regime_with_hook(
    cfg: &TrainConfig,
    model: &ModelConfig,
    source: &Corpus,
    target: &Corpus,
    classifier: Option<&GenreClassifier>,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome, TrainError> {
    match cfg.regime {
        Regime::BaselineSource => baseline_with(cfg, model, source, hook),
        Regime::BaselineTarget => baseline_with(cfg, model, target, hook),
        Regime::FineTune => finetune_with(cfg, model, source, target, hook),
        Regime::Multitask => {
            let clf = classifier.ok_or_else(|| TrainError::Config("multitask training needs a classifier".into()))?;
            multitask_with(cfg, model, source, target, clf, hook)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig { epochs: 10, lr: PRETRAIN_LR, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    pub classifier: GenreClassifier,
    pub train_accuracy: f64,
    /// Accuracy on the test splits; `None` when neither corpus has one.
    pub test_accuracy: Option<f64>,
    pub losses: Vec<f64>,
}

fn accuracy(clf: &GenreClassifier, data: &[(Vec<f64>, GenreLabel)]) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    for chunk in data.chunks(64) {
        let rows: Vec<Vec<f64>> = chunk.iter().map(|d| d.0.clone()).collect();
        let probs = clf.predict(&rows)?;
        correct += probs.iter().zip(chunk).filter(|(p, d)| (**p >= 0.5) == (d.1 == GenreLabel::Jazz)).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// BCE training of the genre classifier: 1 for Jazz (`target`), 0 otherwise.
pub fn train_classifier(
    source: &Corpus,
    target: &Corpus,
    model: &ClassifierConfig,
    cfg: &ClassifierTrainConfig,
) -> Result<ClassifierOutcome, TrainError> {
    let (src, tgt) = (source.train(), target.train());
    if src.is_empty() || tgt.is_empty() {
        return Err(TrainError::EmptyCorpus("classifier training"));
    }
    if cfg.batch_size == 0 || cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(TrainError::Config("classifier batch_size and lr must be positive".into()));
    }
    if model.frames != PHRASE_STEPS {
        return Err(TrainError::Config(format!("classifier needs {PHRASE_STEPS} frames")));
    }
    let mut data = labelled(&src, GenreLabel::Other);
    data.extend(labelled(&tgt, GenreLabel::Jazz));
    let mut clf = GenreClassifier::new(model.clone())?;
    let mut adam = AdamState::new(&clf.params, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| data[i].0.clone()).collect();
            let jazz: Vec<Vec<f64>> = chunk.iter().map(|&i| vec![data[i].1.jazz()]).collect();
            let mut g = Graph::new();
            let p = clf.params.bind(&mut g, true);
            let x = g.constant(batch_tensor(&rows, model.frames * crate::corpus::PITCH_COUNT)?);
            let logit = clf.forward_graph(&mut g, &p, x)?;
            let l = g.bce_with_logits(logit, &batch_tensor(&jazz, 1)?).map_err(ModelError::from)?;
            let l = g.scale(l, 1.0 / chunk.len() as f64);
            let v = g.value(l).item();
            if !v.is_finite() {
                return Err(TrainError::NonFinite { what: "classifier loss", stage: 0, epoch });
            }
            g.backward(l).map_err(ModelError::from)?;
            let mut grads = p.grads(&g);
            clip_global_norm(&mut grads, 5.0);
            adam.step(&mut clf.params, &grads, cfg.lr).map_err(ModelError::from)?;
            total += v * chunk.len() as f64;
        }
        losses.push(total / data.len() as f64);
    }
    let train_accuracy = accuracy(&clf, &data)?;
    let mut held = labelled(&source.split(Split::Test), GenreLabel::Other);
    held.extend(labelled(&target.split(Split::Test), GenreLabel::Jazz));
    let test_accuracy = if held.is_empty() { None } else { Some(accuracy(&clf, &held)?) };
    Ok(ClassifierOutcome { classifier: clf, train_accuracy, test_accuracy, losses })
}

/// Samples `count` phrases: `z ~ N(0, I)`, decode, binarize at 0.5, read notes.
/// Phrases are tagged with the genre of `y`, or Jazz when unconditioned.
pub fn generate(vae: &Vae, count: usize, seed: u64, y: Option<GenreLabel>) -> Result<Corpus, TrainError> {
    if count == 0 {
        return Err(TrainError::Config("count ≥ 1 required".into()));
    }
    check_frames(&vae.config)?;
    let genre = match y {
        Some(GenreLabel::Other) => Genre::Other,
        _ => Genre::Jazz,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<Vec<f64>> = (0..count).map(|_| standard_normal(&mut rng, vae.config.latent)).collect();
    let mut corpus = Corpus::new(format!("generated seed={seed} count={count}"));
    let mut i = 0;
    for chunk in zs.chunks(64) {
        for probs in vae.decode_batch(chunk, y)? {
            let roll = binarize_monophonic(&probs, GENERATION_THRESHOLD);
            let phrase = from_pianoroll(&roll, format!("gen-{seed}-{i:05}"), genre)?;
            corpus.push(phrase, Split::Train)?;
            i += 1;
        }
    }
    Ok(corpus)
}

/// Pianoroll probabilities of generated samples, for classifier scoring.
pub fn generate_rolls(vae: &Vae, count: usize, seed: u64, y: Option<GenreLabel>) -> Result<Vec<Vec<f64>>, TrainError> {
    let corpus = generate(vae, count, seed, y)?;
    Ok(phrase_rows(&corpus.phrases().collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthProfile};

    fn tiny_model() -> ModelConfig {
        ModelConfig { hidden: 4, dense: vec![8], latent: 3, init_seed: 2, ..ModelConfig::default() }
    }

    fn tiny_cfg(regime: Regime) -> TrainConfig {
        TrainConfig { regime, stage1_epochs: 2, stage2_epochs: 2, batch_size: 8, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_boundaries() {
        assert_eq!(lr_schedule_finetune(0), 1e-5);
        assert_eq!(lr_schedule_finetune(39), 1e-5);
        assert_eq!(lr_schedule_finetune(40), 1e-7);
        assert_eq!(lr_schedule_finetune(79), 1e-7);
        assert_eq!(lr_schedule_finetune(80), 1e-9);
    }

    #[test]
    fn ratio_is_required() {
        let mut c = tiny_cfg(Regime::FineTune);
        c.ratio = None;
        assert!(matches!(c.validate(), Err(TrainError::MissingRatio(Regime::FineTune))));
        c.regime = Regime::BaselineTarget;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn baseline_is_deterministic_and_finite() {
        let corpus = synth_corpus(&SynthProfile::jazz_major(), 12, 1).unwrap();
        let a = train_baseline(&tiny_cfg(Regime::BaselineTarget), &tiny_model(), &corpus).unwrap();
        let b = train_baseline(&tiny_cfg(Regime::BaselineTarget), &tiny_model(), &corpus).unwrap();
        assert_eq!(a.vae.params, b.vae.params);
        assert_eq!(a.log.records.len(), 2);
        assert!(a.log.records.iter().all(|r| r.l_recon.is_finite() && r.l_lat.is_finite() && r.l_genre.is_none()));
        let gen = generate(&a.vae, 5, 4, None).unwrap();
        assert_eq!(gen.len(), 5);
        assert_eq!(gen.to_jsonl(), generate(&a.vae, 5, 4, None).unwrap().to_jsonl());
    }

    #[test]
    fn finetune_stage_one_matches_baseline() {
        let source = synth_corpus(&SynthProfile::source_mixed(), 30, 2).unwrap();
        let target = synth_corpus(&SynthProfile::jazz_major(), 10, 3).unwrap();
        let cfg = tiny_cfg(Regime::FineTune);
        let ft = train_finetune(&cfg, &tiny_model(), &source, &target).unwrap();
        let sampled = sample_ratio(&source, &target, 1, cfg.sample_seed).unwrap();
        let base = train_baseline(&cfg, &tiny_model(), &sampled).unwrap();
        let stage1 = ft.stage1.as_ref().unwrap();
        assert_eq!(stage1.params, base.vae.params);
        assert_ne!(stage1.params, ft.vae.params);
        let s2: Vec<_> = ft.log.stage(2).collect();
        assert_eq!(s2[0].lr, 1e-5);
        assert_eq!(s2[0].epoch, 0);
    }

    #[test]
    fn multitask_keeps_classifier_frozen() {
        let source = synth_corpus(&SynthProfile::other_pentatonic(), 20, 2).unwrap();
        let target = synth_corpus(&SynthProfile::jazz_pentatonic(), 10, 3).unwrap();
        let clf_cfg = ClassifierConfig { hidden: 3, dense: vec![4], ..ClassifierConfig::default() };
        let clf = train_classifier(&source, &target, &clf_cfg, &ClassifierTrainConfig { epochs: 1, ..Default::default() })
            .unwrap()
            .classifier;
        let before = clf.to_checkpoint(serde_json::Value::Null).to_bytes();
        let out = train_multitask(&tiny_cfg(Regime::Multitask), &tiny_model(), &source, &target, &clf).unwrap();
        assert_eq!(before, clf.to_checkpoint(serde_json::Value::Null).to_bytes());
        assert!(out.log.records.iter().all(|r| r.l_genre.is_some()));
        assert!(generate(&out.vae, 2, 0, None).is_err());
        assert_eq!(generate(&out.vae, 2, 0, Some(GenreLabel::Other)).unwrap().phrases().next().unwrap().genre(), Genre::Other);
    }

    #[test]
    fn union_contains_both_genres() {
        let source = synth_corpus(&SynthProfile::other_pentatonic(), 20, 2).unwrap();
        let target = synth_corpus(&SynthProfile::jazz_pentatonic(), 10, 3).unwrap();
        let data = multitask_union(&source, &target, 2, 0).unwrap();
        let jazz = data.iter().filter(|d| d.1 == GenreLabel::Jazz).count();
        assert_eq!(jazz, target.train().len());
        assert_eq!(data.len() - jazz, 2 * target.train().len());
    }

    #[test]
    fn log_csv_layout() {
        let log = TrainLog {
            records: vec![EpochRecord { stage: 1, epoch: 0, lr: 1e-3, l_recon: 2.0, l_lat: 0.5, l_genre: None, seconds: 0.25 }],
        };
        let csv = log.to_csv();
        assert_eq!(csv.lines().next().unwrap(), TrainLog::HEADER);
        assert_eq!(csv.lines().nth(1).unwrap(), "0,1,1e-3,2.000000000,0.500000000,,0.250");
    }
}
