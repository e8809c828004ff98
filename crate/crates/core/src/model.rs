//! Recurrent VAE (BGRU encoder, GRU decoder) and the pianoroll genre classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Genre, PHRASE_STEPS, PITCH_COUNT};
use crate::tensor::{
    Bgru, Bound, Checkpoint, CheckpointError, GruCell, Graph, Linear, ParamStore, Tensor, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("{0}")]
    Label(&'static str),
    #[error("reconstruction value {value} at cell {index} is outside (0,1)")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid model config: {0}")]
    Config(String),
}

/// Initial output-logit bias: the log-odds of one active pitch per frame.
pub const OUTPUT_BIAS_INIT: f64 = -3.850147601710058;

/// One-hot genre condition: Jazz = `[0,1]`, other = `[1,0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenreLabel {
    Jazz,
    Other,
}

impl GenreLabel {
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            GenreLabel::Jazz => [0.0, 1.0],
            GenreLabel::Other => [1.0, 0.0],
        }
    }

    /// Second component of the one-hot vector.
    pub fn jazz(self) -> f64 {
        self.one_hot()[1]
    }
}

impl From<Genre> for GenreLabel {
    fn from(g: Genre) -> Self {
        match g {
            Genre::Jazz => GenreLabel::Jazz,
            Genre::Other => GenreLabel::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Time steps per phrase; 64 for real data, smaller only for gradient checks.
    pub frames: usize,
    /// GRU width per direction in the encoder, and of the decoder GRU.
    pub hidden: usize,
    pub dense: Vec<usize>,
    pub latent: usize,
    /// Appends a one-hot genre label to the latent vector.
    pub multitask: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: PHRASE_STEPS,
            hidden: 64,
            dense: vec![256, 256],
            latent: 32,
            multitask: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn input_len(&self) -> usize {
        self.frames * PITCH_COUNT
    }

    fn cond_dim(&self) -> usize {
        self.latent + if self.multitask { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.frames == 0 || self.hidden == 0 || self.latent == 0 || self.dense.contains(&0) {
            return Err(ModelError::Config("frames, hidden, latent and dense widths must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian posterior for one phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentDistribution {
    /// `KL(q || N(0, I)) = 1/2 Σ (μ² + exp(log_var) - 1 - log_var)`.
    pub fn kl(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.log_var)
            .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
            .sum::<f64>()
    }

    /// `z = μ + exp(log_var / 2) ⊙ ε`.
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect()
    }

    pub fn reparameterize(&self, noise_seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let eps = standard_normal(&mut rng, self.mu.len());
        self.sample_with(&eps)
    }
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Loss value with its components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub genre: Option<f64>,
}

fn check_probs(recon: &[f64]) -> Result<(), ModelError> {
    match recon.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        Some(index) => Err(ModelError::OutOfRange { index, value: recon[index] }),
        None => Ok(()),
    }
}

/// Binary cross-entropy summed over cells.
pub fn bce(target: &[f64], probs: &[f64]) -> f64 {
    target
        .iter()
        .zip(probs)
        .map(|(&x, &p)| -(x * p.ln() + (1.0 - x) * (1.0 - p).ln()))
        .sum()
}

/// `L_recon + β·KL` for one phrase, `recon` holding probabilities.
pub fn elbo_loss(x: &[f64], recon: &[f64], dist: &LatentDistribution, beta: f64) -> Result<LossParts, ModelError> {
    if x.len() != recon.len() {
        return Err(ModelError::Length { expected: x.len(), got: recon.len() });
    }
    check_probs(recon)?;
    let r = bce(x, recon);
    let kl = dist.kl();
    Ok(LossParts { total: r + beta * kl, recon: r, kl, genre: None })
}

/// `L_recon + β·KL + λ·BCE(ŷ, jazz(y))`.
pub fn multitask_loss(
    x: &[f64],
    y: GenreLabel,
    recon: &[f64],
    dist: &LatentDistribution,
    y_hat: f64,
    beta: f64,
    lambda_genre: f64,
) -> Result<LossParts, ModelError> {
    let mut parts = elbo_loss(x, recon, dist, beta)?;
    check_probs(&[y_hat])?;
    let genre = bce(&[y.jazz()], &[y_hat]);
    parts.total += lambda_genre * genre;
    parts.genre = Some(genre);
    Ok(parts)
}

/// Flattens rows of equal length into a `[rows, len]` tensor.
pub fn batch_tensor(rows: &[Vec<f64>], len: usize) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(rows.len() * len);
    for r in rows {
        if r.len() != len {
            return Err(ModelError::Length { expected: len, got: r.len() });
        }
        data.extend_from_slice(r);
    }
    Ok(Tensor::new(vec![rows.len(), len], data)?)
}

/// BGRU over the frames, all outputs concatenated, then a tanh dense stack.
#[derive(Debug, Clone)]
struct SequenceEncoder {
    frames: usize,
    bgru: Bgru,
    dense: Vec<Linear>,
}

impl SequenceEncoder {
    fn new(store: &mut ParamStore, name: &str, frames: usize, hidden: usize, dense: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let bgru = Bgru::new(store, &format!("{name}.bgru"), PITCH_COUNT, hidden, rng);
        let mut width = frames * 2 * hidden;
        let mut layers = Vec::new();
        for (i, &w) in dense.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.dense{i}"), width, w, rng));
            width = w;
        }
        SequenceEncoder { frames, bgru, dense: layers }
    }

    fn out_width(&self) -> usize {
        self.dense.last().map_or(self.frames * 2 * self.bgru.hidden(), |l| l.output)
    }

    /// `x: [batch, frames * 48]` to `[batch, out_width]`.
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let seq = (0..self.frames)
            .map(|t| g.slice(x, 1, t * PITCH_COUNT, PITCH_COUNT))
            .collect::<Result<Vec<_>, _>>()?;
        let outs = self.bgru.forward(g, p, &seq)?;
        let mut h = g.concat(&outs, 1)?;
        for layer in &self.dense {
            let a = layer.forward(g, p, h)?;
            h = g.tanh(a);
        }
        Ok(h)
    }
}

/// Graph handles of one forward pass through the VAE.
#[derive(Debug, Clone, Copy)]
pub struct VaeForward {
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
    pub logits: Var,
}

/// Loss handles; `total` is the quantity to minimise.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub genre: Option<Var>,
}

/// One mini-batch: pianorolls, their genre labels and reparameterization noise.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<GenreLabel>,
    pub eps: Tensor,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.x.shape()[0]
    }

    fn one_hot(&self) -> Tensor {
        let data = self.labels.iter().flat_map(|l| l.one_hot()).collect();
        Tensor::new(vec![self.labels.len(), 2], data).expect("two columns per label")
    }

    fn jazz(&self) -> Tensor {
        let data = self.labels.iter().map(|l| vec![l.jazz()]).collect::<Vec<_>>();
        batch_tensor(&data, 1).expect("one column per label")
    }
}

/// Objective weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub lambda_genre: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { beta: 1.0, lambda_genre: 1.0 }
    }
}

/// Recurrent VAE. Encoder parameters are the posterior `q_φ(z|x)`, decoder
/// parameters the likelihood `p_θ(x|z)`.
#[derive(Debug, Clone)]
pub struct Vae {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: SequenceEncoder,
    mu: Linear,
    log_var: Linear,
    dec_dense: Vec<Linear>,
    dec_init: Linear,
    dec_gru: GruCell,
    dec_out: Linear,
}

impl Vae {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut s = ParamStore::new();
        let encoder = SequenceEncoder::new(&mut s, "enc", config.frames, config.hidden, &config.dense, &mut rng);
        let w = encoder.out_width();
        let mu = Linear::new(&mut s, "enc.mu", w, config.latent, &mut rng);
        let log_var = Linear::new(&mut s, "enc.log_var", w, config.latent, &mut rng);
        let mut width = config.cond_dim();
        let mut dec_dense = Vec::new();
        for (i, &d) in config.dense.iter().enumerate() {
            dec_dense.push(Linear::new(&mut s, &format!("dec.dense{i}"), width, d, &mut rng));
            width = d;
        }
        let dec_init = Linear::new(&mut s, "dec.init", width, config.hidden, &mut rng);
        let dec_gru = GruCell::new(&mut s, "dec.gru", config.cond_dim(), config.hidden, &mut rng);
        let dec_out = Linear::new(&mut s, "dec.out", config.hidden, PITCH_COUNT, &mut rng);
        s.get_mut(dec_out.b).data_mut().fill(OUTPUT_BIAS_INIT);
        Ok(Vae { config, params: s, encoder, mu, log_var, dec_dense, dec_init, dec_gru, dec_out })
    }

    fn check_label(&self, has_label: bool) -> Result<(), ModelError> {
        match (self.config.multitask, has_label) {
            (true, false) => Err(ModelError::Label("multitask model needs a genre label")),
            (false, true) => Err(ModelError::Label("genre label given to a model without genre conditioning")),
            _ => Ok(()),
        }
    }

    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, Var), ModelError> {
        let h = self.encoder.forward(g, p, x)?;
        Ok((self.mu.forward(g, p, h)?, self.log_var.forward(g, p, h)?))
    }

    /// `z: [batch, latent]`, `y: [batch, 2]` one-hot; returns logits `[batch, frames * 48]`.
    pub fn decode_graph(&self, g: &mut Graph, p: &Bound, z: Var, y: Option<Var>) -> Result<Var, ModelError> {
        self.check_label(y.is_some())?;
        let cond = match y {
            Some(y) => g.concat(&[z, y], 1)?,
            None => z,
        };
        let mut h = cond;
        for layer in &self.dec_dense {
            let a = layer.forward(g, p, h)?;
            h = g.tanh(a);
        }
        let init = self.dec_init.forward(g, p, h)?;
        let mut state = g.tanh(init);
        let mut logits = Vec::with_capacity(self.config.frames);
        for _ in 0..self.config.frames {
            state = self.dec_gru.forward(g, p, cond, state)?;
            logits.push(self.dec_out.forward(g, p, state)?);
        }
        Ok(g.concat(&logits, 1)?)
    }

    /// Encode, reparameterize with the batch noise, decode.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<VaeForward, ModelError> {
        let x = g.constant(batch.x.clone());
        let (mu, log_var) = self.encode_graph(g, p, x)?;
        let half = g.scale(log_var, 0.5);
        let sigma = g.exp(half);
        let eps = g.constant(batch.eps.clone());
        let noise = g.mul(sigma, eps)?;
        let z = g.add(mu, noise)?;
        let y = self.config.multitask.then(|| g.constant(batch.one_hot()));
        let logits = self.decode_graph(g, p, z, y)?;
        Ok(VaeForward { mu, log_var, z, logits })
    }

    /// Batch-mean objective. With a classifier the genre term is added and
    /// gradients pass through the (frozen) classifier into the VAE.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &Batch,
        weights: LossWeights,
        classifier: Option<(&GenreClassifier, &Bound)>,
    ) -> Result<(VaeForward, LossVars), ModelError> {
        let fwd = self.forward_graph(g, p, batch)?;
        let inv_b = 1.0 / batch.size() as f64;
        let bce = g.bce_with_logits(fwd.logits, &batch.x)?;
        let recon = g.scale(bce, inv_b);

        let mu2 = g.mul(fwd.mu, fwd.mu)?;
        let var = g.exp(fwd.log_var);
        let a = g.add(mu2, var)?;
        let b = g.sub(a, fwd.log_var)?;
        let c = g.add_scalar(b, -1.0);
        let s = g.sum(c);
        let kl = g.scale(s, 0.5 * inv_b);

        let wkl = g.scale(kl, weights.beta);
        let mut total = g.add(recon, wkl)?;
        let mut genre = None;
        if let Some((clf, cp)) = classifier {
            let probs = g.sigmoid(fwd.logits);
            let logit = clf.forward_graph(g, cp, probs)?;
            let l = g.bce_with_logits(logit, &batch.jazz())?;
            let l = g.scale(l, inv_b);
            let wl = g.scale(l, weights.lambda_genre);
            total = g.add(total, wl)?;
            genre = Some(l);
        }
        Ok((fwd, LossVars { total, recon, kl, genre }))
    }

    pub fn encode(&self, x: &[f64]) -> Result<LatentDistribution, ModelError> {
        let n = self.config.input_len();
        if x.len() != n {
            return Err(ModelError::Length { expected: n, got: x.len() });
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(Tensor::new(vec![1, n], x.to_vec())?);
        let (mu, lv) = self.encode_graph(&mut g, &p, xv)?;
        Ok(LatentDistribution { mu: g.value(mu).data().to_vec(), log_var: g.value(lv).data().to_vec() })
    }

    /// Output probabilities for each latent row.
    pub fn decode_batch(&self, zs: &[Vec<f64>], y: Option<GenreLabel>) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_label(y.is_some())?;
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let z = g.constant(batch_tensor(zs, self.config.latent)?);
        let yv = y.map(|l| {
            let rows: Vec<Vec<f64>> = zs.iter().map(|_| l.one_hot().to_vec()).collect();
            g.constant(batch_tensor(&rows, 2).expect("two columns"))
        });
        let logits = self.decode_graph(&mut g, &p, z, yv)?;
        let probs = g.sigmoid(logits);
        Ok(g.value(probs).data().chunks(self.config.input_len()).map(<[f64]>::to_vec).collect())
    }

    pub fn decode(&self, z: &[f64], y: Option<GenreLabel>) -> Result<Vec<f64>, ModelError> {
        Ok(self.decode_batch(&[z.to_vec()], y)?.remove(0))
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let header = serde_json::json!({ "kind": "vae", "model": self.config, "run": extra });
        Checkpoint { header: header.to_string(), tensors: self.params.to_named() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let config: ModelConfig = header_field(&ckpt.header, "vae")?;
        let mut vae = Vae::new(config)?;
        vae.params.load_from(&ckpt.tensors)?;
        Ok(vae)
    }
}

fn header_field<T: serde::de::DeserializeOwned>(header: &str, kind: &str) -> Result<T, ModelError> {
    let v: serde_json::Value =
        serde_json::from_str(header).map_err(|e| ModelError::Config(format!("checkpoint header: {e}")))?;
    if v.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(ModelError::Config(format!("checkpoint does not hold a {kind}")));
    }
    serde_json::from_value(v["model"].clone()).map_err(|e| ModelError::Config(format!("checkpoint header: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub frames: usize,
    pub hidden: usize,
    pub dense: Vec<usize>,
    pub init_seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { frames: PHRASE_STEPS, hidden: 64, dense: vec![256, 256], init_seed: 0 }
    }
}

/// Encoder-shaped network with a single sigmoid output: the probability of Jazz.
#[derive(Debug, Clone)]
pub struct GenreClassifier {
    pub config: ClassifierConfig,
    pub params: ParamStore,
    encoder: SequenceEncoder,
    head: Linear,
}

impl GenreClassifier {
    pub fn new(config: ClassifierConfig) -> Result<Self, ModelError> {
        if config.frames == 0 || config.hidden == 0 || config.dense.contains(&0) {
            return Err(ModelError::Config("classifier dims must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut s = ParamStore::new();
        let encoder = SequenceEncoder::new(&mut s, "clf", config.frames, config.hidden, &config.dense, &mut rng);
        let head = Linear::new(&mut s, "clf.head", encoder.out_width(), 1, &mut rng);
        Ok(GenreClassifier { config, params: s, encoder, head })
    }

    /// `x: [batch, frames * 48]`, any real values; returns logits `[batch, 1]`.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, ModelError> {
        let h = self.encoder.forward(g, p, x)?;
        Ok(self.head.forward(g, p, h)?)
    }

    /// Jazz probability per row.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch_tensor(rows, self.config.frames * PITCH_COUNT)?);
        let logits = self.forward_graph(&mut g, &p, x)?;
        let probs = g.sigmoid(logits);
        Ok(g.value(probs).data().to_vec())
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let header = serde_json::json!({ "kind": "classifier", "model": self.config, "run": extra });
        Checkpoint { header: header.to_string(), tensors: self.params.to_named() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let config: ClassifierConfig = header_field(&ckpt.header, "classifier")?;
        let mut clf = GenreClassifier::new(config)?;
        clf.params.load_from(&ckpt.tensors)?;
        Ok(clf)
    }
}
