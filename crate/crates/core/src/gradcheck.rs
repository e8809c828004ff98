//! Central finite-difference checks of every differentiable op, the GRU
//! layers, and the full VAE objectives at reduced dimensions.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::PITCH_COUNT;
use crate::model::{standard_normal, Batch, ClassifierConfig, GenreClassifier, GenreLabel, LossWeights, ModelConfig, ModelError, Vae};
use crate::tensor::{Bgru, Bound, Graph, GruCell, ParamStore, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, per unit of loss magnitude.
/// Central differences carry rounding noise proportional to `|loss| / STEP`,
/// so gradients far below the loss scale are compared against this floor.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Parameter element with the largest error, as `name[index]`.
    pub worst: String,
    pub checked: usize,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(GradcheckEntry::passed)
    }

    pub fn worst(&self) -> Option<&GradcheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| (a.max_rel_err / a.tolerance).total_cmp(&(b.max_rel_err / b.tolerance)))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<4} {:<24} max_rel_err={:.3e} tol={:.0e} n={} worst={}",
                if e.passed() { "PASS" } else { "FAIL" },
                e.name,
                e.max_rel_err,
                e.tolerance,
                e.checked,
                e.worst
            )?;
        }
        Ok(())
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop gradients of `build` with central differences for every
/// element of every tensor in `store`.
pub fn check_store<E>(
    name: &str,
    store: &ParamStore,
    tolerance: f64,
    build: impl Fn(&mut Graph, &Bound) -> Result<Var, E>,
) -> Result<GradcheckEntry, E> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let loss = build(&mut g, &p)?;
    g.backward(loss).expect("scalar loss");
    let grads = p.grads(&g);
    let floor = REL_FLOOR * g.value(loss).item().abs().max(1.0);

    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new();
        let p = s.bind(&mut g, false);
        let l = build(&mut g, &p)?;
        Ok(g.value(l).item())
    };

    let mut work = store.clone();
    let mut entry = GradcheckEntry {
        name: name.to_string(),
        max_rel_err: 0.0,
        tolerance,
        worst: String::from("-"),
        checked: 0,
    };
    for id in store.ids() {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + STEP;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - STEP;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(grads[id.index()].data()[i], numeric, floor);
            entry.checked += 1;
            if err > entry.max_rel_err || err.is_nan() {
                entry.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                entry.worst = format!("{}[{i}]", store.name(id));
            }
        }
    }
    Ok(entry)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduces `out` to a scalar through a fixed random weighting.
fn weigh(g: &mut Graph, out: Var, rng_seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = random(&mut rng, g.shape(out));
    let wv = g.constant(w);
    let prod = g.mul(out, wv).expect("same shape");
    g.sum(prod)
}

type OpBuild = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpBuild)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        ("sub", vec![vec![2, 3], vec![2, 3]], Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
        ("mul", vec![vec![2, 3], vec![2, 3]], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
        ("add_bias", vec![vec![3, 4], vec![4]], Box::new(|g, v| g.add_bias(v[0], v[1]).unwrap())),
        ("concat_axis0", vec![vec![2, 3], vec![1, 3]], Box::new(|g, v| g.concat(&[v[0], v[1]], 0).unwrap())),
        ("concat_axis1", vec![vec![2, 3], vec![2, 2]], Box::new(|g, v| g.concat(&[v[0], v[1], v[0]], 1).unwrap())),
        ("slice", vec![vec![3, 5]], Box::new(|g, v| g.slice(v[0], 1, 1, 3).unwrap())),
        ("sigmoid", vec![vec![2, 4]], Box::new(|g, v| g.sigmoid(v[0]))),
        ("tanh", vec![vec![2, 4]], Box::new(|g, v| g.tanh(v[0]))),
        ("exp", vec![vec![2, 4]], Box::new(|g, v| g.exp(v[0]))),
        ("scale", vec![vec![2, 4]], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("add_scalar", vec![vec![2, 4]], Box::new(|g, v| g.add_scalar(v[0], 0.3))),
        ("sum", vec![vec![2, 4]], Box::new(|g, v| g.sum(v[0]))),
        ("mean", vec![vec![2, 4]], Box::new(|g, v| g.mean(v[0]))),
        (
            "bce_with_logits",
            vec![vec![2, 4]],
            Box::new(|g, v| {
                let t = Tensor::from_fn(&[2, 4], |i| [0.0, 1.0, 1.0, 0.0, 0.3][i % 5]);
                g.bce_with_logits(v[0], &t).unwrap()
            }),
        ),
        (
            "composed",
            vec![vec![3, 4], vec![4, 4], vec![4]],
            Box::new(|g, v| {
                let h = g.matmul(v[0], v[1]).unwrap();
                let h = g.add_bias(h, v[2]).unwrap();
                let a = g.tanh(h);
                let b = g.sigmoid(h);
                let c = g.mul(a, b).unwrap();
                let d = g.concat(&[c, v[0]], 1).unwrap();
                let e = g.slice(d, 1, 2, 4).unwrap();
                let f = g.exp(e);
                let f = g.scale(f, 0.5);
                g.sub(f, c).unwrap()
            }),
        ),
    ]
}

/// Finite-difference check of each primitive op and of a composed graph.
pub fn check_ops(seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport::default();
    for (i, (name, shapes, build)) in op_cases().into_iter().enumerate() {
        let mut store = ParamStore::new();
        for (k, s) in shapes.iter().enumerate() {
            store.add(format!("in{k}"), random(&mut rng, s));
        }
        let ids: Vec<_> = store.ids().collect();
        let weight_seed = seed ^ (i as u64 + 1);
        let entry = check_store(name, &store, OP_TOLERANCE, |g, p| {
            let vars: Vec<Var> = ids.iter().map(|&id| p.var(id)).collect();
            let out = build(g, &vars);
            Ok::<_, ()>(weigh(g, out, weight_seed))
        })
        .expect("ops are infallible here");
        report.entries.push(entry);
    }
    report
}

/// GRU cell on 4-dim input and state, and a 3-step BGRU.
pub fn check_recurrent(seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport::default();

    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", 4, 4, &mut rng);
    let x = store.add("x", random(&mut rng, &[2, 4]));
    let h = store.add("h", random(&mut rng, &[2, 4]));
    let entry = check_store("gru_cell", &store, OP_TOLERANCE, |g, p| {
        let out = cell.forward(g, p, p.var(x), p.var(h))?;
        Ok::<_, crate::tensor::TensorError>(weigh(g, out, seed + 1))
    })
    .expect("gru shapes are consistent");
    report.entries.push(entry);

    let mut store = ParamStore::new();
    let bgru = Bgru::new(&mut store, "bgru", 4, 4, &mut rng);
    let xs: Vec<_> = (0..3).map(|t| store.add(format!("x{t}"), random(&mut rng, &[2, 4]))).collect();
    let entry = check_store("bgru", &store, OP_TOLERANCE, |g, p| {
        let seq: Vec<Var> = xs.iter().map(|&id| p.var(id)).collect();
        let outs = bgru.forward(g, p, &seq)?;
        let all = g.concat(&outs, 1)?;
        Ok::<_, crate::tensor::TensorError>(weigh(g, all, seed + 2))
    })
    .expect("bgru shapes are consistent");
    report.entries.push(entry);
    report
}

/// Reduced dimensions for the objective checks.
pub fn reduced_model_config(multitask: bool) -> ModelConfig {
    ModelConfig { frames: 8, hidden: 8, dense: vec![16, 16], latent: 4, multitask, init_seed: 17 }
}

fn reduced_batch(seed: u64, latent: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = 8;
    let mut x = vec![0.0; 2 * frames * PITCH_COUNT];
    for row in 0..2 {
        for t in 0..frames {
            if rng.random::<f64>() < 0.8 {
                let p = rng.random_range(0..PITCH_COUNT);
                x[(row * frames + t) * PITCH_COUNT + p] = 1.0;
            }
        }
    }
    let eps = standard_normal(&mut rng, 2 * latent);
    Batch {
        x: Tensor::new(vec![2, frames * PITCH_COUNT], x).unwrap(),
        labels: vec![GenreLabel::Jazz, GenreLabel::Other],
        eps: Tensor::new(vec![2, latent], eps).unwrap(),
    }
}

/// Checks every VAE parameter against the ELBO objective and, with a frozen
/// classifier, against the multitask objective.
pub fn check_objectives(seed: u64) -> Result<GradcheckReport, ModelError> {
    let mut report = GradcheckReport::default();
    let weights = LossWeights::default();

    let vae = Vae::new(reduced_model_config(false))?;
    let batch = reduced_batch(seed, vae.config.latent);
    let entry = check_store("elbo_objective", &vae.params, MODEL_TOLERANCE, |g, p| {
        Ok::<_, ModelError>(vae.loss_graph(g, p, &batch, weights, None)?.1.total)
    })?;
    report.entries.push(entry);

    let vae = Vae::new(reduced_model_config(true))?;
    let clf = GenreClassifier::new(ClassifierConfig { frames: 8, hidden: 4, dense: vec![8], init_seed: 23 })?;
    let entry = check_store("multitask_objective", &vae.params, MODEL_TOLERANCE, |g, p| {
        let cp = clf.params.bind(g, false);
        Ok::<_, ModelError>(vae.loss_graph(g, p, &batch, weights, Some((&clf, &cp)))?.1.total)
    })?;
    report.entries.push(entry);

    let mut inputs = ParamStore::new();
    let x = inputs.add("x", Tensor::from_fn(&[2, 8 * PITCH_COUNT], |i| ((i * 37 % 101) as f64) / 101.0));
    let entry = check_store("classifier_input", &inputs, OP_TOLERANCE, |g, p| {
        let cp = clf.params.bind(g, false);
        let logit = clf.forward_graph(g, &cp, p.var(x))?;
        let y = g.sigmoid(logit);
        Ok::<_, ModelError>(g.sum(y))
    })?;
    report.entries.push(entry);
    Ok(report)
}

/// All suites.
pub fn run_all(seed: u64) -> Result<GradcheckReport, ModelError> {
    let mut report = check_ops(seed);
    report.entries.extend(check_recurrent(seed).entries);
    report.entries.extend(check_objectives(seed)?.entries);
    Ok(report)
}
