use rand::Rng;

use super::{Bound, Graph, ParamId, ParamStore, Tensor, TensorError, Var};

/// Affine map `x W + b` with `W: [input, output]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[input, output], input, rng);
        let b = store.add_uniform(format!("{name}.b"), &[output], input, rng);
        Linear { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let xw = g.matmul(x, p.var(self.w))?;
        g.add_bias(xw, p.var(self.b))
    }
}

/// Gated recurrent unit with reset gate `r` and update gate `u`.
///
/// ```text
/// r  = σ([x, h] W_r + b_r)
/// u  = σ([x, h] W_u + b_u)
/// h~ = tanh([x, r ⊙ h] W_h + b_h)
/// h' = (1 - u) ⊙ h + u ⊙ h~
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub reset: Linear,
    pub update: Linear,
    pub candidate: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let n = input + hidden;
        GruCell {
            reset: Linear::new(store, &format!("{name}.r"), n, hidden, rng),
            update: Linear::new(store, &format!("{name}.u"), n, hidden, rng),
            candidate: Linear::new(store, &format!("{name}.h"), n, hidden, rng),
            input,
            hidden,
        }
    }

    /// One step: `x: [batch, input]`, `h: [batch, hidden]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, h: Var) -> Result<Var, TensorError> {
        let (xs, hs) = (g.shape(x), g.shape(h));
        if xs.len() != 2 || hs.len() != 2 || xs[1] != self.input || hs[1] != self.hidden || xs[0] != hs[0] {
            return Err(TensorError::ShapeMismatch { op: "gru_cell", left: xs.to_vec(), right: hs.to_vec() });
        }
        let xh = g.concat(&[x, h], 1)?;
        let r_pre = self.reset.forward(g, p, xh)?;
        let r = g.sigmoid(r_pre);
        let u_pre = self.update.forward(g, p, xh)?;
        let u = g.sigmoid(u_pre);
        let rh = g.mul(r, h)?;
        let xrh = g.concat(&[x, rh], 1)?;
        let c_pre = self.candidate.forward(g, p, xrh)?;
        let c = g.tanh(c_pre);
        let diff = g.sub(c, h)?;
        let step = g.mul(u, diff)?;
        g.add(h, step)
    }

    /// Runs the cell over `seq` from `h0`, returning every hidden state.
    pub fn run(&self, g: &mut Graph, p: &Bound, seq: &[Var], h0: Var) -> Result<Vec<Var>, TensorError> {
        let mut h = h0;
        let mut out = Vec::with_capacity(seq.len());
        for &x in seq {
            h = self.forward(g, p, x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Bidirectional GRU; each step's output is `[h_fwd_t, h_bwd_t]`.
#[derive(Debug, Clone)]
pub struct Bgru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

impl Bgru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Bgru {
            fwd: GruCell::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: GruCell::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    /// `seq[t]: [batch, input]`; both directions start from zeros.
    pub fn forward(&self, g: &mut Graph, p: &Bound, seq: &[Var]) -> Result<Vec<Var>, TensorError> {
        let first = *seq.first().ok_or(TensorError::Empty("bgru"))?;
        let batch = g.shape(first)[0];
        let h0 = g.constant(Tensor::zeros(&[batch, self.hidden()]));
        let fwd = self.fwd.run(g, p, seq, h0)?;
        let rev: Vec<Var> = seq.iter().rev().copied().collect();
        let mut bwd = self.bwd.run(g, p, &rev, h0)?;
        bwd.reverse();
        fwd.iter().zip(&bwd).map(|(&f, &b)| g.concat(&[f, b], 1)).collect()
    }
}
