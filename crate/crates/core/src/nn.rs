//! Parameter storage and the small set of layers shared by every model.

use std::cell::RefCell;
use std::collections::HashMap;

use afx_autodiff::{Tape, Tensor, Var};
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (running statistics) are stored and checkpointed but never
    /// updated by the optimizer.
    pub trainable: bool,
}

/// Named tensors owned by one model, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable tensor. Names are unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    /// Trainable tensor with entries uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, rng: &mut Rng, name: impl Into<String>, shape: &[usize], bound: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        let e = &mut self.entries[id.0];
        assert_eq!(e.value.shape(), value.shape(), "parameter {} shape", e.name);
        e.value = value;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Records every entry on `tape`: trainable tensors as gradient leaves,
    /// buffers as constants.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Params<'t> {
        let vars = self
            .entries
            .iter()
            .map(|e| if e.trainable { tape.var(e.value.clone()) } else { tape.constant(e.value.clone()) })
            .collect();
        Params { tape, vars }
    }
}

/// A [`ParamStore`] recorded on one tape.
pub struct Params<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> Params<'t> {
    /// Wraps vars already recorded on `tape`, one per store entry.
    pub fn from_vars(tape: &'t Tape, vars: Vec<Var<'t>>) -> Self {
        Self { tape, vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

/// Forward-pass mode plus batch statistics gathered by batch norm layers.
#[derive(Debug, Default)]
pub struct Ctx {
    pub training: bool,
    bn_stats: RefCell<Vec<(ParamId, Vec<f64>)>>,
}

impl Ctx {
    pub fn train() -> Self {
        Self { training: true, ..Self::default() }
    }

    pub fn eval() -> Self {
        Self::default()
    }

    /// `(buffer, observed value)` pairs in the order they were produced.
    pub fn take_bn_stats(&self) -> Vec<(ParamId, Vec<f64>)> {
        std::mem::take(&mut self.bn_stats.borrow_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Act {
    Identity,
    Tanh,
    Sigmoid,
}

impl Act {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Act::Identity => x,
            Act::Tanh => x.tanh(),
            Act::Sigmoid => x.sigmoid(),
        }
    }
}

/// `y = x W + b` with `W: [n_in, n_out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    /// Weights and bias uniform in `±sqrt(1/n_in)`.
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, n_in: usize, n_out: usize, bias: bool) -> Self {
        let bound = (1.0 / n_in as f64).sqrt();
        let w = store.uniform(rng, format!("{name}.weight"), &[n_in, n_out], bound);
        let b = bias.then(|| store.uniform(rng, format!("{name}.bias"), &[n_out], bound));
        Self { w, b, n_in, n_out }
    }

    /// Zero weights and a fixed bias.
    pub fn with_bias(store: &mut ParamStore, name: &str, n_in: usize, bias: Vec<f64>) -> Self {
        let n_out = bias.len();
        let w = store.add(format!("{name}.weight"), Tensor::zeros(vec![n_in, n_out]));
        let b = Some(store.add(format!("{name}.bias"), Tensor::from_vec(bias)));
        Self { w, b, n_in, n_out }
    }

    /// `x` is `[n_in]` or `[rows, n_in]`.
    pub fn forward<'t>(&self, p: &Params<'t>, x: Var<'t>) -> Var<'t> {
        let shape = x.shape();
        let rank1 = shape.len() == 1;
        let x2 = if rank1 { x.reshape(vec![1, shape[0]]) } else { x };
        let mut y = x2.matmul(p.get(self.w));
        if let Some(b) = self.b {
            y = y + p.get(b);
        }
        if rank1 {
            y.reshape(vec![self.n_out])
        } else {
            y
        }
    }
}

/// Stack of linear layers with a shared hidden activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_act: Act,
    pub out_act: Act,
}

impl Mlp {
    /// `widths = [n_in, h1, ..., n_out]`.
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, widths: &[usize], hidden_act: Act, out_act: Act) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers, hidden_act, out_act }
    }

    pub fn forward<'t>(&self, p: &Params<'t>, mut x: Var<'t>) -> Var<'t> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x);
            x = if i == last { self.out_act.apply(x) } else { self.hidden_act.apply(x) };
        }
        x
    }
}

/// Recurrent state of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RecState {
    pub h: Tensor,
    pub c: Tensor,
}

impl RecState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: Tensor::zeros(vec![hidden]), c: Tensor::zeros(vec![hidden]) }
    }
}

#[derive(Debug, Clone)]
struct LstmLayer {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

/// Stacked LSTM. Gates are ordered input, forget, cell, output; weights are
/// uniform in `±sqrt(1/hidden)` and the forget-gate bias starts at 1.
#[derive(Debug, Clone)]
pub struct Lstm {
    layers: Vec<LstmLayer>,
    pub n_in: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, n_in: usize, hidden: usize, num_layers: usize) -> Self {
        assert!(num_layers >= 1 && hidden >= 1);
        let bound = (1.0 / hidden as f64).sqrt();
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { n_in } else { hidden };
                let w_ih = store.uniform(rng, format!("{name}.{l}.w_ih"), &[inp, 4 * hidden], bound);
                let w_hh = store.uniform(rng, format!("{name}.{l}.w_hh"), &[hidden, 4 * hidden], bound);
                let mut bias: Vec<f64> = (0..4 * hidden).map(|_| rng.gen_range(-bound..=bound)).collect();
                bias[hidden..2 * hidden].fill(1.0);
                let b = store.add(format!("{name}.{l}.bias"), Tensor::from_vec(bias));
                LstmLayer { w_ih, w_hh, b }
            })
            .collect();
        Self { layers, n_in, hidden }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_state(&self) -> Vec<RecState> {
        vec![RecState::zeros(self.hidden); self.layers.len()]
    }

    /// Runs `x: [T, n_in]`; returns hidden outputs `[T, hidden]` of the top
    /// layer and the final state of every layer.
    pub fn forward<'t>(&self, p: &Params<'t>, x: Var<'t>, state: Option<&[RecState]>) -> (Var<'t>, Vec<RecState>) {
        let tape = x.tape();
        let h = self.hidden;
        let steps = x.shape()[0];
        let zeros = self.zero_state();
        let state = state.unwrap_or(&zeros);
        assert_eq!(state.len(), self.layers.len(), "LSTM state has wrong layer count");
        let mut out = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (layer, s) in self.layers.iter().zip(state) {
            let seq = out.lstm(
                tape.constant(s.h.clone()),
                tape.constant(s.c.clone()),
                p.get(layer.w_ih),
                p.get(layer.w_hh),
                p.get(layer.b),
            );
            let v = seq.value();
            let last = &v.data()[(steps - 1) * 2 * h..steps * 2 * h];
            next.push(RecState { h: Tensor::from_vec(last[..h].to_vec()), c: Tensor::from_vec(last[h..].to_vec()) });
            out = seq.slice(1, 0, h);
        }
        (out, next)
    }
}

/// Network with sinusoidal activations: `sin(ω_first·(xW+b))` on the first
/// layer, `sin(ω_hidden·(xW+b))` on the others, linear output layer.
#[derive(Debug, Clone)]
pub struct Siren {
    pub layers: Vec<Linear>,
    pub omega_first: f64,
    pub omega_hidden: f64,
}

impl Siren {
    /// Random initialization: first-layer weights uniform in `±1/n_in`,
    /// later weights in `±sqrt(6/n_in)/ω_hidden`.
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, widths: &[usize], omega_first: f64, omega_hidden: f64) -> Self {
        assert!(widths.len() >= 2);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = if i == 0 { 1.0 / w[0] as f64 } else { (6.0 / w[0] as f64).sqrt() / omega_hidden };
                let wid = store.uniform(rng, format!("{name}.{i}.weight"), &[w[0], w[1]], bound);
                let bid = store.uniform(rng, format!("{name}.{i}.bias"), &[w[1]], (1.0 / w[0] as f64).sqrt());
                Linear { w: wid, b: Some(bid), n_in: w[0], n_out: w[1] }
            })
            .collect();
        Self { layers, omega_first, omega_hidden }
    }

    /// Layers with given `(weight [in,out], bias [out])` values.
    pub fn from_weights(store: &mut ParamStore, name: &str, weights: Vec<(Tensor, Tensor)>, omega_first: f64, omega_hidden: f64) -> Self {
        let layers = weights
            .into_iter()
            .enumerate()
            .map(|(i, (w, b))| {
                let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
                let wid = store.add(format!("{name}.{i}.weight"), w);
                let bid = store.add(format!("{name}.{i}.bias"), b);
                Linear { w: wid, b: Some(bid), n_in, n_out }
            })
            .collect();
        Self { layers, omega_first, omega_hidden }
    }

    /// `x: [rows, n_in] -> [rows, n_out]`.
    pub fn forward<'t>(&self, p: &Params<'t>, mut x: Var<'t>) -> Var<'t> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x);
            if i < last {
                let omega = if i == 0 { self.omega_first } else { self.omega_hidden };
                x = x.scale(omega).sin();
            }
        }
        x
    }
}

/// Causal dilated convolution layer over `[channels, time]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub dilation: usize,
}

impl Conv1d {
    /// Weights and bias uniform in `±sqrt(1/(c_in·kernel))`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let bound = (1.0 / (c_in * kernel) as f64).sqrt();
        let w = store.uniform(rng, format!("{name}.weight"), &[c_out, c_in, kernel], bound);
        let b = bias.then(|| store.uniform(rng, format!("{name}.bias"), &[c_out], bound));
        Self { w, b, dilation }
    }

    pub fn forward<'t>(&self, p: &Params<'t>, x: Var<'t>) -> Var<'t> {
        x.conv1d(p.get(self.w), self.b.map(|b| p.get(b)), self.dilation)
    }
}

/// Per-channel normalization over time. Training uses the statistics of the
/// current sequence; evaluation uses running averages.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(vec![channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(vec![channels], 1.0)),
            eps: 1e-5,
        }
    }

    /// `h: [channels, time]`.
    pub fn forward<'t>(&self, p: &Params<'t>, ctx: &Ctx, h: Var<'t>) -> Var<'t> {
        let (mean, var) = if ctx.training {
            let mean = h.mean_axis(1);
            let centered = h - mean.unsqueeze(1);
            let var = centered.square().mean_axis(1);
            let mut stats = ctx.bn_stats.borrow_mut();
            stats.push((self.running_mean, mean.to_vec()));
            stats.push((self.running_var, var.to_vec()));
            (mean, var)
        } else {
            (p.get(self.running_mean), p.get(self.running_var))
        };
        let inv = var.add_scalar(self.eps).sqrt();
        let norm = (h - mean.unsqueeze(1)) / inv.unsqueeze(1);
        norm * p.get(self.gamma).unsqueeze(1) + p.get(self.beta).unsqueeze(1)
    }
}
