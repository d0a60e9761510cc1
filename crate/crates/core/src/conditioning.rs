//! Feature-wise modulation of convolutional activations and time-varying
//! conditioning sequences.
//!
//! Activations are `[channels, time]`. Temporal variants split time into
//! blocks of `block_size` samples (last block zero-padded) and modulate
//! block `b` with parameters computed from blocks `< b` and the carried
//! recurrent state, so every variant stays causal.

use afx_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Act, Linear, Lstm, Mlp, ParamStore, Params, RecState, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondKind {
    #[default]
    None,
    Film,
    Tfilm,
    Ttfilm,
    Tvfilm,
}

impl CondKind {
    pub fn is_temporal(self) -> bool {
        matches!(self, CondKind::Tfilm | CondKind::Ttfilm | CondKind::Tvfilm)
    }
}

/// Sizes of the conditioning networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondConfig {
    pub block_size: usize,
    pub film_hidden: usize,
    pub film_latent: usize,
    pub ttfilm_rank: usize,
    pub ttfilm_hidden: usize,
    pub tvfilm_latent: usize,
}

impl Default for CondConfig {
    fn default() -> Self {
        Self { block_size: 128, film_hidden: 16, film_latent: 32, ttfilm_rank: 8, ttfilm_hidden: 32, tvfilm_latent: 32 }
    }
}

impl CondConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("block_size", self.block_size),
            ("film_hidden", self.film_hidden),
            ("film_latent", self.film_latent),
            ("ttfilm_rank", self.ttfilm_rank),
            ("ttfilm_hidden", self.ttfilm_hidden),
            ("tvfilm_latent", self.tvfilm_latent),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("conditioning {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// `γ · h + β` with `γ, β: [C]` broadcast over time.
pub fn film_apply<'t>(h: Var<'t>, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
    let c = channels_of(h)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Shape(format!(
            "FiLM parameters {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(h * gamma.unsqueeze(1) + beta.unsqueeze(1))
}

/// Blockwise `γ_b · h + β_b` with `γ, β: [NB, C]`; block `b` covers samples
/// `b·block_size .. (b+1)·block_size`.
pub fn blockwise_affine<'t>(h: Var<'t>, gamma: Var<'t>, beta: Var<'t>, block_size: usize) -> Result<Var<'t>> {
    let c = channels_of(h)?;
    let t = h.shape()[1];
    let nb = t.div_ceil(block_size.max(1));
    if gamma.shape() != [nb, c] || beta.shape() != [nb, c] {
        return Err(Error::Shape(format!(
            "temporal FiLM parameters {:?} do not match {nb} blocks x {c} channels",
            gamma.shape()
        )));
    }
    let g = gamma.transpose().upsample_nearest(block_size, t);
    let b = beta.transpose().upsample_nearest(block_size, t);
    Ok(h * g + b)
}

fn channels_of(h: Var<'_>) -> Result<usize> {
    let s = h.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("activations must be [channels, time], got {s:?}")));
    }
    Ok(s[0])
}

/// Linear map to `(γ, β)`; zero weights, `γ` bias 1 and `β` bias 0 so it
/// starts as the identity modulation.
#[derive(Debug, Clone)]
pub struct FilmHead {
    pub linear: Linear,
    pub channels: usize,
}

impl FilmHead {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, channels: usize) -> Self {
        let mut bias = vec![1.0; channels];
        bias.extend(std::iter::repeat(0.0).take(channels));
        Self { linear: Linear::with_bias(store, name, n_in, bias), channels }
    }

    /// `z: [n_in]` or `[NB, n_in]` to `(γ, β)` of shape `[C]` or `[NB, C]`.
    pub fn forward<'t>(&self, p: &Params<'t>, z: Var<'t>) -> (Var<'t>, Var<'t>) {
        let out = self.linear.forward(p, z);
        let c = self.channels;
        (out.slice(-1, 0, c), out.slice(-1, c, 2 * c))
    }
}

/// Static FiLM: an MLP maps controls to a latent `z` shared by all network
/// blocks, each of which owns a [`FilmHead`].
#[derive(Debug, Clone)]
pub struct Film {
    pub mlp: Mlp,
}

impl Film {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, num_controls: usize, cfg: &CondConfig) -> Self {
        let widths = [num_controls, cfg.film_hidden, cfg.film_latent];
        Self { mlp: Mlp::new(store, rng, name, &widths, Act::Tanh, Act::Tanh) }
    }

    pub fn latent<'t>(&self, p: &Params<'t>, c: Var<'t>) -> Var<'t> {
        self.mlp.forward(p, c)
    }
}

/// Runs `lstm` over `seq: [NB, n_in]` and returns, for each block, the
/// output available before that block: row 0 is the incoming state's top
/// hidden vector, row `b` the output after block `b - 1`.
fn lagged_lstm<'t>(lstm: &Lstm, p: &Params<'t>, seq: Var<'t>, state: Option<&[RecState]>) -> (Var<'t>, Vec<RecState>) {
    let nb = seq.shape()[0];
    let prev = match state {
        Some(s) => s.last().expect("LSTM state has at least one layer").h.clone(),
        None => Tensor::zeros(vec![lstm.hidden]),
    };
    let (out, next) = lstm.forward(p, seq, state);
    let first = p.tape().constant(prev.reshaped(vec![1, lstm.hidden]));
    let lagged = if nb == 1 { first } else { Var::concat(&[first, out.slice(0, 0, nb - 1)], 0) };
    (lagged, next)
}

/// `[NB, extra]` block-repeated controls appended to `feat: [NB, F]`.
fn with_controls<'t>(feat: Var<'t>, c: Option<Var<'t>>) -> Var<'t> {
    match c {
        Some(c) if c.numel() > 0 => {
            let nb = feat.shape()[0];
            Var::concat(&[feat, c.unsqueeze(0).repeat(0, nb)], 1)
        }
        _ => feat,
    }
}

/// Temporal FiLM for one network block: block max-pooled activations plus
/// controls feed an LSTM of width `2C`; a linear head emits `(γ, β)`.
#[derive(Debug, Clone)]
pub struct TFilm {
    pub lstm: Lstm,
    pub head: FilmHead,
}

impl TFilm {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, channels: usize, num_controls: usize) -> Self {
        Self {
            lstm: Lstm::new(store, rng, &format!("{name}.lstm"), channels + num_controls, 2 * channels, 1),
            head: FilmHead::new(store, &format!("{name}.head"), 2 * channels, channels),
        }
    }

    pub fn forward<'t>(
        &self,
        p: &Params<'t>,
        h: Var<'t>,
        c: Option<Var<'t>>,
        state: Option<&[RecState]>,
        block_size: usize,
    ) -> Result<(Var<'t>, Vec<RecState>)> {
        channels_of(h)?;
        let feat = with_controls(h.max_pool1d(block_size).transpose(), c);
        let (z, next) = lagged_lstm(&self.lstm, p, feat, state);
        let (g, b) = self.head.forward(p, z);
        Ok((blockwise_affine(h, g, b, block_size)?, next))
    }
}

/// Reduced temporal FiLM: pooled activations are projected to `r` channels
/// before an LSTM of width `r`; a small MLP expands its output to `(γ, β)`.
#[derive(Debug, Clone)]
pub struct TTFilm {
    pub proj: Linear,
    pub lstm: Lstm,
    pub expand: Linear,
    pub head: FilmHead,
}

impl TTFilm {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, channels: usize, num_controls: usize, cfg: &CondConfig) -> Self {
        let r = cfg.ttfilm_rank;
        Self {
            proj: Linear::new(store, rng, &format!("{name}.proj"), channels, r, true),
            lstm: Lstm::new(store, rng, &format!("{name}.lstm"), r + num_controls, r, 1),
            expand: Linear::new(store, rng, &format!("{name}.expand"), r, cfg.ttfilm_hidden, true),
            head: FilmHead::new(store, &format!("{name}.head"), cfg.ttfilm_hidden, channels),
        }
    }

    pub fn forward<'t>(
        &self,
        p: &Params<'t>,
        h: Var<'t>,
        c: Option<Var<'t>>,
        state: Option<&[RecState]>,
        block_size: usize,
    ) -> Result<(Var<'t>, Vec<RecState>)> {
        channels_of(h)?;
        let pooled = self.proj.forward(p, h.max_pool1d(block_size).transpose());
        let (z, next) = lagged_lstm(&self.lstm, p, with_controls(pooled, c), state);
        let (g, b) = self.head.forward(p, self.expand.forward(p, z).tanh());
        Ok((blockwise_affine(h, g, b, block_size)?, next))
    }
}

/// Recurrent controller producing a latent sequence `[NB, latent]` from the
/// block-averaged model input and the controls. One instance serves a
/// whole network (TVFiLM) or feeds a recurrent model's input (TVCond).
#[derive(Debug, Clone)]
pub struct LatentController {
    pub lstm: Lstm,
}

impl LatentController {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, num_controls: usize, latent: usize) -> Self {
        Self { lstm: Lstm::new(store, rng, name, 1 + num_controls, latent, 1) }
    }

    pub fn latent_dim(&self) -> usize {
        self.lstm.hidden
    }

    pub fn zero_state(&self) -> Vec<RecState> {
        self.lstm.zero_state()
    }

    /// `x: [T]` to `z: [ceil(T / block_size), latent]`.
    pub fn forward<'t>(
        &self,
        p: &Params<'t>,
        x: Var<'t>,
        c: Option<Var<'t>>,
        state: Option<&[RecState]>,
        block_size: usize,
    ) -> (Var<'t>, Vec<RecState>) {
        let pooled = x.avg_pool1d(block_size);
        let nb = pooled.numel();
        lagged_lstm(&self.lstm, p, with_controls(pooled.reshape(vec![nb, 1]), c), state)
    }

    /// Zero-order-held latent sequence `[T, latent]` for concatenation with
    /// a recurrent model's input.
    pub fn sequence<'t>(
        &self,
        p: &Params<'t>,
        x: Var<'t>,
        c: Option<Var<'t>>,
        state: Option<&[RecState]>,
        block_size: usize,
    ) -> (Var<'t>, Vec<RecState>) {
        let t = x.numel();
        let (z, next) = self.forward(p, x, c, state, block_size);
        (z.transpose().upsample_nearest(block_size, t).transpose(), next)
    }
}

/// Per-network-block modulation from a shared latent sequence.
pub fn tvfilm_modulate<'t>(p: &Params<'t>, head: &FilmHead, h: Var<'t>, z: Var<'t>, block_size: usize) -> Result<Var<'t>> {
    let (g, b) = head.forward(p, z);
    blockwise_affine(h, g, b, block_size)
}
