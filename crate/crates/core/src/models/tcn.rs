//! Dilated causal convolution stacks: plain residual blocks (TCN) and
//! gated blocks whose activations are mixed at the output (GCN).

use afx_autodiff::Var;

use super::{ModelState, TcnConfig};
use crate::conditioning::{film_apply, tvfilm_modulate, CondKind, Film, FilmHead, LatentController, TFilm, TTFilm};
use crate::error::Result;
use crate::nn::{BatchNorm, Conv1d, Ctx, ParamStore, Params, Rng};

#[derive(Debug, Clone)]
enum BlockCond {
    None,
    Film(FilmHead),
    TFilm(TFilm),
    TTFilm(TTFilm),
    TvFilm(FilmHead),
}

#[derive(Debug, Clone)]
struct Block {
    conv: Conv1d,
    bn: Option<BatchNorm>,
    cond: BlockCond,
    /// 1x1 output conv of gated blocks.
    out: Option<Conv1d>,
    /// 1x1 shortcut when input and output channel counts differ.
    shortcut: Option<Conv1d>,
}

#[derive(Debug, Clone)]
pub struct TcnModel {
    cfg: TcnConfig,
    gated: bool,
    blocks: Vec<Block>,
    film: Option<Film>,
    latent: Option<LatentController>,
    head: Conv1d,
}

impl TcnModel {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, cfg: &TcnConfig, num_controls: usize, gated: bool) -> Self {
        let c = cfg.channels;
        let cc = &cfg.cond_config;
        let prefix = if gated { "gcn" } else { "tcn" };
        let film = (cfg.cond == CondKind::Film).then(|| Film::new(store, rng, &format!("{prefix}.film"), num_controls, cc));
        let latent = (cfg.cond == CondKind::Tvfilm)
            .then(|| LatentController::new(store, rng, &format!("{prefix}.tvfilm"), num_controls, cc.tvfilm_latent));
        let mut dilation = 1;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let name = format!("{prefix}.block{i}");
                let cin = if i == 0 { 1 } else { c };
                let conv_out = if gated { 2 * c } else { c };
                let conv = Conv1d::new(store, rng, &format!("{name}.conv"), cin, conv_out, cfg.kernel, dilation, true);
                dilation *= cfg.dilation_growth;
                let bn = cfg.batchnorm.then(|| BatchNorm::new(store, &format!("{name}.bn"), conv_out));
                let cond_name = format!("{name}.cond");
                let cond = match cfg.cond {
                    CondKind::None => BlockCond::None,
                    CondKind::Film => BlockCond::Film(FilmHead::new(store, &cond_name, cc.film_latent, c)),
                    CondKind::Tfilm => BlockCond::TFilm(TFilm::new(store, rng, &cond_name, c, num_controls)),
                    CondKind::Ttfilm => BlockCond::TTFilm(TTFilm::new(store, rng, &cond_name, c, num_controls, cc)),
                    CondKind::Tvfilm => BlockCond::TvFilm(FilmHead::new(store, &cond_name, cc.tvfilm_latent, c)),
                };
                let out = gated.then(|| Conv1d::new(store, rng, &format!("{name}.out"), c, c, 1, 1, true));
                let shortcut = (cin != c).then(|| Conv1d::new(store, rng, &format!("{name}.shortcut"), cin, c, 1, 1, true));
                Block { conv, bn, cond, out, shortcut }
            })
            .collect();
        let head_in = if gated { c * cfg.blocks } else { c };
        let head = Conv1d::new(store, rng, &format!("{prefix}.head"), head_in, 1, 1, 1, true);
        Self { cfg: *cfg, gated, blocks, film, latent, head }
    }

    /// One state slot per temporal conditioning network: the shared latent
    /// controller first, then one per block.
    pub fn zero_state(&self) -> ModelState {
        let mut s = Vec::new();
        if let Some(l) = &self.latent {
            s.push(l.zero_state());
        }
        for b in &self.blocks {
            match &b.cond {
                BlockCond::TFilm(t) => s.push(t.lstm.zero_state()),
                BlockCond::TTFilm(t) => s.push(t.lstm.zero_state()),
                _ => {}
            }
        }
        ModelState(s)
    }

    pub fn forward<'t>(
        &self,
        p: &Params<'t>,
        ctx: &Ctx,
        x: Var<'t>,
        c: Option<Var<'t>>,
        state: &ModelState,
    ) -> Result<(Var<'t>, ModelState)> {
        let t = x.numel();
        let bs = self.cfg.cond_config.block_size;
        let mut slots = state.0.iter();
        let mut next = Vec::new();
        let z_static = self.film.as_ref().map(|f| f.latent(p, c.expect("validated by the model")));
        let z_seq = match &self.latent {
            Some(l) => {
                let (z, st) = l.forward(p, x, c, slots.next().map(|v| v.as_slice()), bs);
                next.push(st);
                Some(z)
            }
            None => None,
        };
        let mut h = x.reshape(vec![1, t]);
        let mut skips = Vec::new();
        let c_dim = self.cfg.channels;
        for b in &self.blocks {
            let mut a = b.conv.forward(p, h);
            if let Some(bn) = &b.bn {
                a = bn.forward(p, ctx, a);
            }
            let mut act = if self.gated {
                let gate = a.slice(0, c_dim, 2 * c_dim).sigmoid();
                a.slice(0, 0, c_dim).tanh() * gate
            } else {
                a
            };
            act = match &b.cond {
                BlockCond::None => act,
                BlockCond::Film(head) => {
                    let (g, be) = head.forward(p, z_static.expect("FiLM latent"));
                    film_apply(act, g, be)?
                }
                BlockCond::TFilm(tf) => {
                    let (y, st) = tf.forward(p, act, c, slots.next().map(|v| v.as_slice()), bs)?;
                    next.push(st);
                    y
                }
                BlockCond::TTFilm(tf) => {
                    let (y, st) = tf.forward(p, act, c, slots.next().map(|v| v.as_slice()), bs)?;
                    next.push(st);
                    y
                }
                BlockCond::TvFilm(head) => tvfilm_modulate(p, head, act, z_seq.expect("TVFiLM latent"), bs)?,
            };
            let res = match &b.shortcut {
                Some(s) => s.forward(p, h),
                None => h,
            };
            h = match &b.out {
                Some(out) => {
                    skips.push(act);
                    out.forward(p, act) + res
                }
                None => act.tanh() + res,
            };
        }
        let mix = if self.gated { Var::concat(&skips, 0) } else { h };
        Ok((self.head.forward(p, mix).reshape(vec![t]), ModelState(next)))
    }
}
