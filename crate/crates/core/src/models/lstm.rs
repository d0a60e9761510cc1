//! Single-layer LSTM followed by a linear layer and `tanh`.

use afx_autodiff::Var;

use super::{LstmCond, LstmConfig, ModelState};
use crate::conditioning::LatentController;
use crate::error::Result;
use crate::nn::{Linear, Lstm, ParamStore, Params, Rng};

#[derive(Debug, Clone)]
pub struct LstmModel {
    cfg: LstmConfig,
    lstm: Lstm,
    out: Linear,
    latent: Option<LatentController>,
}

impl LstmModel {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, cfg: &LstmConfig, num_controls: usize) -> Self {
        let latent = (cfg.cond == LstmCond::Tvcond)
            .then(|| LatentController::new(store, rng, "lstm.tvcond", num_controls, cfg.latent));
        let n_in = match cfg.cond {
            LstmCond::None => 1,
            LstmCond::Concat => 1 + num_controls,
            LstmCond::Tvcond => 1 + cfg.latent,
        };
        let lstm = Lstm::new(store, rng, "lstm.rnn", n_in, cfg.hidden, 1);
        let out = Linear::new(store, rng, "lstm.out", cfg.hidden, 1, true);
        Self { cfg: *cfg, lstm, out, latent }
    }

    /// Input width of the recurrent layer.
    pub fn input_dim(&self) -> usize {
        self.lstm.n_in
    }

    /// Slot 0 holds the main LSTM, slot 1 the latent controller.
    pub fn zero_state(&self) -> ModelState {
        let mut s = vec![self.lstm.zero_state()];
        if let Some(l) = &self.latent {
            s.push(l.zero_state());
        }
        ModelState(s)
    }

    pub fn forward<'t>(&self, p: &Params<'t>, x: Var<'t>, c: Option<Var<'t>>, state: &ModelState) -> Result<(Var<'t>, ModelState)> {
        let t = x.numel();
        let col = x.reshape(vec![t, 1]);
        let mut next_latent = None;
        let input = match (self.cfg.cond, &self.latent) {
            (LstmCond::Tvcond, Some(l)) => {
                let (seq, st) = l.sequence(p, x, c, state.0.get(1).map(|v| v.as_slice()), self.cfg.block_size);
                next_latent = Some(st);
                Var::concat(&[col, seq], 1)
            }
            (LstmCond::Concat, _) => {
                let c = c.expect("validated by the model");
                Var::concat(&[col, c.unsqueeze(0).repeat(0, t)], 1)
            }
            _ => col,
        };
        let (h, st) = self.lstm.forward(p, input, state.0.first().map(|v| v.as_slice()));
        let y = self.out.forward(p, h).tanh().reshape(vec![t]);
        let mut next = vec![st];
        next.extend(next_latent);
        Ok((y, ModelState(next)))
    }
}
