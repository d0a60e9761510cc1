//! Optimization loop: Adam, plain and truncated-BPTT steps, evaluation,
//! run logs and checkpoints.

use std::path::Path;
use std::time::Instant;

use afx_autodiff::{Precision, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{Segment, Splits};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, metrics, LossWeights, MrStftConfig};
use crate::models::{Model, ModelSpec, ModelState};
use crate::nn::{Ctx, ParamStore, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Step decay: the rate is multiplied by `decay_factor` every
    /// `decay_every` applied updates; 0 keeps it constant.
    pub decay_every: u64,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay_every: 0, decay_factor: 0.5 }
    }
}

impl AdamConfig {
    /// Learning rate of update `t` (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi(((t.max(1) - 1) / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TbpttConfig {
    pub enabled: bool,
    pub chunk_len: usize,
    pub warmup_len: usize,
}

impl Default for TbpttConfig {
    fn default() -> Self {
        Self { enabled: false, chunk_len: 2048, warmup_len: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub mrstft: MrStftConfig,
    pub tbptt: TbpttConfig,
    /// Validation period in steps; 0 disables validation.
    pub val_every: u64,
    /// Leading samples of each segment excluded from the loss.
    pub loss_skip: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 15000,
            batch_size: 1,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            mrstft: MrStftConfig::default(),
            tbptt: TbpttConfig::default(),
            val_every: 500,
            loss_skip: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 || self.batch_size < 1 {
            return Err(Error::InvalidParameter("max_steps and batch_size must be >= 1".into()));
        }
        let a = &self.adam;
        let ok_decay = a.decay_factor > 0.0 && a.decay_factor <= 1.0;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || !ok_decay {
            return Err(Error::InvalidParameter(format!("invalid Adam settings {a:?}")));
        }
        if self.tbptt.enabled && self.tbptt.chunk_len < 1 {
            return Err(Error::InvalidParameter("tbptt chunk_len must be >= 1".into()));
        }
        self.loss.validate()?;
        if self.loss.w_mrstft > 0.0 {
            self.mrstft.validate()?;
        }
        Ok(())
    }
}

/// One Adam update with bias correction for iteration `t` (1-based), using
/// the rate `cfg.lr_at(t)`.
pub fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let lr = cfg.lr_at(t);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        w[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
}

/// Adam moments for every store entry (buffers keep empty moments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Steps rejected for non-finite loss or gradients.
    pub skipped: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> =
            store.entries().iter().map(|e| if e.trainable { vec![0.0; e.value.numel()] } else { Vec::new() }).collect();
        Self { cfg, t: 0, m: zeros.clone(), v: zeros, skipped: 0 }
    }

    /// Applies `grads` (one per store entry, `None` for buffers). Returns
    /// false and leaves everything untouched when a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> bool {
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            self.skipped += 1;
            log::warn!("non-finite gradient; update skipped");
            return false;
        }
        self.t += 1;
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let mut w = store.get(id).clone();
            adam_update(w.data_mut(), g.data(), &mut self.m[k], &mut self.v[k], self.t, &self.cfg);
            store.set(id, w);
        }
        true
    }
}

/// Loss components of one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub tot: f64,
    pub l1: f64,
    pub mrstft: f64,
    /// L2 norm of the full gradient; 0 when no gradient was computed.
    pub grad_norm: f64,
    pub applied: bool,
}

fn control_var<'t>(tape: &'t Tape, c: &[f64]) -> Option<Var<'t>> {
    (!c.is_empty()).then(|| tape.constant(Tensor::from_vec(c.to_vec())))
}

struct Piece<'a> {
    x: &'a [f64],
    y: &'a [f64],
    controls: &'a [f64],
}

fn mean_of<'t>(k: f64, vs: Vec<Var<'t>>) -> Var<'t> {
    vs.into_iter().reduce(|a, b| a + b).expect("non-empty batch").scale(k)
}

/// Forward, loss, backward and update over `pieces` with per-piece
/// incoming states; returns the loss and the outgoing states.
fn update(
    model: &mut Model,
    adam: &mut Adam,
    pieces: &[Piece<'_>],
    states: &[Option<ModelState>],
    cfg: &TrainConfig,
    precision: Precision,
) -> Result<(StepLoss, Vec<ModelState>)> {
    let tape = Tape::with_precision(precision);
    let p = model.store.bind(&tape);
    let ctx = Ctx::train();
    let mut parts = Vec::with_capacity(pieces.len());
    let mut next = Vec::with_capacity(pieces.len());
    for (piece, st) in pieces.iter().zip(states) {
        let x = tape.constant(Tensor::from_vec(piece.x.to_vec()));
        let (y_hat, st) = model.forward(&p, &ctx, x, control_var(&tape, piece.controls), st.as_ref())?;
        let skip = cfg.loss_skip.min(piece.y.len().saturating_sub(1));
        let n = piece.y.len();
        let y = tape.constant(Tensor::from_vec(piece.y[skip..].to_vec()));
        parts.push(combined_loss(y, y_hat.slice(0, skip, n), &cfg.loss, &cfg.mrstft)?);
        next.push(st);
    }
    let k = 1.0 / parts.len() as f64;
    let total = mean_of(k, parts.iter().map(|l| l.total).collect());
    let l1 = mean_of(k, parts.iter().map(|l| l.l1).collect()).item();
    let mr = mean_of(k, parts.iter().map(|l| l.mrstft).collect()).item();
    let loss = StepLoss { tot: total.item(), l1, mrstft: mr, grad_norm: 0.0, applied: false };
    if !loss.tot.is_finite() {
        adam.skipped += 1;
        log::warn!("non-finite loss {}; update skipped", loss.tot);
        return Ok((loss, next));
    }
    let grads = tape.backward(total)?;
    let entries = model.store.entries();
    let mut g = Vec::with_capacity(entries.len());
    for (e, v) in entries.iter().zip(p.vars()) {
        g.push(if e.trainable { Some(grads.get(*v)?.clone()) } else { None });
    }
    let grad_norm = g.iter().flatten().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    let bn = ctx.take_bn_stats();
    drop(p);
    let applied = adam.step(&mut model.store, &g);
    if applied {
        for (id, stat) in bn {
            let mut run = model.store.get(id).clone();
            for (r, s) in run.data_mut().iter_mut().zip(&stat) {
                *r = (1.0 - crate::nn::BatchNorm::MOMENTUM) * *r + crate::nn::BatchNorm::MOMENTUM * s;
            }
            model.store.set(id, run);
        }
    }
    Ok((StepLoss { applied, grad_norm, ..loss }, next))
}

/// One update on a batch of segments.
pub fn train_step(model: &mut Model, adam: &mut Adam, batch: &[&Segment], cfg: &TrainConfig, precision: Precision) -> Result<StepLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let pieces: Vec<Piece<'_>> = batch.iter().map(|s| Piece { x: &s.x, y: &s.y, controls: &s.controls }).collect();
    let states = vec![None; pieces.len()];
    Ok(update(model, adam, &pieces, &states, cfg, precision)?.0)
}

/// Truncated backpropagation through time over a batch of equally long
/// sequences: `warmup_len` samples settle the state without gradients,
/// then every full chunk of `chunk_len` samples gets one update with the
/// state carried forward as plain values.
pub fn tbptt_train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&Segment],
    cfg: &TrainConfig,
    precision: Precision,
) -> Result<Vec<StepLoss>> {
    let Some(first) = batch.first() else {
        return Err(Error::InvalidArgument("empty batch".into()));
    };
    let len = first.x.len();
    if batch.iter().any(|s| s.x.len() != len) {
        return Err(Error::Shape("TBPTT batch sequences differ in length".into()));
    }
    let tb = &cfg.tbptt;
    if tb.warmup_len + tb.chunk_len > len {
        return Err(Error::InvalidArgument(format!(
            "chunk_len {} plus warmup_len {} exceeds the sequence length {len}",
            tb.chunk_len, tb.warmup_len
        )));
    }
    let mut states: Vec<Option<ModelState>> = vec![None; batch.len()];
    if tb.warmup_len > 0 {
        let tape = Tape::inference(precision);
        let p = model.store.bind(&tape);
        let ctx = Ctx::eval();
        for (s, st) in batch.iter().zip(states.iter_mut()) {
            let x = tape.constant(Tensor::from_vec(s.x[..tb.warmup_len].to_vec()));
            let (_, next) = model.forward(&p, &ctx, x, control_var(&tape, &s.controls), None)?;
            *st = Some(next);
        }
    }
    let chunks = (len - tb.warmup_len) / tb.chunk_len;
    let mut out = Vec::with_capacity(chunks);
    for k in 0..chunks {
        let lo = tb.warmup_len + k * tb.chunk_len;
        let hi = lo + tb.chunk_len;
        let pieces: Vec<Piece<'_>> =
            batch.iter().map(|s| Piece { x: &s.x[lo..hi], y: &s.y[lo..hi], controls: &s.controls }).collect();
        let (loss, next) = update(model, adam, &pieces, &states, cfg, precision)?;
        states = next.into_iter().map(Some).collect();
        out.push(loss);
    }
    Ok(out)
}

/// Mean metrics over a set of segments.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub tot: f64,
    pub l1: f64,
    pub mrstft: f64,
    pub esr: f64,
    pub dc: f64,
    pub mae: f64,
    pub mse: f64,
    pub mape: f64,
}

/// Renders every segment in evaluation mode from a zero state and averages
/// the metrics. `tot = w_l1 · l1 + w_mrstft · mrstft` per segment.
pub fn evaluate(model: &Model, segments: &[Segment], cfg: &TrainConfig, precision: Precision) -> Result<EvalMetrics> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut acc = EvalMetrics::default();
    for s in segments {
        let y_hat = model.render(&s.x, Some(&s.controls), precision)?;
        let skip = cfg.loss_skip.min(s.y.len().saturating_sub(1));
        let (y, y_hat) = (&s.y[skip..], &y_hat[skip..]);
        let l1 = metrics::l1(y, y_hat)?;
        let mr = if cfg.loss.w_mrstft != 0.0 { metrics::mrstft(y, y_hat, &cfg.mrstft)? } else { 0.0 };
        acc.tot += cfg.loss.w_l1 * l1 + cfg.loss.w_mrstft * mr;
        acc.l1 += l1;
        acc.mrstft += mr;
        acc.esr += metrics::esr(y, y_hat)?;
        acc.dc += metrics::dc_loss(y, y_hat)?;
        acc.mae += metrics::mae(y, y_hat)?;
        acc.mse += metrics::mse(y, y_hat)?;
        acc.mape += metrics::mape(y, y_hat)?;
    }
    let n = segments.len() as f64;
    Ok(EvalMetrics {
        tot: acc.tot / n,
        l1: acc.l1 / n,
        mrstft: acc.mrstft / n,
        esr: acc.esr / n,
        dc: acc.dc / n,
        mae: acc.mae / n,
        mse: acc.mse / n,
        mape: acc.mape / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub phase: Phase,
    pub tot: f64,
    pub l1: f64,
    pub mrstft: f64,
    pub metrics: Option<EvalMetrics>,
    pub skipped: u64,
}

/// Per-step losses and periodic validation metrics. Wall-clock times are
/// kept apart so two runs compare equal on `rows`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub wall: Vec<f64>,
}

impl RunLog {
    pub fn push(&mut self, row: LogRow, wall: f64) {
        if let Some(last) = self.rows.last() {
            debug_assert!(row.step >= last.step, "RunLog steps are monotone");
        }
        self.rows.push(row);
        self.wall.push(wall);
    }

    /// Columns `step,phase,loss_tot,loss_l1,loss_mrstft,esr,dc,mae,mse,mape,skipped,wall_s`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "step", "phase", "loss_tot", "loss_l1", "loss_mrstft", "esr", "dc", "mae", "mse", "mape", "skipped", "wall_s",
        ])?;
        for (r, wall) in self.rows.iter().zip(&self.wall) {
            let f = |v: f64| format!("{v:?}");
            let m = |g: fn(&EvalMetrics) -> f64| r.metrics.as_ref().map(|e| f(g(e))).unwrap_or_default();
            let phase = match r.phase {
                Phase::Train => "train",
                Phase::Val => "val",
            };
            w.write_record([
                r.step.to_string(),
                phase.to_string(),
                f(r.tot),
                f(r.l1),
                f(r.mrstft),
                m(|e| e.esr),
                m(|e| e.dc),
                m(|e| e.mae),
                m(|e| e.mse),
                m(|e| e.mape),
                r.skipped.to_string(),
                format!("{wall:.3}"),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "afx-checkpoint-v1";

/// Model document, every stored tensor, optimizer state and step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub step: u64,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<Adam>,
    #[serde(default)]
    pub best_val: Option<f64>,
}

impl Checkpoint {
    pub fn capture(model: &Model, adam: Option<&Adam>, step: u64) -> Self {
        let params = model
            .store
            .entries()
            .iter()
            .map(|e| NamedTensor { name: e.name.clone(), shape: e.value.shape().to_vec(), data: e.value.data().to_vec() })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            spec: model.spec.clone(),
            step,
            params,
            optimizer: adam.cloned(),
            best_val: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("{}: unknown format {:?}", path.display(), c.format)));
        }
        Ok(c)
    }

    /// Copies the stored tensors into `model`, which must have been built
    /// from the same document.
    pub fn apply(&self, model: &mut Model) -> Result<()> {
        if self.spec != model.spec {
            return Err(Error::Checkpoint("checkpoint was written for a different model".into()));
        }
        if self.params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (t, id) in self.params.iter().zip(ids) {
            let e = &model.store.entries()[id.index()];
            if e.name != t.name || e.value.shape() != t.shape.as_slice() || t.data.len() != e.value.numel() {
                return Err(Error::Checkpoint(format!("tensor {} does not match model tensor {}", t.name, e.name)));
            }
            model.store.set(id, Tensor::new(t.shape.clone(), t.data.clone()));
        }
        if let Some(a) = &self.optimizer {
            if a.m.len() != model.store.len() || a.v.len() != model.store.len() {
                return Err(Error::Checkpoint("optimizer state does not match the model".into()));
            }
        }
        Ok(())
    }

    /// Builds the model and loads the stored tensors.
    pub fn restore_model(&self) -> Result<Model> {
        let mut m = Model::build(&self.spec, 0)?;
        self.apply(&mut m)?;
        Ok(m)
    }
}

/// Segment indices for step `step`: epochs are seeded permutations of the
/// training set and batches run through them in order, so the order depends
/// only on `(seed, step)`.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for k in 0..batch_size as u64 {
        let pos = step * batch_size as u64 + k;
        let epoch = pos / n as u64;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut rng = Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("set above").1[(pos % n as u64) as usize]);
    }
    out
}

/// Model, optimizer and log of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub cfg: TrainConfig,
    pub precision: Precision,
    pub step: u64,
    pub log: RunLog,
    pub best_val: Option<f64>,
    /// Parameters at the lowest validation total seen so far.
    pub best: Option<Checkpoint>,
    started: Instant,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, precision: Precision) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(&model.store, cfg.adam);
        Ok(Self { model, adam, cfg, precision, step: 0, log: RunLog::default(), best_val: None, best: None, started: Instant::now() })
    }

    /// The model at the best validation point, or the current one when no
    /// validation has run.
    pub fn best_model(&self) -> Result<Model> {
        match &self.best {
            Some(c) => c.restore_model(),
            None => Ok(self.model.clone()),
        }
    }

    /// Resumes from a checkpoint holding optimizer state.
    pub fn resume(ckpt: &Checkpoint, cfg: TrainConfig, precision: Precision) -> Result<Self> {
        let model = ckpt.restore_model()?;
        let mut t = Self::new(model, cfg, precision)?;
        if let Some(a) = &ckpt.optimizer {
            t.adam = a.clone();
            t.adam.cfg = t.cfg.adam;
        }
        t.step = ckpt.step;
        t.best_val = ckpt.best_val;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { best_val: self.best_val, ..Checkpoint::capture(&self.model, Some(&self.adam), self.step) }
    }

    fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// One optimizer step (or one TBPTT sequence) on the batch chosen for the
    /// current step. Returns the mean loss of the updates made.
    pub fn step_once(&mut self, train: &[Segment]) -> Result<StepLoss> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let idx = batch_indices(self.cfg.seed, self.step, self.cfg.batch_size, train.len());
        let batch: Vec<&Segment> = idx.iter().map(|&i| &train[i]).collect();
        let loss = if self.cfg.tbptt.enabled {
            let all = tbptt_train_step(&mut self.model, &mut self.adam, &batch, &self.cfg, self.precision)?;
            let n = all.len() as f64;
            StepLoss {
                tot: all.iter().map(|l| l.tot).sum::<f64>() / n,
                l1: all.iter().map(|l| l.l1).sum::<f64>() / n,
                mrstft: all.iter().map(|l| l.mrstft).sum::<f64>() / n,
                grad_norm: all.iter().map(|l| l.grad_norm).sum::<f64>() / n,
                applied: all.iter().any(|l| l.applied),
            }
        } else {
            train_step(&mut self.model, &mut self.adam, &batch, &self.cfg, self.precision)?
        };
        self.step += 1;
        let row = LogRow {
            step: self.step,
            phase: Phase::Train,
            tot: loss.tot,
            l1: loss.l1,
            mrstft: loss.mrstft,
            metrics: None,
            skipped: self.adam.skipped,
        };
        let wall = self.elapsed();
        self.log.push(row, wall);
        Ok(loss)
    }

    pub fn validate(&mut self, val: &[Segment]) -> Result<EvalMetrics> {
        let m = evaluate(&self.model, val, &self.cfg, self.precision)?;
        let row = LogRow {
            step: self.step,
            phase: Phase::Val,
            tot: m.tot,
            l1: m.l1,
            mrstft: m.mrstft,
            metrics: Some(m),
            skipped: self.adam.skipped,
        };
        let wall = self.elapsed();
        self.log.push(row, wall);
        Ok(m)
    }

    /// Trains until `max_steps`, validating every `val_every` steps. With an
    /// output directory, writes `last.ckpt.json` at each validation and
    /// `best.ckpt.json` whenever the validation total improves.
    pub fn run(&mut self, splits: &Splits, out_dir: Option<&Path>) -> Result<()> {
        while self.step < self.cfg.max_steps {
            let loss = self.step_once(&splits.train)?;
            log::debug!("step {} loss {:.6}", self.step, loss.tot);
            let at_val = self.cfg.val_every > 0 && self.step % self.cfg.val_every == 0;
            if (at_val || self.step == self.cfg.max_steps) && !splits.val.is_empty() {
                let m = self.validate(&splits.val)?;
                log::info!("step {} val tot {:.6} esr {:.6}", self.step, m.tot, m.esr);
                let better = self.best_val.map_or(true, |b| m.tot < b);
                if better {
                    self.best_val = Some(m.tot);
                    self.best = Some(self.checkpoint());
                }
                if let Some(dir) = out_dir {
                    if better {
                        self.checkpoint().save(&dir.join("best.ckpt.json"))?;
                    }
                    self.checkpoint().save(&dir.join("last.ckpt.json"))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join("last.ckpt.json"))?;
        }
        Ok(())
    }
}
