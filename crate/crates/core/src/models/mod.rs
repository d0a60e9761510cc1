//! Model documents and built models.
//!
//! A [`ModelSpec`] is the serializable description; [`Model::build`] turns
//! it into a [`ParamStore`] plus the network structure.

mod graybox;
mod lstm;
mod tcn;

use afx_autodiff::{Precision, Tape, Tensor, Var};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{CondConfig, CondKind};
use crate::controllers::{ControllerSpec, DEFAULT_BLOCK_SIZE};
use crate::dsp::ProcessorSpec;
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamStore, Params, RecState, Rng};

pub use graybox::{GrayBox, Stage, StageTrace};
pub use lstm::LstmModel;
pub use tcn::TcnModel;

/// Samples seen by one output sample of a dilated convolution stack:
/// `1 + (kernel - 1) · Σ_{i < blocks} growth^i`.
pub fn receptive_field(blocks: usize, kernel: usize, growth: usize) -> usize {
    let mut sum = 0usize;
    let mut d = 1usize;
    for _ in 0..blocks {
        sum += d;
        d *= growth;
    }
    1 + (kernel.saturating_sub(1)) * sum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmCond {
    #[default]
    None,
    /// Controls repeated over time and appended to the input.
    Concat,
    /// Time-varying latent sequence appended to the input.
    Tvcond,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub cond: LstmCond,
    pub block_size: usize,
    pub latent: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self { hidden: 32, cond: LstmCond::None, block_size: DEFAULT_BLOCK_SIZE, latent: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcnConfig {
    pub blocks: usize,
    pub kernel: usize,
    pub dilation_growth: usize,
    pub channels: usize,
    pub cond: CondKind,
    pub batchnorm: bool,
    pub cond_config: CondConfig,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            blocks: 5,
            kernel: 7,
            dilation_growth: 4,
            channels: 16,
            cond: CondKind::None,
            batchnorm: false,
            cond_config: CondConfig::default(),
        }
    }
}

impl TcnConfig {
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.blocks, self.kernel, self.dilation_growth)
    }

    fn validate(&self) -> Result<()> {
        if self.blocks < 1 || self.kernel < 1 || self.dilation_growth < 1 || self.channels < 1 {
            return Err(Error::InvalidParameter(format!(
                "convolutional models need blocks, kernel, dilation_growth and channels >= 1, got {self:?}"
            )));
        }
        self.cond_config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub processor: ProcessorSpec,
    pub controller: ControllerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrayBoxSpec {
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    pub stages: Vec<StageSpec>,
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Lstm(LstmConfig),
    Tcn(TcnConfig),
    Gcn(TcnConfig),
    Graybox(GrayBoxSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub sample_rate: f64,
    #[serde(default)]
    pub num_controls: usize,
    pub model: Architecture,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::InvalidParameter(format!("sample_rate must be positive, got {}", self.sample_rate)));
        }
        match &self.model {
            Architecture::Lstm(c) => {
                if c.hidden < 1 || c.block_size < 1 || c.latent < 1 {
                    return Err(Error::InvalidParameter("LSTM hidden, block_size and latent must be >= 1".into()));
                }
                if c.cond == LstmCond::Concat && self.num_controls == 0 {
                    return Err(Error::InvalidParameter("concat conditioning needs num_controls >= 1".into()));
                }
                Ok(())
            }
            Architecture::Tcn(c) | Architecture::Gcn(c) => {
                c.validate()?;
                if c.cond == CondKind::Film && self.num_controls == 0 {
                    return Err(Error::InvalidParameter("FiLM conditioning needs num_controls >= 1".into()));
                }
                Ok(())
            }
            Architecture::Graybox(g) => {
                if g.block_size < 1 {
                    return Err(Error::InvalidParameter("gray-box block_size must be >= 1".into()));
                }
                if g.stages.is_empty() {
                    return Err(Error::InvalidParameter("gray-box chain needs at least one stage".into()));
                }
                Ok(())
            }
        }
    }

    /// Short description such as `TCN-F-b5k7g4-c16` or `gain.s -> tanh`.
    pub fn describe(&self) -> String {
        match &self.model {
            Architecture::Lstm(c) => format!("LSTM-{}", c.hidden),
            Architecture::Tcn(c) | Architecture::Gcn(c) => {
                let name = if matches!(self.model, Architecture::Tcn(_)) { "TCN" } else { "GCN" };
                let cond = match c.cond {
                    CondKind::None => "N",
                    CondKind::Film => "F",
                    CondKind::Tfilm => "TF",
                    CondKind::Ttfilm => "TTF",
                    CondKind::Tvfilm => "TVF",
                };
                format!("{name}-{cond}-b{}k{}g{}-c{}", c.blocks, c.kernel, c.dilation_growth, c.channels)
            }
            Architecture::Graybox(g) => g
                .stages
                .iter()
                .map(|s| {
                    let suffix = s.controller.suffix();
                    if suffix.is_empty() {
                        s.processor.kind.label().to_string()
                    } else {
                        format!("{}.{suffix}", s.processor.kind.label())
                    }
                })
                .collect::<Vec<_>>()
                .join(" -> "),
        }
    }
}

/// Recurrent state of every stateful component, in model order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelState(pub Vec<Vec<RecState>>);

#[derive(Debug, Clone)]
enum Net {
    Lstm(LstmModel),
    Tcn(TcnModel),
    Graybox(GrayBox),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    net: Net,
}

impl Model {
    /// Builds the model with weights drawn from a generator seeded by `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(seed);
        let nc = spec.num_controls;
        let net = match &spec.model {
            Architecture::Lstm(c) => Net::Lstm(LstmModel::new(&mut store, &mut rng, c, nc)),
            Architecture::Tcn(c) => Net::Tcn(TcnModel::new(&mut store, &mut rng, c, nc, false)),
            Architecture::Gcn(c) => Net::Tcn(TcnModel::new(&mut store, &mut rng, c, nc, true)),
            Architecture::Graybox(g) => Net::Graybox(GrayBox::new(&mut store, &mut rng, g, nc, spec.sample_rate)?),
        };
        Ok(Self { spec: spec.clone(), store, net })
    }

    pub fn param_count(&self) -> usize {
        self.store.num_trainable()
    }

    /// Receptive field of convolutional models.
    pub fn receptive_field(&self) -> Option<usize> {
        match &self.spec.model {
            Architecture::Tcn(c) | Architecture::Gcn(c) => Some(c.receptive_field()),
            _ => None,
        }
    }

    pub fn zero_state(&self) -> ModelState {
        match &self.net {
            Net::Lstm(m) => m.zero_state(),
            Net::Tcn(m) => m.zero_state(),
            Net::Graybox(m) => m.zero_state(),
        }
    }

    /// True when state carried between chunks changes the output.
    pub fn is_stateful(&self) -> bool {
        self.zero_state().0.iter().any(|s| !s.is_empty())
    }

    pub fn graybox(&self) -> Option<&GrayBox> {
        match &self.net {
            Net::Graybox(g) => Some(g),
            _ => None,
        }
    }

    /// Runs the model in evaluation mode on plain samples.
    pub fn render(&self, x: &[f64], c: Option<&[f64]>, precision: Precision) -> Result<Vec<f64>> {
        let tape = Tape::inference(precision);
        let p = self.store.bind(&tape);
        let xv = tape.constant(Tensor::from_vec(x.to_vec()));
        let cv = c.filter(|c| !c.is_empty()).map(|c| tape.constant(Tensor::from_vec(c.to_vec())));
        let (y, _) = self.forward(&p, &Ctx::eval(), xv, cv, None)?;
        Ok(y.to_vec())
    }

    /// `x: [T] -> y: [T]`. `c: [num_controls]` is required when the model has
    /// controls. `state` defaults to zeros.
    pub fn forward<'t>(
        &self,
        p: &Params<'t>,
        ctx: &Ctx,
        x: Var<'t>,
        c: Option<Var<'t>>,
        state: Option<&ModelState>,
    ) -> Result<(Var<'t>, ModelState)> {
        if x.shape().len() != 1 || x.numel() == 0 {
            return Err(Error::Shape(format!("model input must be a non-empty [time], got {:?}", x.shape())));
        }
        let nc = self.spec.num_controls;
        let c = match (nc, c) {
            (0, _) => None,
            (n, Some(c)) if c.shape() == [n] => Some(c),
            (n, Some(c)) => return Err(Error::Shape(format!("expected {n} controls, got shape {:?}", c.shape()))),
            (n, None) => return Err(Error::InvalidArgument(format!("model needs {n} controls"))),
        };
        let zero;
        let state = match state {
            Some(s) => s,
            None => {
                zero = self.zero_state();
                &zero
            }
        };
        match &self.net {
            Net::Lstm(m) => m.forward(p, x, c, state),
            Net::Tcn(m) => m.forward(p, ctx, x, c, state),
            Net::Graybox(m) => m.forward(p, x, c, state),
        }
    }
}
