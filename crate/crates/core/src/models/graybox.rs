//! Chains of processors, each driven by its own controller.

use afx_autodiff::{Tensor, Var};

use super::{GrayBoxSpec, ModelState};
use crate::controllers::Controller;
use crate::dsp::Processor;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Params, Rng};

#[derive(Debug, Clone)]
pub struct Stage {
    pub processor: Processor,
    pub controller: Controller,
}

/// Values observed at one stage during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    /// `[P]` or `[NB, P]` controller output in `[0, 1]`.
    pub normalized: Tensor,
    /// Same shape, in physical units.
    pub physical: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct GrayBox {
    pub stages: Vec<Stage>,
    pub block_size: usize,
}

impl GrayBox {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, spec: &GrayBoxSpec, num_controls: usize, fs: f64) -> Result<Self> {
        let stages = spec
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let name = format!("stage{i}.{}", s.processor.kind.label());
                let processor = Processor::build(&s.processor, fs, store, rng, &format!("{name}.proc"))
                    .map_err(|e| Error::InvalidParameter(format!("stage {i}: {e}")))?;
                let controller =
                    Controller::build(s.controller, processor.num_params(), num_controls, store, rng, &format!("{name}.ctl"))
                        .map_err(|e| Error::InvalidParameter(format!("stage {i}: {e}")))?;
                Ok(Stage { processor, controller })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages, block_size: spec.block_size })
    }

    /// Total number of controlled parameters across stages.
    pub fn num_controlled(&self) -> usize {
        self.stages.iter().map(|s| s.processor.num_params()).sum()
    }

    /// One slot per stage; empty for stateless controllers.
    pub fn zero_state(&self) -> ModelState {
        ModelState(self.stages.iter().map(|s| s.controller.zero_state()).collect())
    }

    pub fn forward<'t>(&self, p: &Params<'t>, x: Var<'t>, c: Option<Var<'t>>, state: &ModelState) -> Result<(Var<'t>, ModelState)> {
        let (y, next, _) = self.run(p, x, c, state, false)?;
        Ok((y, next))
    }

    /// Forward pass that also records every stage's parameters and output.
    pub fn trace<'t>(
        &self,
        p: &Params<'t>,
        x: Var<'t>,
        c: Option<Var<'t>>,
        state: &ModelState,
    ) -> Result<(Var<'t>, Vec<StageTrace>)> {
        let (y, _, traces) = self.run(p, x, c, state, true)?;
        Ok((y, traces))
    }

    fn run<'t>(
        &self,
        p: &Params<'t>,
        mut x: Var<'t>,
        c: Option<Var<'t>>,
        state: &ModelState,
        record: bool,
    ) -> Result<(Var<'t>, ModelState, Vec<StageTrace>)> {
        let mut next = Vec::with_capacity(self.stages.len());
        let mut traces = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let st = state.0.get(i).filter(|s| !s.is_empty()).map(|v| v.as_slice());
            let (g, st) = stage.controller.forward(p, x, c, st, self.block_size)?;
            next.push(st);
            let phys = (stage.processor.num_params() > 0).then(|| stage.processor.denormalize(g.values));
            x = stage.processor.forward(p, x, phys, self.block_size)?;
            if record {
                traces.push(StageTrace {
                    normalized: (*g.values.value()).clone(),
                    physical: phys.map(|v| (*v.value()).clone()).unwrap_or_else(|| Tensor::zeros(vec![0])),
                    output: (*x.value()).clone(),
                });
            }
        }
        Ok((x, ModelState(next), traces))
    }
}
