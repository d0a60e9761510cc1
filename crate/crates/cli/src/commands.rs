//! The four subcommands. Every file they write lands under the output
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use afx_autodiff::{Precision, Tape, Tensor};
use afx_core::analysis::{amplitude_response, stepped_sine_response, time_trace, write_svg};
use afx_core::data::{load_recordings, load_wav, save_wav, segment, Splits};
use afx_core::dsp::ProcessorKind;
use afx_core::models::{Architecture, GrayBoxSpec, Model, ModelSpec};
use afx_core::train::{evaluate, Checkpoint, EvalMetrics, Trainer};
use serde::Serialize;

use crate::config::Experiment;
use crate::CliError;

/// Options shared by every subcommand after resolution.
#[derive(Debug, Clone)]
pub struct Run {
    pub exp: Experiment,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub precision: Precision,
}

impl Run {
    fn create_out_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|e| CliError::Runtime(afx_core::Error::io(&self.out_dir, e)))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn load_checkpoint(&self) -> Result<Option<Checkpoint>, CliError> {
        let Some(path) = &self.checkpoint else { return Ok(None) };
        let ckpt = Checkpoint::load(path).map_err(|e| CliError::Config(e.to_string()))?;
        if ckpt.spec != self.exp.config.model {
            return Err(CliError::Config(format!(
                "checkpoint {} was written for a different model than /model in {}",
                path.display(),
                self.exp.path.display()
            )));
        }
        Ok(Some(ckpt))
    }

    /// The checkpointed model, or a freshly initialized one.
    fn model(&self) -> Result<Model, CliError> {
        match self.load_checkpoint()? {
            Some(c) => Ok(c.restore_model()?),
            None => Ok(Model::build(&self.exp.config.model, self.exp.config.train.seed)?),
        }
    }

    fn splits(&self) -> Result<Splits, CliError> {
        let recs = load_recordings(&self.exp.manifest)?;
        Ok(segment(&recs, &self.exp.config.data.segment)?)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.out(name);
        let text = serde_json::to_string_pretty(value).map_err(afx_core::Error::from)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(afx_core::Error::io(&path, e)))
    }
}

fn write_metrics(path: &Path, name: &str, m: &EvalMetrics) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(afx_core::Error::from)?;
    let f = |v: f64| format!("{v:?}");
    w.write_record(["model", "tot", "l1", "mrstft"]).map_err(afx_core::Error::from)?;
    w.write_record([name.to_string(), f(m.tot), f(m.l1), f(m.mrstft)]).map_err(afx_core::Error::from)?;
    w.flush().map_err(|e| CliError::Runtime(afx_core::Error::io(path, e)))
}

/// Trains, resuming from the checkpoint when one is given, then reports the
/// best model on the test split.
pub fn train(run: &Run) -> Result<(), CliError> {
    let cfg = run.exp.config.train.clone();
    let mut trainer = match run.load_checkpoint()? {
        Some(c) => Trainer::resume(&c, cfg, run.precision)?,
        None => Trainer::new(Model::build(&run.exp.config.model, cfg.seed)?, cfg, run.precision)?,
    };
    let splits = run.splits()?;
    if splits.train.is_empty() {
        return Err(CliError::Runtime(afx_core::Error::Data("the training split is empty".into())));
    }
    run.create_out_dir()?;
    run.write_json("config.json", &run.exp.config)?;
    log::info!(
        "training {} ({} parameters) on {} segments",
        trainer.model.spec.describe(),
        trainer.model.param_count(),
        splits.train.len()
    );
    trainer.run(&splits, Some(&run.out_dir))?;
    trainer.log.write_csv(&run.out("metrics.csv"))?;
    if !splits.test.is_empty() {
        let best = trainer.best_model()?;
        let m = evaluate(&best, &splits.test, &trainer.cfg, Precision::F64)?;
        write_metrics(&run.out("test.csv"), &best.spec.describe(), &m)?;
        println!("test tot {:.6} l1 {:.6} mrstft {:.6} esr {:.6}", m.tot, m.l1, m.mrstft, m.esr);
    }
    println!("wrote {}", run.out_dir.display());
    Ok(())
}

/// Evaluates the model on the test split.
pub fn test(run: &Run) -> Result<(), CliError> {
    let model = run.model()?;
    let splits = run.splits()?;
    if splits.test.is_empty() {
        return Err(CliError::Runtime(afx_core::Error::Data("the test split is empty".into())));
    }
    let m = evaluate(&model, &splits.test, &run.exp.config.train, run.precision)?;
    run.create_out_dir()?;
    write_metrics(&run.out("test.csv"), &model.spec.describe(), &m)?;
    println!("test tot {:.6} l1 {:.6} mrstft {:.6} esr {:.6}", m.tot, m.l1, m.mrstft, m.esr);
    Ok(())
}

/// Filter-like stages get a frequency response; memoryless ones an
/// amplitude response.
fn is_memoryless(kind: ProcessorKind) -> bool {
    matches!(kind, ProcessorKind::DcOffset | ProcessorKind::Tanh | ProcessorKind::Rational | ProcessorKind::Mlp)
}

/// Stage `i` of a gray-box model as a one-stage model with the same tensors.
fn isolate_stage(model: &Model, gb: &GrayBoxSpec, i: usize) -> Result<Model, CliError> {
    let spec = ModelSpec {
        sample_rate: model.spec.sample_rate,
        num_controls: model.spec.num_controls,
        model: Architecture::Graybox(GrayBoxSpec { block_size: gb.block_size, stages: vec![gb.stages[i].clone()] }),
    };
    let mut sub = Model::build(&spec, 0)?;
    let (from, to) = (format!("stage{i}."), "stage0.");
    let ids: Vec<_> = sub.store.ids().collect();
    for id in ids {
        let name = sub.store.entries()[id.index()].name.clone();
        let src = format!("{from}{}", &name[to.len()..]);
        let src_id = model
            .store
            .find(&src)
            .ok_or_else(|| CliError::Runtime(afx_core::Error::Shape(format!("no tensor {src} in the full model"))))?;
        sub.store.set(id, model.store.get(src_id).clone());
    }
    Ok(sub)
}

/// Exponential chirp from 20 Hz to 0.9 · Nyquist under a linear
/// amplitude ramp from 0 to 0.5.
fn trace_excitation(fs: f64, seconds: f64) -> Vec<f64> {
    let n = ((fs * seconds).round() as usize).max(1);
    let (f0, f1) = (20.0, 0.45 * fs);
    let t_end = n as f64 / fs;
    let k = (f1 / f0).ln() / t_end;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let phase = 2.0 * std::f64::consts::PI * f0 * ((k * t).exp() - 1.0) / k;
            0.5 * (i as f64 / n as f64) * phase.sin()
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct StageReport {
    stage: usize,
    processor: String,
    controller: serde_json::Value,
    /// Denormalized values, for stages whose parameters do not vary.
    #[serde(skip_serializing_if = "Option::is_none")]
    parameters: Option<BTreeMap<String, f64>>,
    /// CSV holding the per-sample trajectory, for dynamic stages.
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<String>,
    response: String,
}

/// Whole-model response plus, for gray-box models, one response per stage,
/// the static parameters and the dynamic trajectories.
pub fn analyze(run: &Run) -> Result<(), CliError> {
    let model = run.model()?;
    let an = &run.exp.config.analysis;
    let controls = an.controls_for(model.spec.num_controls);
    let c = Some(controls.as_slice()).filter(|c| !c.is_empty());
    run.create_out_dir()?;

    let whole = stepped_sine_response(&model, &an.sweep, c, run.precision)?;
    whole.write_csv(&run.out("response.csv"))?;
    write_svg(&run.out("response.svg"), &whole.to_svg(&model.spec.describe()))?;
    let mut written = 1;

    if let (Some(gb), Architecture::Graybox(gspec)) = (model.graybox(), &model.spec.model) {
        let excitation = trace_excitation(model.spec.sample_rate, an.trace_seconds);
        let tape = Tape::inference(run.precision);
        let p = model.store.bind(&tape);
        let xv = tape.constant(Tensor::from_vec(excitation.clone()));
        let cv = c.map(|c| tape.constant(Tensor::from_vec(c.to_vec())));
        let (_, traces) = gb.trace(&p, xv, cv, &model.zero_state())?;

        let mut reports = Vec::new();
        for (i, st) in gb.stages.iter().enumerate() {
            let kind = st.processor.kind;
            let stem = format!("stage{i}_{}{}", kind.label(), match st.controller.spec.suffix() {
                "" => String::new(),
                s => format!("_{s}"),
            });
            let sub = isolate_stage(&model, gspec, i)?;
            let response = if is_memoryless(kind) {
                let curve = amplitude_response(an.amplitude_points, |x| sub.render(x, c, run.precision))?;
                let name = format!("{stem}_amplitude.csv");
                curve.write_csv(&run.out(&name))?;
                write_svg(&run.out(&format!("{stem}_amplitude.svg")), &curve.to_svg(&stem))?;
                name
            } else {
                let curve = stepped_sine_response(&sub, &an.sweep, c, run.precision)?;
                let name = format!("{stem}_frequency.csv");
                curve.write_csv(&run.out(&name))?;
                write_svg(&run.out(&format!("{stem}_frequency.svg")), &curve.to_svg(&stem))?;
                name
            };
            written += 1;

            let names = kind.param_names();
            let (parameters, trajectory) = if st.controller.spec.is_dynamic() {
                let tr = time_trace(&model, i, &excitation, c, run.precision)?;
                let name = format!("{stem}_trace.csv");
                tr.write_csv(&run.out(&name))?;
                write_svg(&run.out(&format!("{stem}_trace.svg")), &tr.to_svg(&stem))?;
                (None, Some(name))
            } else {
                let phys = traces[i].physical.data();
                (Some(names.iter().cloned().zip(phys.iter().copied()).collect()), None)
            };
            reports.push(StageReport {
                stage: i,
                processor: kind.label().to_string(),
                controller: serde_json::to_value(st.controller.spec).map_err(afx_core::Error::from)?,
                parameters,
                trajectory,
                response,
            });
        }
        run.write_json("parameters.json", &reports)?;
    }
    println!("wrote {written} response files to {}", run.out_dir.display());
    Ok(())
}

/// Processes a WAV file through the model at fixed controls. The output
/// keeps the input's sample rate, length and sample format.
pub fn render(run: &Run, input: &Path, controls: &[f64], output: &str) -> Result<(), CliError> {
    let spec = &run.exp.config.model;
    if controls.len() != spec.num_controls {
        return Err(CliError::Config(format!("the model takes {} controls, got {}", spec.num_controls, controls.len())));
    }
    if let Some(v) = controls.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CliError::Config(format!("control value {v} is outside [0, 1]")));
    }
    let name = Path::new(output)
        .file_name()
        .filter(|n| Path::new(n) == Path::new(output))
        .ok_or_else(|| CliError::Config(format!("--output must be a plain file name, got {output:?}")))?;
    let audio = load_wav(input).map_err(|e| CliError::Config(e.to_string()))?;
    if f64::from(audio.sample_rate) != spec.sample_rate {
        return Err(CliError::Config(format!(
            "{} is sampled at {} Hz, the model at {} Hz",
            input.display(),
            audio.sample_rate,
            spec.sample_rate
        )));
    }
    let model = run.model()?;
    let c = Some(controls).filter(|c| !c.is_empty());
    let y = model.render(&audio.samples, c, run.precision)?;
    run.create_out_dir()?;
    let path = run.out_dir.join(name);
    save_wav(&path, &y, audio.sample_rate, audio.bit_depth)?;
    println!("wrote {}", path.display());
    Ok(())
}
