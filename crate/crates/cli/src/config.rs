//! Experiment document: model, data, training and analysis settings in one
//! JSON file, validated as a whole before any compute.

use std::fmt;
use std::path::{Path, PathBuf};

use afx_core::analysis::SweepConfig;
use afx_core::data::{load_manifest, Manifest, SegmentConfig};
use afx_core::models::{Model, ModelSpec};
use afx_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Relative paths resolve against `AFX_OUTPUT_ROOT` when set, else
    /// against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Relative to the config file.
    pub manifest: PathBuf,
    #[serde(default)]
    pub segment: SegmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub sweep: SweepConfig,
    /// Control values used for analysis; 0.5 each when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<f64>>,
    /// Points on `[-1, 1]` for memoryless stage curves.
    pub amplitude_points: usize,
    /// Length of the excitation used for parameter trajectories.
    pub trace_seconds: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { sweep: SweepConfig::default(), controls: None, amplitude_points: 201, trace_seconds: 1.0 }
    }
}

impl AnalysisConfig {
    pub fn controls_for(&self, num_controls: usize) -> Vec<f64> {
        self.controls.clone().unwrap_or_else(|| vec![0.5; num_controls])
    }
}

/// One invalid field, addressed by a JSON pointer.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub pointer: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: PathBuf,
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config {}:", self.file.display())?;
        for i in &self.issues {
            write!(f, "\n  {}: {}", if i.pointer.is_empty() { "/" } else { &i.pointer }, i.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// A parsed and validated experiment with its manifest loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub path: PathBuf,
    pub config: ExperimentConfig,
    pub manifest: Manifest,
}

impl Experiment {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    /// `--output-dir`, else the config's `output_dir`, else
    /// `<AFX_OUTPUT_ROOT or ./runs>/<config stem>`.
    pub fn output_dir(&self, flag: Option<&Path>, env_root: Option<&Path>) -> PathBuf {
        if let Some(d) = flag {
            return d.to_path_buf();
        }
        match &self.config.output_dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => env_root.unwrap_or(self.base_dir()).join(d),
            None => {
                let stem = self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
                env_root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs")).join(stem)
            }
        }
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Reads, parses and validates the config at `path`. Every problem found
/// is reported, each with its JSON pointer.
pub fn load(path: &Path) -> Result<Experiment, ConfigError> {
    let fail = |pointer: &str, message: String| ConfigError { file: path.to_path_buf(), issues: vec![Issue { pointer: pointer.into(), message }] };
    let text = std::fs::read_to_string(path).map_err(|e| fail("", format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        fail(&pointer, e.into_inner().to_string())
    })?;
    let mut issues = Vec::new();
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = validate(&config, base, &mut issues);
    match manifest {
        Some(manifest) if issues.is_empty() => Ok(Experiment { path: path.to_path_buf(), config, manifest }),
        _ => Err(ConfigError { file: path.to_path_buf(), issues }),
    }
}

fn validate(cfg: &ExperimentConfig, base: &Path, issues: &mut Vec<Issue>) -> Option<Manifest> {
    let mut push = |pointer: &str, message: String| issues.push(Issue { pointer: pointer.into(), message });

    let spec = &cfg.model;
    if let Err(e) = spec.validate().and_then(|_| Model::build(spec, 0).map(|_| ())) {
        push("/model", e.to_string());
    }

    let seg = &cfg.data.segment;
    if seg.seg_len == 0 {
        push("/data/segment/seg_len", "must be at least 1".into());
    }
    if seg.hop == Some(0) {
        push("/data/segment/hop", "must be at least 1".into());
    }
    for (i, f) in seg.split.iter().enumerate() {
        if !(*f >= 0.0) {
            push(&format!("/data/segment/split/{i}"), format!("fraction {f} is negative"));
        }
    }
    if (seg.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        push("/data/segment/split", format!("fractions must sum to 1, got {:?}", seg.split));
    }

    let t = &cfg.train;
    if t.max_steps < 1 {
        push("/train/max_steps", "must be at least 1".into());
    }
    if t.batch_size < 1 {
        push("/train/batch_size", "must be at least 1".into());
    }
    let a = &t.adam;
    if !(a.lr > 0.0) {
        push("/train/adam/lr", format!("must be positive, got {}", a.lr));
    }
    for (name, b) in [("beta1", a.beta1), ("beta2", a.beta2)] {
        if !(0.0..1.0).contains(&b) {
            push(&format!("/train/adam/{name}"), format!("must be in [0, 1), got {b}"));
        }
    }
    if !(a.eps > 0.0) {
        push("/train/adam/eps", format!("must be positive, got {}", a.eps));
    }
    if !(a.decay_factor > 0.0 && a.decay_factor <= 1.0) {
        push("/train/adam/decay_factor", format!("must be in (0, 1], got {}", a.decay_factor));
    }
    if t.tbptt.enabled && t.tbptt.chunk_len < 1 {
        push("/train/tbptt/chunk_len", "must be at least 1".into());
    }
    if let Err(e) = t.loss.validate() {
        push("/train/loss", e.to_string());
    }
    if t.loss.w_mrstft > 0.0 {
        if let Err(e) = t.mrstft.validate() {
            push("/train/mrstft", e.to_string());
        }
        if seg.seg_len.saturating_sub(t.loss_skip) < t.mrstft.min_len() {
            push(
                "/data/segment/seg_len",
                format!("seg_len minus loss_skip must be at least the largest fft_size {}", t.mrstft.min_len()),
            );
        }
    }
    if t.loss_skip >= seg.seg_len.max(1) {
        push("/train/loss_skip", format!("must be below seg_len {}", seg.seg_len));
    }
    if t.tbptt.enabled && t.tbptt.warmup_len + t.tbptt.chunk_len > seg.seg_len {
        push("/train/tbptt/chunk_len", format!("warmup_len + chunk_len exceeds seg_len {}", seg.seg_len));
    }

    let an = &cfg.analysis;
    if let Err(e) = an.sweep.validate(spec.sample_rate) {
        push("/analysis/sweep", e.to_string());
    }
    if an.amplitude_points < 2 {
        push("/analysis/amplitude_points", "must be at least 2".into());
    }
    if !(an.trace_seconds > 0.0) {
        push("/analysis/trace_seconds", format!("must be positive, got {}", an.trace_seconds));
    }
    if let Some(c) = &an.controls {
        if c.len() != spec.num_controls {
            push("/analysis/controls", format!("model takes {} controls, got {}", spec.num_controls, c.len()));
        }
        for (i, v) in c.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                push(&format!("/analysis/controls/{i}"), format!("{v} is outside [0, 1]"));
            }
        }
    }

    let manifest_path = base.join(&cfg.data.manifest);
    if !manifest_path.is_file() {
        push("/data/manifest", format!("file not found: {}", manifest_path.display()));
        return None;
    }
    match load_manifest(&manifest_path) {
        Ok(m) => {
            if f64::from(m.sample_rate) != spec.sample_rate {
                push(
                    "/model/sample_rate",
                    format!("{} does not match the manifest sample rate {} ({})", spec.sample_rate, m.sample_rate, manifest_path.display()),
                );
            }
            if m.num_controls() != spec.num_controls {
                push(
                    "/model/num_controls",
                    format!("{} does not match the {} controls per entry in {}", spec.num_controls, m.num_controls(), manifest_path.display()),
                );
            }
            Some(m)
        }
        Err(e) => {
            push("/data/manifest", format!("{}: {e}", manifest_path.display()));
            None
        }
    }
}
