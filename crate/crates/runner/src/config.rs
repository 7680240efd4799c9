//! JSON experiment configuration and its validation.

use std::path::{Path, PathBuf};

use natspace::data::step::IntervalSpec;
use natspace::data::synthetic::SyntheticSpec;
use natspace::data::Dims;
use natspace::nn::profiles;
use natspace::nn::{LayerSpec, NetworkSpec, TrainConfig};
use natspace::noise::NoiseSpec;
use natspace::select::SubgroupSpec;
use natspace::trace::IllusiveRule;
use serde::{Deserialize, Serialize};

/// A field-level validation failure.
#[derive(Debug, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Baseline,
    Subgroup,
    NoiseSweep,
    ExcludeIllusive,
    AdvEval,
    RelabelGlue,
    StepDemo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Subgroup => "subgroup",
            Self::NoiseSweep => "noise-sweep",
            Self::ExcludeIllusive => "exclude-illusive",
            Self::AdvEval => "adv-eval",
            Self::RelabelGlue => "relabel-glue",
            Self::StepDemo => "step-demo",
        }
    }

    fn uses_images(self) -> bool {
        self != Self::StepDemo
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// Procedurally generated clusters of smooth images.
    Synthetic(SyntheticSpec),
    /// CIFAR-10 binary batches, optionally reduced to a stratified subset.
    Cifar10(CifarSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarSource {
    /// Directory with the batch files; falls back to `DATA_DIR`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub train_per_category: Option<usize>,
    #[serde(default)]
    pub test_per_category: Option<usize>,
    #[serde(default)]
    pub subset_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkChoice {
    FastMlp,
    CifarSmall,
    Mlp { hidden: Vec<usize> },
    /// Explicit layers; the last dense layer is resized to the category count
    /// the experiment needs.
    Custom { layers: Vec<LayerSpec> },
}

impl Default for NetworkChoice {
    fn default() -> Self {
        NetworkChoice::FastMlp
    }
}

impl NetworkChoice {
    pub fn build(&self, input_shape: &[usize], categories: usize, init_seed: u64) -> natspace::Result<NetworkSpec> {
        match self {
            Self::FastMlp => profiles::fast_mlp(input_shape, categories, init_seed),
            Self::CifarSmall => profiles::cifar_small(input_shape, categories, init_seed),
            Self::Mlp { hidden } => profiles::mlp_classifier(input_shape, hidden, categories, init_seed),
            Self::Custom { layers } => {
                let mut layers = layers.clone();
                if let Some(LayerSpec::Dense { outputs, .. }) =
                    layers.iter_mut().rev().find(|l| matches!(l, LayerSpec::Dense { .. }))
                {
                    *outputs = categories;
                }
                let spec = NetworkSpec {
                    layers,
                    input_shape: input_shape.to_vec(),
                    categories,
                    init_seed,
                };
                spec.resolve_shapes()?;
                Ok(spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupBlock {
    /// Each entry is one training set: the union of its subgroups.
    pub sets: Vec<Vec<SubgroupSpec>>,
    /// When present every set is also trained with this noise category added.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub variants: Vec<NoiseSpec>,
    /// Legitimate samples per category; the whole training set when absent.
    #[serde(default)]
    pub legit_per_category: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IllusiveBlock {
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_agreement")]
    pub agreement: f64,
    /// Traced runs on the full training set used for detection.
    #[serde(default = "default_diagnostic_runs")]
    pub diagnostic_runs: usize,
}

fn default_burn_in() -> f64 {
    IllusiveRule::default().burn_in
}
fn default_tau() -> f64 {
    IllusiveRule::default().tau
}
fn default_agreement() -> f64 {
    IllusiveRule::default().agreement
}
fn default_diagnostic_runs() -> usize {
    5
}

impl Default for IllusiveBlock {
    fn default() -> Self {
        Self {
            burn_in: default_burn_in(),
            tau: default_tau(),
            agreement: default_agreement(),
            diagnostic_runs: default_diagnostic_runs(),
        }
    }
}

impl IllusiveBlock {
    pub fn rule(&self) -> IllusiveRule {
        IllusiveRule {
            burn_in: self.burn_in,
            tau: self.tau,
            agreement: self.agreement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelabelBlock {
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepVariant {
    pub name: String,
    pub intervals: Vec<IntervalSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepStage {
    pub learning_rate: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDemoBlock {
    pub variants: Vec<StepVariant>,
    #[serde(default = "default_step_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_step_batch")]
    pub batch_size: usize,
    #[serde(default = "default_step_momentum")]
    pub momentum: f64,
    /// Consecutive training phases, each with its own learning rate.
    pub stages: Vec<StepStage>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_step_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_step_batch() -> usize {
    32
}
fn default_step_momentum() -> f64 {
    0.9
}
fn default_grid_points() -> usize {
    1001
}

fn default_runs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional when the CLI subcommand already names the experiment.
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub network: Option<NetworkChoice>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also write per-run training traces (diagnostic traces are always written).
    #[serde(default)]
    pub trace_runs: bool,
    #[serde(default)]
    pub subgroups: Option<SubgroupBlock>,
    #[serde(default)]
    pub noise: Option<NoiseBlock>,
    #[serde(default)]
    pub illusive: Option<IllusiveBlock>,
    #[serde(default)]
    pub attacks: Option<AttackBlock>,
    #[serde(default)]
    pub relabel: Option<RelabelBlock>,
    #[serde(default)]
    pub step_demo: Option<StepDemoBlock>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn minimal(kind: ExperimentKind) -> Self {
        Self {
            kind: Some(kind),
            data: None,
            network: None,
            train: None,
            runs: default_runs(),
            seed: 0,
            trace_runs: false,
            subgroups: None,
            noise: None,
            illusive: None,
            attacks: None,
            relabel: None,
            step_demo: None,
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| bad("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn kind(&self) -> Result<ExperimentKind, ConfigError> {
        self.kind.ok_or_else(|| bad("kind", "missing experiment kind"))
    }

    /// Training settings, with the defaults filled in.
    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_default()
    }

    pub fn network_choice(&self) -> NetworkChoice {
        self.network.clone().unwrap_or_default()
    }

    pub fn data_source(&self) -> DataSource {
        self.data.clone().unwrap_or_default()
    }

    /// Dims of the images the data source will produce, when known up front.
    fn image_dims(&self) -> Dims {
        match self.data_source() {
            DataSource::Synthetic(s) => s.dims(),
            DataSource::Cifar10(_) => natspace::data::cifar::DIMS,
        }
    }

    /// Rejects every invalid setting before any data is loaded.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let kind = self.kind()?;
        if self.runs == 0 {
            return Err(bad("runs", "must be at least 1"));
        }
        let required = |present: bool, field: &str, needed: bool| -> Result<(), ConfigError> {
            match (present, needed) {
                (false, true) => Err(bad(field, format!("required by experiment kind {kind}"))),
                (true, false) => Err(bad(field, format!("not used by experiment kind {kind}"))),
                _ => Ok(()),
            }
        };
        use ExperimentKind::*;
        required(self.subgroups.is_some(), "subgroups", kind == Subgroup)?;
        required(self.noise.is_some(), "noise", kind == NoiseSweep)?;
        required(
            self.illusive.is_some(),
            "illusive",
            matches!(kind, ExcludeIllusive | AdvEval | RelabelGlue),
        )?;
        required(self.attacks.is_some(), "attacks", kind == AdvEval)?;
        required(self.relabel.is_some(), "relabel", kind == RelabelGlue)?;
        required(self.step_demo.is_some(), "step_demo", kind == StepDemo)?;

        if !kind.uses_images() {
            for (present, field) in [
                (self.data.is_some(), "data"),
                (self.network.is_some(), "network"),
                (self.train.is_some(), "train"),
            ] {
                if present {
                    return Err(bad(field, "not used by experiment kind step-demo"));
                }
            }
            if self.runs != 1 {
                return Err(bad("runs", "step-demo trains one regressor per variant; use 1"));
            }
            return self.validate_step(self.step_demo.as_ref().expect("checked"));
        }

        let dims = self.image_dims();
        match self.data_source() {
            DataSource::Synthetic(s) => s.validate().map_err(|e| bad("data", e.to_string()))?,
            DataSource::Cifar10(c) => {
                if c.train_per_category == Some(0) || c.test_per_category == Some(0) {
                    return Err(bad("data", "per-category subset sizes must be positive"));
                }
            }
        }
        let train = self.train_config();
        train.validate().map_err(|e| bad("train", e.to_string()))?;
        if train.seed != 0 {
            return Err(bad("train.seed", "run seeds derive from the top-level seed; remove this field"));
        }
        // Builds a throwaway spec so that layer shapes are checked now.
        self.network_choice()
            .build(&dims.shape(), 2, 0)
            .map_err(|e| bad("network", e.to_string()))?;

        if let Some(b) = &self.subgroups {
            if b.sets.is_empty() || b.sets.iter().any(|s| s.is_empty()) {
                return Err(bad("subgroups.sets", "need at least one non-empty set"));
            }
            for spec in b.sets.iter().flatten() {
                spec.validate().map_err(|e| bad("subgroups.sets", e.to_string()))?;
            }
            if let Some(n) = &b.noise {
                n.validate(dims).map_err(|e| bad("subgroups.noise", e.to_string()))?;
            }
        }
        if let Some(b) = &self.noise {
            if b.variants.is_empty() {
                return Err(bad("noise.variants", "need at least one noise spec"));
            }
            for n in &b.variants {
                n.validate(dims).map_err(|e| bad("noise.variants", e.to_string()))?;
            }
            if b.legit_per_category == Some(0) {
                return Err(bad("noise.legit_per_category", "must be positive"));
            }
        }
        if let Some(b) = &self.illusive {
            b.rule().validate().map_err(|e| bad("illusive", e.to_string()))?;
            if b.diagnostic_runs == 0 {
                return Err(bad("illusive.diagnostic_runs", "must be at least 1"));
            }
            if train.epochs < 2 {
                return Err(bad("train.epochs", "illusive detection needs at least 2 epochs"));
            }
        }
        if let Some(b) = &self.attacks {
            if b.epsilons.is_empty() {
                return Err(bad("attacks.epsilons", "need at least one epsilon"));
            }
            for &e in &b.epsilons {
                natspace::adv::AttackConfig::new(e).map_err(|err| bad("attacks.epsilons", err.to_string()))?;
            }
        }
        if let Some(b) = &self.relabel {
            if b.top_k == 0 {
                return Err(bad("relabel.top_k", "must be at least 1"));
            }
        }
        Ok(())
    }

    fn validate_step(&self, b: &StepDemoBlock) -> Result<(), ConfigError> {
        if b.variants.is_empty() {
            return Err(bad("step_demo.variants", "need at least one variant"));
        }
        for v in &b.variants {
            natspace::data::step::make_step_dataset(&v.intervals, 0)
                .map_err(|e| bad("step_demo.variants", format!("{}: {e}", v.name)))?;
        }
        let mut names: Vec<&str> = b.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("step_demo.variants", "variant names must be unique"));
        }
        if b.hidden.is_empty() || b.hidden.contains(&0) {
            return Err(bad("step_demo.hidden", "need at least one positive layer width"));
        }
        if b.stages.is_empty() {
            return Err(bad("step_demo.stages", "need at least one stage"));
        }
        for s in &b.stages {
            let cfg = TrainConfig {
                learning_rate: s.learning_rate,
                momentum: b.momentum,
                batch_size: b.batch_size,
                epochs: s.epochs,
                seed: 0,
            };
            cfg.validate().map_err(|e| bad("step_demo.stages", e.to_string()))?;
        }
        if b.grid_points < 2 {
            return Err(bad("step_demo.grid_points", "must be at least 2"));
        }
        Ok(())
    }
}
