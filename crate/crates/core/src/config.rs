//! Declarative run configuration.
//!
//! An [`ExperimentConfig`] fully describes one run: scenario, protocol
//! hyperparameters, function choices, transport, baseline mode and seeds.
//! Defaults follow the default simulation settings (staleness tolerance 2,
//! participation 0.6, Adam at 1e-4, batch 100, one local epoch, threshold
//! 0.95); fields that depend on the scenario or on other fields are
//! `Option`s resolved by [`ExperimentConfig::normalized`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adaptive::RoundWeightFunction;
use crate::aggregation::{StalenessFunction, SupervisedWeightSchedule};
use crate::data::{CsvSchema, SizeProfile};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::nn::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Highly skewed ten-party CSV scenario (shipped quota table).
    Basic,
    /// Identically distributed ten-party CSV scenario.
    Balanced,
    /// Desk-scale Gaussian blobs with Dirichlet label skew.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// The full protocol.
    Feds3a,
    /// Synchronous rounds over a randomly pre-selected subset; waits for
    /// every selected client.
    FedavgPartial,
    /// Synchronous rounds over all clients.
    FedavgAll,
    /// Quorum of one (aggregate on every upload) with polynomial staleness.
    Fedasync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramSource {
    /// Group by the pseudo-label distribution of the client's latest pass.
    PseudoLabel,
    /// Group by ground-truth histograms (simulator-only analysis mode).
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    pub separation: f64,
    pub dirichlet_alpha: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { classes: 3, per_class: 350, feature_dim: 8, separation: 8.0, dirichlet_alpha: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationConfig {
    /// Virtual seconds the largest client takes per training pass; the
    /// power-law scale is calibrated so the biggest partition maps here.
    pub target_longest_s: f64,
    /// Exponent of the size -> duration power law.
    pub exponent: f64,
    /// Lognormal jitter sigma; 0 makes durations exact.
    pub jitter_sigma: f64,
    /// Explicit per-client, per-attempt durations (overrides the power
    /// law); the last entry repeats once exhausted.
    pub scripted: Option<Vec<Vec<f64>>>,
}

impl Default for DurationConfig {
    fn default() -> Self {
        Self { target_longest_s: 317.0, exponent: 0.42, jitter_sigma: 0.1, scripted: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: u64,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self { patience: 10, min_delta: 1e-4 }
    }
}

fn default_clients() -> usize {
    10
}
fn default_participation() -> f64 {
    0.6
}
fn default_tolerance() -> u64 {
    2
}
fn default_rounds() -> u64 {
    50
}
fn default_threshold() -> f64 {
    0.95
}
fn default_batch() -> usize {
    100
}
fn default_epochs() -> usize {
    1
}
fn default_warmup() -> usize {
    5
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_lr() -> f64 {
    1e-4
}
fn default_alpha() -> f64 {
    0.5
}
fn default_decay() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_groups() -> usize {
    3
}
fn default_hist_source() -> HistogramSource {
    HistogramSource::PseudoLabel
}
fn default_l1() -> f64 {
    1e-5
}
fn default_zero_threshold() -> f64 {
    1e-8
}
fn default_transport() -> TransportKind {
    TransportKind::Sparse
}
fn default_baseline() -> BaselineMode {
    BaselineMode::Feds3a
}
fn default_seed() -> u64 {
    42
}
fn default_reps() -> usize {
    1
}
fn default_server_fraction() -> f64 {
    0.05
}
fn default_test_fraction() -> f64 {
    0.1
}
fn default_dropout() -> f64 {
    0.1
}
fn default_scenario() -> ScenarioKind {
    ScenarioKind::Synthetic
}
fn default_size_profile() -> SizeProfile {
    SizeProfile::default_geometric()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_scenario")]
    pub scenario: ScenarioKind,
    /// M, the number of clients.
    #[serde(default = "default_clients")]
    pub clients: usize,
    /// C, the fraction of clients whose uploads trigger a global update.
    #[serde(default = "default_participation")]
    pub participation: f64,
    /// Tau, the staleness tolerance.
    #[serde(default = "default_tolerance")]
    pub staleness_tolerance: u64,
    /// R, the number of global rounds.
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    /// Theta, the pseudo-label confidence threshold.
    #[serde(default = "default_threshold")]
    pub pseudo_label_threshold: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// E, local epochs per training pass.
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    /// Server warm-up epochs before round 0.
    #[serde(default = "default_warmup")]
    pub server_warmup_epochs: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Lambda, the global learning rate.
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Initial supervised weight (alpha).
    #[serde(default = "default_alpha")]
    pub supervised_alpha: f64,
    /// Asymptotic supervised weight; defaults to `1 / (C*M + 1)`.
    #[serde(default)]
    pub supervised_beta: Option<f64>,
    #[serde(default = "default_decay")]
    pub supervised_decay: f64,
    /// Defaults per scenario: exponential (basic, synthetic) or polynomial
    /// (balanced).
    #[serde(default)]
    pub staleness_function: Option<StalenessFunction>,
    /// Defaults per scenario: exponential (basic, synthetic) or exponential
    /// smoothing (balanced).
    #[serde(default)]
    pub round_weight_function: Option<RoundWeightFunction>,
    #[serde(default = "default_true")]
    pub adaptive_lr: bool,
    /// |G|, the number of aggregation groups (1 disables grouping).
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_hist_source")]
    pub histogram_source: HistogramSource,
    /// Renormalize intra-group weights to sum to one (convex combination).
    /// Off keeps the literal discounted weights.
    #[serde(default = "default_true")]
    pub normalize_weights: bool,
    #[serde(default = "default_l1")]
    pub l1: f64,
    #[serde(default = "default_zero_threshold")]
    pub zero_threshold: f64,
    #[serde(default = "default_transport")]
    pub transport: TransportKind,
    #[serde(default = "default_baseline")]
    pub baseline: BaselineMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    /// Share of the training data labeled at the server.
    #[serde(default = "default_server_fraction")]
    pub server_fraction: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Hidden layer widths; defaults to [16] for synthetic data and
    /// [64, 32] for CSV scenarios.
    #[serde(default)]
    pub hidden_layers: Option<Vec<usize>>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default = "default_size_profile")]
    pub size_profile: SizeProfile,
    #[serde(default)]
    pub duration: DurationConfig,
    #[serde(default)]
    pub early_stop: Option<EarlyStopConfig>,
    /// CSV file for the basic/balanced scenarios.
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    /// Column layout for `data_path`; defaults to the ten-party schema of
    /// the shipped quota tables.
    #[serde(default)]
    pub csv_schema: Option<CsvSchema>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config resolves to defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Quorum size: `ceil(C * M)`.
    pub fn quorum(&self) -> usize {
        (self.participation * self.clients as f64).ceil() as usize
    }

    pub fn supervised_schedule(&self) -> SupervisedWeightSchedule {
        SupervisedWeightSchedule {
            alpha: self.supervised_alpha,
            beta: self
                .supervised_beta
                .unwrap_or(1.0 / (self.participation * self.clients as f64 + 1.0)),
            decay: self.supervised_decay,
        }
    }

    pub fn staleness(&self) -> StalenessFunction {
        self.staleness_function.unwrap_or(match self.scenario {
            ScenarioKind::Balanced => StalenessFunction::default_polynomial(),
            _ => StalenessFunction::default_exponential(),
        })
    }

    pub fn round_weight(&self) -> RoundWeightFunction {
        self.round_weight_function.unwrap_or(match self.scenario {
            ScenarioKind::Balanced => RoundWeightFunction::default_exponential_smoothing(),
            _ => RoundWeightFunction::default_exponential(),
        })
    }

    pub fn model_spec(&self, feature_dim: usize, classes: usize) -> Result<ModelSpec> {
        let hidden = match &self.hidden_layers {
            Some(h) => h.clone(),
            None => match self.scenario {
                ScenarioKind::Synthetic => vec![16],
                _ => vec![64, 32],
            },
        };
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(feature_dim);
        widths.extend(hidden);
        widths.push(classes);
        ModelSpec::new(widths, self.dropout, self.l1)
    }

    /// The ten-party CSV schema used with the shipped quota tables.
    pub fn csv_schema(&self) -> CsvSchema {
        self.csv_schema.clone().unwrap_or_else(|| CsvSchema {
            label_column: "Label".into(),
            classes: crate::data::QuotaTable::cic_basic().class_names,
            feature_columns: None,
        })
    }

    /// Resolves scenario-dependent defaults and applies the baseline
    /// overrides, yielding a concrete, echoable configuration. Idempotent.
    pub fn normalized(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        match cfg.baseline {
            BaselineMode::Feds3a => {}
            BaselineMode::FedavgAll => {
                cfg.participation = 1.0;
                cfg.staleness_tolerance = 0;
                cfg.staleness_function = Some(StalenessFunction::Constant);
                cfg.round_weight_function = Some(RoundWeightFunction::Constant);
                cfg.adaptive_lr = false;
                cfg.groups = 1;
                cfg.transport = TransportKind::Dense;
            }
            BaselineMode::FedavgPartial => {
                cfg.staleness_tolerance = 0;
                cfg.staleness_function = Some(StalenessFunction::Constant);
                cfg.round_weight_function = Some(RoundWeightFunction::Constant);
                cfg.adaptive_lr = false;
                cfg.groups = 1;
                cfg.transport = TransportKind::Dense;
            }
            BaselineMode::Fedasync => {
                cfg.participation = 1.0 / cfg.clients as f64;
                cfg.staleness_function = Some(StalenessFunction::Polynomial { a: 0.5 });
                cfg.staleness_tolerance = 16;
                cfg.round_weight_function = Some(RoundWeightFunction::Constant);
                cfg.adaptive_lr = false;
                cfg.groups = 1;
                cfg.transport = TransportKind::Dense;
            }
        }
        cfg.supervised_beta = Some(cfg.supervised_schedule().beta);
        cfg.staleness_function = Some(cfg.staleness());
        cfg.round_weight_function = Some(cfg.round_weight());
        if cfg.hidden_layers.is_none() {
            cfg.hidden_layers = Some(match cfg.scenario {
                ScenarioKind::Synthetic => vec![16],
                _ => vec![64, 32],
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &str, detail: String) -> Error {
            Error::Config(format!("{field}: {detail}"))
        }
        if self.clients < 2 {
            return Err(bad("clients", format!("must be >= 2, got {}", self.clients)));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(bad(
                "participation",
                format!("must be in (0, 1], got {}", self.participation),
            ));
        }
        if self.rounds == 0 {
            return Err(bad("rounds", "must be >= 1".into()));
        }
        if !(self.pseudo_label_threshold > 0.0 && self.pseudo_label_threshold <= 1.0) {
            return Err(bad(
                "pseudo_label_threshold",
                format!("must be in (0, 1], got {}", self.pseudo_label_threshold),
            ));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if !(self.supervised_alpha > 0.0 && self.supervised_alpha < 1.0) {
            return Err(bad(
                "supervised_alpha",
                format!("must be in (0, 1), got {}", self.supervised_alpha),
            ));
        }
        if let Some(beta) = self.supervised_beta {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(bad("supervised_beta", format!("must be in (0, 1), got {beta}")));
            }
        }
        if !(self.supervised_decay > 0.0 && self.supervised_decay < 1.0) {
            return Err(bad(
                "supervised_decay",
                format!("must be in (0, 1), got {}", self.supervised_decay),
            ));
        }
        if self.groups == 0 {
            return Err(bad("groups", "must be >= 1".into()));
        }
        if self.l1 < 0.0 {
            return Err(bad("l1", format!("must be nonnegative, got {}", self.l1)));
        }
        if self.zero_threshold < 0.0 {
            return Err(bad(
                "zero_threshold",
                format!("must be nonnegative, got {}", self.zero_threshold),
            ));
        }
        if self.repetitions == 0 {
            return Err(bad("repetitions", "must be >= 1".into()));
        }
        if !(self.server_fraction > 0.0 && self.server_fraction < 1.0) {
            return Err(bad(
                "server_fraction",
                format!("must be in (0, 1), got {}", self.server_fraction),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(bad(
                "test_fraction",
                format!("must be in [0, 1), got {}", self.test_fraction),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(bad("dropout", format!("must be in [0, 1), got {}", self.dropout)));
        }
        if let Some(g) = &self.staleness_function {
            match g {
                StalenessFunction::Exponential { a } if *a <= 1.0 => {
                    return Err(bad("staleness_function", "exponential base must be > 1".into()));
                }
                StalenessFunction::Polynomial { a } if *a <= 0.0 => {
                    return Err(bad("staleness_function", "polynomial exponent must be > 0".into()));
                }
                _ => {}
            }
        }
        if matches!(self.scenario, ScenarioKind::Basic | ScenarioKind::Balanced)
            && self.data_path.is_none()
        {
            return Err(bad("data_path", "CSV scenarios need a dataset file".into()));
        }
        if let Some(scripted) = &self.duration.scripted {
            if scripted.len() != self.clients {
                return Err(bad(
                    "duration.scripted",
                    format!("has {} rows for {} clients", scripted.len(), self.clients),
                ));
            }
            if scripted.iter().any(|s| s.is_empty()) {
                return Err(bad("duration.scripted", "every client needs a duration".into()));
            }
        }
        Ok(())
    }
}
