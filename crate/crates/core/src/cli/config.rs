use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, Mode};
use crate::data::{DayClass, ImputeMethod, ImputeOptions, SplitFractions, SyntheticScenario};
use crate::graph::{KernelConfig, SigmaMode, ThresholdOn};
use crate::partition::DEFAULT_IMBALANCE;
use crate::training::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub metadata: PathBuf,
    pub timeseries: PathBuf,
    /// Optional `from_id,to_id,miles` table; haversine otherwise.
    pub distances: Option<PathBuf>,
    /// Optional routing service base URL, used when no table is given.
    pub routing_url: Option<String>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            metadata: "data/metadata.csv".into(),
            timeseries: "data/timeseries.csv".into(),
            distances: None,
            routing_url: None,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    pub k_nn: usize,
    pub threshold_on: ThresholdOn,
    /// No sparsification when absent.
    pub thresh: Option<f64>,
    /// Kernel width in miles; std of queried distances when absent.
    pub sigma: Option<f64>,
    pub self_loops: bool,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            k_nn: 30,
            threshold_on: ThresholdOn::DistanceSq,
            thresh: None,
            sigma: None,
            self_loops: false,
        }
    }
}

impl GraphParams {
    pub fn kernel(&self) -> KernelConfig {
        KernelConfig {
            threshold_on: self.threshold_on,
            thresh: self.thresh.unwrap_or(match self.threshold_on {
                ThresholdOn::DistanceSq => f64::MAX,
                ThresholdOn::Weight => 0.0,
            }),
            sigma: self.sigma.map_or(SigmaMode::Auto, SigmaMode::Fixed),
            self_loops: self.self_loops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionParams {
    pub k: usize,
    pub imbalance: f64,
    pub halos: bool,
    /// Downsampling threshold between kept halos, miles.
    pub d_prime: f64,
    pub horizon_k: usize,
    pub seed: u64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            k: 2,
            imbalance: DEFAULT_IMBALANCE,
            halos: true,
            d_prime: 1.0,
            horizon_k: 30,
            seed: 0,
        }
    }
}

impl PartitionParams {
    pub fn halo_params(&self) -> Option<(usize, f64)> {
        self.halos.then_some((self.horizon_k, self.d_prime))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepParams {
    pub mode: Mode,
    pub impute: ImputeMethod,
    pub day_class: DayClass,
    pub split: SplitFractions,
}

impl Default for PrepParams {
    fn default() -> Self {
        Self {
            mode: Mode::SpeedOnly,
            impute: ImputeMethod::TemporalMean,
            day_class: DayClass::WeekdayWeekend,
            split: SplitFractions::default(),
        }
    }
}

impl PrepParams {
    pub fn impute_options(&self) -> ImputeOptions {
        ImputeOptions {
            method: self.impute,
            day_class: self.day_class,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub graph: GraphParams,
    pub partition: PartitionParams,
    pub data: PrepParams,
    /// Feature lists and model dims are derived from `data.mode`.
    pub training: TrainingConfig,
    pub synth: SyntheticScenario,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.partition.k == 0 {
            return Err(CliError::Config("partition.k must be at least 1".into()));
        }
        if self.graph.k_nn == 0 || self.partition.horizon_k == 0 {
            return Err(CliError::Config("graph.k_nn and partition.horizon_k must be positive".into()));
        }
        if !(self.partition.d_prime > 0.0) {
            return Err(CliError::Config("partition.d_prime must be positive".into()));
        }
        self.training_config().validate()?;
        Ok(())
    }

    /// Training settings with the mode's features applied.
    pub fn training_config(&self) -> TrainingConfig {
        self.data.mode.apply(&self.training)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn table_has_path(table: &toml::Table, path: &[&str]) -> bool {
    match path {
        [] => true,
        [last] => table.contains_key(*last),
        [head, rest @ ..] => match table.get(*head) {
            Some(toml::Value::Table(t)) => table_has_path(t, rest),
            _ => false,
        },
    }
}

/// Applies `section.key=value`; the value is parsed as a TOML literal and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    // known keys are those of the fully serialized default config
    let known = toml::Table::try_from(PipelineConfig::default()).map_err(|e| CliError::Config(e.to_string()))?;
    let optional = matches!(path.as_slice(), ["paths", "distances" | "routing_url"] | ["graph", "thresh" | "sigma"]);
    if !table_has_path(&known, &path) && !optional {
        return Err(CliError::Config(format!("unknown config key {key:?}")));
    }
    let mut cur = table;
    for p in &path[..path.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key:?}: {p} is not a section")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads the TOML file (defaults when `path` is `None`) and applies the
/// overrides in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: PipelineConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}
