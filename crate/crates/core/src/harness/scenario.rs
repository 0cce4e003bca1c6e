use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clonemgr::{select_strategy, CloneKind, CostTable, Weights};
use crate::controller::{Fallback, HoneyAddressing};
use crate::ids::{parse_ruleset, IdsRule};
use crate::netcore::Micros;
use crate::simnet::{BackgroundLoadSpec, LinkModel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    /// Dotted path of the offending field, or the file for whole-document errors.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Where the IDS sits relative to the forwarding path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdsMode {
    /// Works on mirrored copies; the alerting packet still reaches the server.
    #[default]
    Passive,
    /// The alert is acted on before the alerting packet is forwarded.
    Inline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    /// Alert on the n-th attacker data segment.
    NthPacket { n: u64 },
    /// Alert from the threshold rules in `ruleset`.
    Threshold,
    /// No detection; the connection is never migrated.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum RequestSize {
    Fixed { bytes: u32 },
    Uniform { min: u32, max: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    #[serde(default)]
    pub link: LinkModel,
    /// One-way delay between switch and controller, and between IDS and controller.
    #[serde(default = "default_control_delay")]
    pub control_delay_us: Micros,
    /// Controller time spent per input.
    #[serde(default = "default_service")]
    pub controller_service_us: Micros,
    /// How long the switch holds a packet that missed the table.
    #[serde(default = "default_miss_hold")]
    pub miss_hold_us: Micros,
}

fn default_control_delay() -> Micros {
    50
}

fn default_service() -> Micros {
    10
}

fn default_miss_hold() -> Micros {
    1_000_000
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            link: LinkModel::default(),
            control_delay_us: default_control_delay(),
            controller_service_us: default_service(),
            miss_hold_us: default_miss_hold(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloneMode {
    #[default]
    Prestaged,
    OnDemand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloneConfig {
    #[serde(default)]
    pub mode: CloneMode,
    /// Fixed strategy; picked by `select_strategy` when absent.
    #[serde(default)]
    pub strategy: Option<CloneKind>,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub cost_table: Option<PathBuf>,
    #[serde(default)]
    pub failure_probability: f64,
    #[serde(default)]
    pub fallback: Fallback,
}

impl Default for CloneConfig {
    fn default() -> Self {
        CloneConfig {
            mode: CloneMode::Prestaged,
            strategy: None,
            weights: Weights::default(),
            cost_table: None,
            failure_probability: 0.0,
            fallback: Fallback::FailOpen,
        }
    }
}

/// Initial sequence numbers. Unset ones are drawn from the entity's stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssConfig {
    pub attacker: Option<u32>,
    pub victim: Option<u32>,
    pub honey: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: u32,
    pub total_packets: u64,
    #[serde(default = "default_interval")]
    pub request_interval_us: Micros,
    #[serde(default)]
    pub attacker_start_us: Micros,
    pub request_size: RequestSize,
    pub trigger: Trigger,
    #[serde(default)]
    pub ruleset: Option<PathBuf>,
    #[serde(default = "yes")]
    pub replay: bool,
    #[serde(default)]
    pub restore_at: Option<u64>,
    #[serde(default)]
    pub ids_mode: IdsMode,
    #[serde(default)]
    pub honey_addressing: HoneyAddressing,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub background: Option<BackgroundLoadSpec>,
    #[serde(default)]
    pub clone: CloneConfig,
    #[serde(default)]
    pub iss: IssConfig,
    /// Loaded resources; filled in by [`Scenario::resolve`].
    #[serde(skip)]
    pub resolved: Resolved,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Resolved {
    pub rules: Vec<IdsRule>,
    pub cost_table: CostTable,
    pub strategy: Option<CloneKind>,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

fn default_interval() -> Micros {
    10_000
}

impl Scenario {
    /// A minimal single-repetition scenario with every other setting at its default.
    pub fn basic(name: &str, total_packets: u64, trigger: Trigger) -> Self {
        let mut s = Scenario {
            name: name.into(),
            seed: 0,
            repetitions: 1,
            total_packets,
            request_interval_us: default_interval(),
            attacker_start_us: 0,
            request_size: RequestSize::Fixed { bytes: 32 },
            trigger,
            ruleset: None,
            replay: true,
            restore_at: None,
            ids_mode: IdsMode::Passive,
            honey_addressing: HoneyAddressing::Mirror,
            topology: Topology::default(),
            background: None,
            clone: CloneConfig::default(),
            iss: IssConfig::default(),
            resolved: Resolved::default(),
        };
        s.resolve(Path::new(".")).expect("basic scenario is valid");
        s
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        let mut s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().message().to_string())
        })?;
        s.resolve(base_dir)?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Check invariants and load the files the scenario points to.
    /// Relative paths are taken from `base_dir`.
    pub fn resolve(&mut self, base_dir: &Path) -> Result<(), ConfigError> {
        self.validate()?;
        let mut r = Resolved::default();
        if let Some(p) = &self.clone.cost_table {
            let path = base_dir.join(p);
            r.cost_table = CostTable::load(&path).map_err(|e| ConfigError::new("clone.cost_table", e.to_string()))?;
        }
        r.strategy = match (self.clone.mode, self.clone.strategy) {
            (CloneMode::Prestaged, _) => None,
            (CloneMode::OnDemand, Some(k)) => {
                if r.cost_table.get(k).is_none() {
                    return Err(ConfigError::new(
                        "clone.strategy",
                        format!("{k} is not in the cost table"),
                    ));
                }
                Some(k)
            }
            (CloneMode::OnDemand, None) => Some(
                select_strategy(&r.cost_table, self.clone.weights)
                    .map_err(|e| ConfigError::new("clone.weights", e.to_string()))?,
            ),
        };
        if let Some(p) = &self.ruleset {
            let path = base_dir.join(p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ConfigError::new("ruleset", format!("{}: {e}", path.display())))?;
            r.rules = parse_ruleset(&text).map_err(|e| ConfigError::new("ruleset", e.to_string()))?;
        }
        if self.trigger == Trigger::Threshold && r.rules.is_empty() {
            return Err(ConfigError::new(
                "ruleset",
                "threshold trigger needs a non-empty ruleset",
            ));
        }
        self.resolved = r;
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() {
            return Err(ConfigError::new("name", "must not be empty"));
        }
        if self.repetitions == 0 {
            return Err(ConfigError::new("repetitions", "must be at least 1"));
        }
        if self.total_packets == 0 {
            return Err(ConfigError::new("total_packets", "must be at least 1"));
        }
        if self.request_interval_us == 0 {
            return Err(ConfigError::new("request_interval_us", "must be positive"));
        }
        match self.request_size {
            RequestSize::Fixed { bytes: 0 } => return Err(ConfigError::new("request_size.bytes", "must be positive")),
            RequestSize::Uniform { min, max } if min == 0 || min > max => {
                return Err(ConfigError::new("request_size", "need 1 <= min <= max"))
            }
            _ => {}
        }
        if let Trigger::NthPacket { n } = self.trigger {
            if n == 0 {
                return Err(ConfigError::new("trigger.n", "must be at least 1"));
            }
            if n > self.total_packets {
                return Err(ConfigError::new(
                    "trigger.n",
                    format!("trigger index {n} exceeds total_packets {}", self.total_packets),
                ));
            }
        }
        if self.trigger == Trigger::Threshold && self.ruleset.is_none() {
            return Err(ConfigError::new("ruleset", "threshold trigger needs a ruleset path"));
        }
        if let Some(r) = self.restore_at {
            if let Some(t) = self.trigger_index() {
                if r <= t {
                    return Err(ConfigError::new(
                        "restore_at",
                        format!("must come after the trigger index {t}, got {r}"),
                    ));
                }
            }
            if r > self.total_packets {
                return Err(ConfigError::new("restore_at", "exceeds total_packets"));
            }
        }
        let p = self.clone.failure_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(ConfigError::new("clone.failure_probability", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Packet index the trigger fires on, when it is known up front.
    pub fn trigger_index(&self) -> Option<u64> {
        match self.trigger {
            Trigger::NthPacket { n } => Some(n),
            Trigger::Threshold => self
                .resolved
                .rules
                .iter()
                .filter_map(|r| r.threshold.map(|t| t.count as u64))
                .min(),
            Trigger::None => None,
        }
    }
}

/// Read and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Scenario::from_toml_str(&text, base)
}
