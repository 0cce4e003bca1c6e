//! Honey-server instantiation: strategy cost table, latency sampling and
//! strategy selection.
//!
//! The numbers in the default table are configuration. They only encode the
//! qualitative ordering between strategies: a suspended clone is fastest but
//! costs resources at rest, a prepared victim image is quick and free while
//! idle, and scanning-based rebuilds or full disk copies are slow.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::{HostAddr, Micros};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CloneKind {
    InfoConfig,
    VictimImage,
    Suspended,
    DiskCopy,
}

impl CloneKind {
    pub const ALL: [CloneKind; 4] = [
        CloneKind::InfoConfig,
        CloneKind::VictimImage,
        CloneKind::Suspended,
        CloneKind::DiskCopy,
    ];
}

impl fmt::Display for CloneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CloneKind::InfoConfig => "INFO_CONFIG",
            CloneKind::VictimImage => "VICTIM_IMAGE",
            CloneKind::Suspended => "SUSPENDED",
            CloneKind::DiskCopy => "DISK_COPY",
        })
    }
}

/// Instantiation latency in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum LatencyDist {
    Fixed { us: Micros },
    Uniform { lo: Micros, hi: Micros },
    Normal { mean: f64, sd: f64 },
}

impl LatencyDist {
    pub fn mean_us(&self) -> f64 {
        match *self {
            LatencyDist::Fixed { us } => us as f64,
            LatencyDist::Uniform { lo, hi } => (lo as f64 + hi as f64) / 2.0,
            LatencyDist::Normal { mean, .. } => mean.max(0.0),
        }
    }

    /// Never negative.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Micros {
        match *self {
            LatencyDist::Fixed { us } => us,
            LatencyDist::Uniform { lo, hi } if lo >= hi => lo,
            LatencyDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
            LatencyDist::Normal { mean, sd } => {
                let x = Normal::new(mean, sd).map_or(mean, |n| n.sample(rng));
                x.round().max(0.0) as Micros
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            LatencyDist::Fixed { .. } => Ok(()),
            LatencyDist::Uniform { lo, hi } if lo > hi => Err(format!("uniform lo {lo} > hi {hi}")),
            LatencyDist::Uniform { .. } => Ok(()),
            LatencyDist::Normal { mean, sd } if !(mean.is_finite() && sd.is_finite() && sd >= 0.0 && mean >= 0.0) => {
                Err(format!("bad normal parameters mean={mean} sd={sd}"))
            }
            LatencyDist::Normal { .. } => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub kind: CloneKind,
    pub latency: LatencyDist,
    /// Resource units per second while no clone is in use.
    pub steady_cost: f64,
    /// Resource units charged for each clone actually created.
    #[serde(default)]
    pub per_clone_cost: f64,
    #[serde(default)]
    pub staleness_risk: String,
}

impl StrategyEntry {
    /// Steady cost over the horizon plus the cost of the clones created.
    pub fn cost(&self, horizon_s: f64, clones: u32) -> f64 {
        self.steady_cost * horizon_s.max(0.0) + self.per_clone_cost * clones as f64
    }
}

#[derive(Debug, Error)]
pub enum CostTableError {
    #[error("cost table: {0}")]
    Invalid(String),
    #[error("cost table: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("cost table {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    #[serde(rename = "strategy")]
    pub strategies: Vec<StrategyEntry>,
}

impl Default for CostTable {
    fn default() -> Self {
        let entry = |kind, latency, steady_cost, per_clone_cost, staleness_risk: &str| StrategyEntry {
            kind,
            latency,
            steady_cost,
            per_clone_cost,
            staleness_risk: staleness_risk.into(),
        };
        CostTable {
            strategies: vec![
                entry(
                    CloneKind::InfoConfig,
                    LatencyDist::Fixed { us: 45_000 },
                    0.2,
                    5.0,
                    "services match the last scan; data is absent",
                ),
                entry(
                    CloneKind::VictimImage,
                    LatencyDist::Fixed { us: 2_500 },
                    0.0,
                    1.0,
                    "as old as the last image build",
                ),
                entry(
                    CloneKind::Suspended,
                    LatencyDist::Fixed { us: 500 },
                    4.0,
                    0.0,
                    "as old as the suspend point",
                ),
                entry(
                    CloneKind::DiskCopy,
                    LatencyDist::Fixed { us: 120_000 },
                    0.0,
                    2.0,
                    "current",
                ),
            ],
        }
    }
}

impl CostTable {
    pub fn from_toml_str(text: &str) -> Result<Self, CostTableError> {
        let t: CostTable = toml::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, CostTableError> {
        let text = std::fs::read_to_string(path).map_err(|source| CostTableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("cost table serializes")
    }

    pub fn validate(&self) -> Result<(), CostTableError> {
        if self.strategies.is_empty() {
            return Err(CostTableError::Invalid("no strategies".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].iter().any(|o| o.kind == s.kind) {
                return Err(CostTableError::Invalid(format!("duplicate strategy {}", s.kind)));
            }
            s.latency
                .validate()
                .map_err(|e| CostTableError::Invalid(format!("{}: {e}", s.kind)))?;
            for (name, v) in [("steady_cost", s.steady_cost), ("per_clone_cost", s.per_clone_cost)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(CostTableError::Invalid(format!("{}: {name} must be >= 0", s.kind)));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, kind: CloneKind) -> Option<&StrategyEntry> {
        self.strategies.iter().find(|s| s.kind == kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_latency: f64,
    pub w_cost: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w_latency: 1.0,
            w_cost: 1.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloneError {
    #[error("clone instantiation failed")]
    CloneFailed,
    #[error("strategy {0} is not in the cost table")]
    UnknownStrategy(CloneKind),
    #[error("weights must be non-negative and not both zero")]
    BadWeights,
}

/// Selection score: `w_latency * mean latency (ms) + w_cost * steady cost (units/s)`.
pub fn strategy_score(entry: &StrategyEntry, w: Weights) -> f64 {
    w.w_latency * entry.latency.mean_us() / 1_000.0 + w.w_cost * entry.steady_cost
}

/// Lowest-scoring strategy. Ties go to the earlier kind in declaration order.
pub fn select_strategy(table: &CostTable, w: Weights) -> Result<CloneKind, CloneError> {
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !ok(w.w_latency) || !ok(w.w_cost) || (w.w_latency == 0.0 && w.w_cost == 0.0) {
        return Err(CloneError::BadWeights);
    }
    let mut entries: Vec<&StrategyEntry> = table.strategies.iter().collect();
    entries.sort_by_key(|e| e.kind);
    let mut best: Option<(f64, CloneKind)> = None;
    for e in entries {
        let s = strategy_score(e, w);
        if best.is_none_or(|(b, _)| s < b) {
            best = Some((s, e.kind));
        }
    }
    best.map(|(_, k)| k).ok_or(CloneError::BadWeights)
}

/// What a honey server has to look like.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VictimSpec {
    pub addr: HostAddr,
    pub app_id: String,
    pub ports: Vec<u16>,
    pub image_version: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CloneHandle(pub u32);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CloneTicket {
    pub handle: CloneHandle,
    pub kind: CloneKind,
    /// Simulated time from request to the clone answering on the network.
    pub latency_us: Micros,
    pub spec: VictimSpec,
}

pub struct CloneManager {
    table: CostTable,
    failure_probability: f64,
    rng: ChaCha8Rng,
    next: u32,
    created: Vec<CloneKind>,
}

impl CloneManager {
    pub fn new(table: CostTable, failure_probability: f64, rng: ChaCha8Rng) -> Self {
        CloneManager {
            table,
            failure_probability: failure_probability.clamp(0.0, 1.0),
            rng,
            next: 0,
            created: Vec::new(),
        }
    }

    pub fn table(&self) -> &CostTable {
        &self.table
    }

    pub fn request_clone(&mut self, spec: &VictimSpec, kind: CloneKind) -> Result<CloneTicket, CloneError> {
        let entry = self.table.get(kind).ok_or(CloneError::UnknownStrategy(kind))?;
        if self.failure_probability > 0.0 && self.rng.random_bool(self.failure_probability) {
            return Err(CloneError::CloneFailed);
        }
        let latency_us = entry.latency.sample(&mut self.rng);
        let handle = CloneHandle(self.next);
        self.next += 1;
        self.created.push(kind);
        Ok(CloneTicket {
            handle,
            kind,
            latency_us,
            spec: spec.clone(),
        })
    }

    pub fn clones_created(&self, kind: CloneKind) -> u32 {
        self.created.iter().filter(|k| **k == kind).count() as u32
    }

    /// Resources spent by `kind` over the horizon, counting clones created so far.
    pub fn strategy_cost(&self, kind: CloneKind, horizon_s: f64) -> Option<f64> {
        self.table
            .get(kind)
            .map(|e| e.cost(horizon_s, self.clones_created(kind)))
    }
}
