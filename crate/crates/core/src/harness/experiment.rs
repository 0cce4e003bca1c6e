use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clonemgr::CloneKind;
use crate::controller::HoneyAddressing;
use crate::harness::scenario::{CloneMode, IdsMode, IssConfig, RequestSize, Scenario, Trigger};
use crate::harness::trace::{export_events, export_traces, summarize, EventRow, LatencyTrace, Summary, TraceError};
use crate::harness::world::{simulate, RepOutcome};
use crate::simnet::{BackgroundLoadSpec, Jitter, RngStreams};

pub const TRACE_FILE: &str = "trace.csv";
pub const CONTROLLER_FILE: &str = "controller.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Run repetition `rep` of `sc` on its derived seed.
pub fn run_repetition(sc: &Scenario, rep: u32) -> RepOutcome {
    simulate(sc, rep, RngStreams::derive_seed(sc.seed, rep as u64))
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub scenario: String,
    pub reps: Vec<RepOutcome>,
}

/// Run every repetition. Repetitions run in parallel; results come back in
/// repetition order.
pub fn run_experiment(sc: &Scenario) -> ExperimentResult {
    let reps = (0..sc.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(sc, rep))
        .collect();
    ExperimentResult {
        scenario: sc.name.clone(),
        reps,
    }
}

impl ExperimentResult {
    pub fn traces(&self) -> Vec<LatencyTrace> {
        self.reps.iter().map(|r| r.trace.clone()).collect()
    }

    pub fn event_rows(&self) -> Vec<EventRow> {
        self.reps
            .iter()
            .flat_map(|r| {
                r.events.iter().map(move |e| EventRow {
                    rep: r.rep,
                    event: e.event.to_string(),
                    time_us: e.time,
                    detail: e.detail.clone(),
                })
            })
            .collect()
    }

    pub fn migration_index(&self) -> Option<u64> {
        self.reps.iter().find_map(|r| r.migration_index())
    }

    pub fn summary(&self) -> Summary {
        summarize(&self.traces(), self.migration_index())
    }

    pub fn violation_count(&self) -> usize {
        self.reps
            .iter()
            .map(|r| r.violations.len() + r.containment_breaches + r.faults.len())
            .sum()
    }

    /// One line per problem, for reports.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.reps {
            for v in &r.violations {
                out.push(format!("rep {}: stealth {v}", r.rep));
            }
            if r.containment_breaches > 0 {
                out.push(format!(
                    "rep {}: victim served {} requests while redirected",
                    r.rep, r.containment_breaches
                ));
            }
            for f in &r.faults {
                out.push(format!("rep {}: {f}", r.rep));
            }
        }
        out
    }

    /// Write the trace, controller and summary CSVs into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), TraceError> {
        fs::create_dir_all(dir).map_err(|source| TraceError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        export_traces(&self.traces(), &dir.join(TRACE_FILE))?;
        export_events(&self.event_rows(), &dir.join(CONTROLLER_FILE))?;
        let path = dir.join(SUMMARY_FILE);
        let f = fs::File::create(&path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.summary().write_csv(f).map_err(|source| TraceError::Csv {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Migration index recorded in a controller CSV.
pub fn migration_index_from_rows(rows: &[EventRow]) -> Option<u64> {
    let i = rows
        .iter()
        .position(|e| e.event == "phase" && e.field("to") == Some("CLONING"))?;
    let rep = rows[i].rep;
    rows[..i]
        .iter()
        .rev()
        .find(|e| e.rep == rep && e.event == "alert")
        .and_then(|e| e.field("packet_index"))
        .and_then(|v| v.parse().ok())
}

/// A random small scenario: random ISS (often near the wrap), trigger
/// index, payload sizes up to 64 bytes, at most 50 requests, and a random
/// mix of IDS mode, honey addressing, clone strategy and restore.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.random_range(1..=50u64);
    let n = rng.random_range(1..=total);
    let mut sc = Scenario::basic(&format!("random_{seed}"), total, Trigger::NthPacket { n });
    sc.seed = rng.random();
    sc.request_interval_us = rng.random_range(1_000..=20_000);
    sc.request_size = RequestSize::Uniform {
        min: 1,
        max: rng.random_range(1..=64),
    };
    let iss = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            u32::MAX - rng.random_range(0..2_000)
        } else {
            rng.random()
        }
    };
    sc.iss = IssConfig {
        attacker: Some(iss(&mut rng)),
        victim: Some(iss(&mut rng)),
        honey: Some(iss(&mut rng)),
    };
    sc.ids_mode = if rng.random_bool(0.5) {
        IdsMode::Passive
    } else {
        IdsMode::Inline
    };
    sc.honey_addressing = if rng.random_bool(0.5) {
        HoneyAddressing::Mirror
    } else {
        HoneyAddressing::Internal
    };
    if rng.random_bool(0.6) {
        sc.clone.mode = CloneMode::OnDemand;
        sc.clone.strategy = Some(CloneKind::ALL[rng.random_range(0..4)]);
    }
    if rng.random_bool(0.3) {
        sc.topology.link.jitter = Jitter::Uniform { lo: -200, hi: 200 };
    }
    if rng.random_bool(0.2) {
        sc.background = Some(BackgroundLoadSpec {
            n_hosts: 3,
            procs_per_host: 4,
            msg_interval_us: 20_000,
            start_spread_us: 5_000,
        });
    }
    if n < total && rng.random_bool(0.3) {
        sc.restore_at = Some(rng.random_range(n + 1..=total));
    }
    sc.resolve(Path::new(".")).expect("random scenario is valid");
    sc
}

/// The same scenario with detection switched off.
pub fn oracle_of(sc: &Scenario) -> Scenario {
    let mut o = sc.clone();
    o.name = format!("{}_oracle", sc.name);
    o.trigger = Trigger::None;
    o.restore_at = None;
    o
}

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub scenario: Scenario,
    pub migrated: RepOutcome,
    pub oracle: RepOutcome,
}

impl SuiteCase {
    /// Attacker received exactly what it would have without migration.
    pub fn streams_match(&self) -> bool {
        self.migrated.attacker_stream == self.oracle.attacker_stream
    }
}

/// Run `count` random scenarios derived from `root`, each alongside its
/// no-migration oracle on the same seed.
pub fn randomized_suite(root: u64, count: u32) -> Vec<SuiteCase> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let sc = random_scenario(RngStreams::derive_seed(root, i as u64));
            let migrated = run_repetition(&sc, 0);
            let oracle = run_repetition(&oracle_of(&sc), 0);
            SuiteCase {
                scenario: sc,
                migrated,
                oracle,
            }
        })
        .collect()
}
