//! Scenario files, experiment runs, latency traces and their CSV exports.

mod experiment;
mod scenario;
mod stealth;
mod trace;
mod world;

pub use experiment::{
    migration_index_from_rows, oracle_of, random_scenario, randomized_suite, run_experiment, run_repetition,
    ExperimentResult, SuiteCase, CONTROLLER_FILE, SUMMARY_FILE, TRACE_FILE,
};
pub use scenario::{
    load_scenario, CloneConfig, CloneMode, ConfigError, IdsMode, IssConfig, RequestSize, Resolved, Scenario, Topology,
    Trigger,
};
pub use stealth::{StealthMonitor, Violation, ViolationKind};
pub use trace::{
    export_events, export_traces, load_events, load_traces, read_events, read_traces, summarize, write_events,
    write_traces, EventRow, IndexStats, LatencyTrace, PacketRecord, Summary, TraceError,
};
pub use world::{
    attacker_addr, background_addr, controller_config, internal_honey_addr, simulate, simulate_with, victim_addr,
    Overrides, RepOutcome, APP_ID, ATTACKER_PORT, ATTACKER_SPORT, BACKGROUND_PORT_BASE, HONEY_PORT, SERVICE_PORT,
    VICTIM_PORT,
};
