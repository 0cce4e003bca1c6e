use std::path::{Path, PathBuf};

use honeysplice::clonemgr::{CloneKind, CostTable};
use honeysplice::controller::{Fallback, HoneyAddressing, Phase};
use honeysplice::harness::{
    load_scenario, oracle_of, random_scenario, run_experiment, run_repetition, simulate_with, CloneMode, IdsMode,
    Overrides, RepOutcome, Scenario, Trigger,
};
use honeysplice::simnet::RngStreams;

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    load_scenario(&scenario_dir().join(format!("{name}.toml"))).unwrap()
}

fn small(name: &str, total: u64, n: u64) -> Scenario {
    let mut sc = Scenario::basic(name, total, Trigger::NthPacket { n });
    sc.resolve(Path::new(".")).unwrap();
    sc
}

fn responses(r: &RepOutcome) -> usize {
    r.trace.records.iter().filter(|p| p.recv_us.is_some()).count()
}

#[test]
fn every_shipped_scenario_loads_and_validates() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") && !path.to_string_lossy().contains("cost_table") {
            load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 8);
}

#[test]
fn shipped_cost_table_is_the_default() {
    let t = CostTable::load(&scenario_dir().join("cost_table.toml")).unwrap();
    assert_eq!(t, CostTable::default());
    CostTable::load(&scenario_dir().join("cost_table_slow.toml")).unwrap();
}

#[test]
fn zero_jitter_rtt_is_four_link_delays() {
    let sc = load("e1_redirect");
    let delay = sc.topology.link.base_delay_us;
    let r = run_repetition(&sc, 0);
    assert!(r.is_clean());
    assert_eq!(r.trace.records.len(), 120);
    for p in &r.trace.records {
        assert_eq!(p.rtt_us(), Some(4 * delay), "packet {}", p.index);
    }
}

#[test]
fn redirected_honey_sees_whole_history() {
    for name in ["e1_redirect", "e1_internal"] {
        let r = run_repetition(&load(name), 0);
        assert!(r.is_clean(), "{name}: {:?}", r.violations);
        assert_eq!(r.final_phase(), Phase::Redirected);
        assert_eq!(r.honey_log, r.attacker_requests, "{name}");
        assert!(r.attacker_requests.starts_with(&r.victim_log));
        assert!(r.victim_log.len() >= 99, "{name}: victim served {}", r.victim_log.len());
    }
}

#[test]
fn internal_addressing_hides_honey_address() {
    let sc = load("e1_internal");
    assert_eq!(sc.honey_addressing, HoneyAddressing::Internal);
    let r = run_repetition(&sc, 3);
    let o = run_repetition(&oracle_of(&sc), 3);
    assert!(r.violations.is_empty());
    assert_eq!(r.attacker_stream, o.attacker_stream);
}

#[test]
fn inline_and_passive_ids_both_contain_the_attacker() {
    for mode in [IdsMode::Passive, IdsMode::Inline] {
        let mut sc = small("inline", 20, 7);
        sc.ids_mode = mode;
        let r = run_repetition(&sc, 0);
        assert!(r.is_clean(), "{mode:?}: {:?}", r.violations);
        assert_eq!(r.migration_index(), Some(7));
        assert_eq!(r.attacker_stream, run_repetition(&oracle_of(&sc), 0).attacker_stream);
    }
}

#[test]
fn threshold_rule_migrates_on_fifth_request() {
    let r = run_experiment(&load("threshold_rule"));
    assert!(r.problems().is_empty(), "{:?}", r.problems());
    for rep in &r.reps {
        assert_eq!(rep.migration_index(), Some(5));
    }
}

#[test]
fn slow_instantiation_still_stealthy() {
    let sc = load("e3_stress");
    let r = run_repetition(&sc, 0);
    let o = run_repetition(&oracle_of(&sc), 0);
    assert!(r.is_clean(), "{:?}", r.violations);
    assert_eq!(r.attacker_stream, o.attacker_stream);
    let slowest = r.trace.records.iter().filter_map(|p| p.rtt_us()).max().unwrap();
    let base = o.trace.records.iter().filter_map(|p| p.rtt_us()).max().unwrap();
    assert!(slowest > base, "a 20-30 ms clone should show up in some rtt");
}

fn failing(fallback: Fallback) -> Scenario {
    let mut sc = small("failing", 30, 10);
    sc.clone.mode = CloneMode::OnDemand;
    sc.clone.strategy = Some(CloneKind::VictimImage);
    sc.clone.failure_probability = 1.0;
    sc.clone.fallback = fallback;
    sc.topology.miss_hold_us = 5_000;
    sc.resolve(Path::new(".")).unwrap();
    sc
}

#[test]
fn fail_open_hands_connection_back() {
    let sc = failing(Fallback::FailOpen);
    let r = run_repetition(&sc, 0);
    assert!(r.is_clean(), "{:?} {:?}", r.violations, r.faults);
    assert_eq!(r.final_phase(), Phase::Restored);
    assert!(r.events.iter().any(|e| e.event == "clone_failed"));
    assert_eq!(r.attacker_stream, run_repetition(&oracle_of(&sc), 0).attacker_stream);
    assert_eq!(r.victim_log, r.attacker_requests);
}

#[test]
fn fail_closed_cuts_attacker_off() {
    let sc = failing(Fallback::FailClosed);
    let r = run_repetition(&sc, 0);
    assert_eq!(r.final_phase(), Phase::Failed);
    assert!(r.faults.is_empty(), "{:?}", r.faults);
    assert!(responses(&r) < 30);
    assert!(r.victim_log.len() <= 10, "victim kept serving: {}", r.victim_log.len());
    assert!(r
        .events
        .iter()
        .any(|e| e.event == "fallback" && e.field("mode") == Some("fail_closed")));
}

#[test]
fn refused_restore_keeps_honey_serving() {
    let mut sc = small("refused", 30, 10);
    sc.restore_at = Some(20);
    let seed = RngStreams::derive_seed(sc.seed, 0);
    let r = simulate_with(
        &sc,
        0,
        seed,
        Overrides {
            victim_refuses_after_cut: true,
        },
    );
    assert!(r.is_clean(), "{:?}", r.violations);
    assert!(r.events.iter().any(|e| e.event == "restore_failed"));
    assert_eq!(r.final_phase(), Phase::Redirected);
    assert_eq!(r.attacker_stream, run_repetition(&oracle_of(&sc), 0).attacker_stream);
}

#[test]
fn repetitions_use_distinct_seeds() {
    let mut sc = load("e1_redirect_jitter");
    sc.repetitions = 3;
    let r = run_experiment(&sc);
    assert_ne!(r.reps[0].trace, r.reps[1].trace);
    assert_eq!(r.reps[2].seed, RngStreams::derive_seed(sc.seed, 2));
}

proptest::proptest! {
    #![proptest_config(proptest::test_runner::Config::with_cases(48))]

    #[test]
    fn random_scenarios_are_stealthy_and_transparent(seed in proptest::num::u64::ANY) {
        let sc = random_scenario(seed);
        let r = run_repetition(&sc, 0);
        let o = run_repetition(&oracle_of(&sc), 0);
        proptest::prop_assert!(r.is_clean(), "{:?} {:?}", r.violations, r.faults);
        proptest::prop_assert_eq!(&r.attacker_stream, &o.attacker_stream);
        proptest::prop_assert_eq!(r.migration_index(), match sc.trigger {
            Trigger::NthPacket { n } => Some(n),
            _ => None,
        });
    }
}
