//! Acceptance suite. Runs each criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::HashMap;
use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use honeysplice::clonemgr::{select_strategy, CloneKind, CostTable, LatencyDist, Weights};
use honeysplice::controller::Phase;
use honeysplice::harness::{
    load_scenario, oracle_of, randomized_suite, run_experiment, run_repetition, ExperimentResult, Scenario,
    CONTROLLER_FILE, TRACE_FILE,
};
use honeysplice::ids::{parse_rule, AddrSpec, PortSpec, RuleEngine, Threshold};
use honeysplice::netcore::{HostAddr, MacAddr, Micros, Packet, SeqNum, TcpFlags, TcpSegment};

const SUITE_ROOT: u64 = 0x5eed_0004;
const SUITE_SIZE: u32 = 200;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    let path = scenario_dir().join(format!("{name}.toml"));
    load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn shipped() -> Vec<Scenario> {
    let mut paths: Vec<PathBuf> = fs::read_dir(scenario_dir())
        .expect("scenarios directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .filter(|p| fs::read_to_string(p).is_ok_and(|t| t.contains("total_packets")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load_scenario(p).expect("shipped scenario loads"))
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn all_clean(r: &ExperimentResult) -> Result<(), String> {
    let p = r.problems();
    ensure(p.is_empty(), || format!("{} problems, first: {}", p.len(), p[0]))
}

fn migrated_at(r: &ExperimentResult, n: u64) -> Result<(), String> {
    for rep in &r.reps {
        ensure(rep.migration_index() == Some(n), || {
            format!("rep {} migrated at {:?}, want {n}", rep.rep, rep.migration_index())
        })?;
    }
    Ok(())
}

fn timed(limit: Duration, f: impl FnOnce() -> ExperimentResult) -> Result<(ExperimentResult, Duration), String> {
    let t = Instant::now();
    let r = f();
    let el = t.elapsed();
    ensure(el < limit, || format!("took {el:.2?}, limit {limit:?}"))?;
    Ok((r, el))
}

fn c1_redirect() -> Outcome {
    let sc = load("e1_redirect");
    ensure(sc.repetitions == 100 && sc.total_packets == 120, || {
        "scenario shape changed".into()
    })?;
    let (r, el) = timed(Duration::from_secs(10), || run_experiment(&sc))?;
    all_clean(&r)?;
    migrated_at(&r, 100)?;
    let ratio = r.summary().ratio().ok_or("no ratio")?;
    ensure(ratio == 1.0, || format!("zero-jitter ratio {ratio}, want exactly 1.0"))?;

    let jit = load("e1_redirect_jitter");
    let rj = run_experiment(&jit);
    all_clean(&rj)?;
    migrated_at(&rj, 100)?;
    let rj_ratio = rj.summary().ratio().ok_or("no jitter ratio")?;
    ensure((0.95..=1.05).contains(&rj_ratio), || format!("jitter ratio {rj_ratio}"))?;
    Ok(format!("ratio {ratio:.4}, jittered {rj_ratio:.4}, {el:.2?}"))
}

fn c2_saturated() -> Outcome {
    let sc = load("e2_saturated");
    let bg = sc.background.ok_or("no background load")?;
    ensure(bg.n_hosts * bg.procs_per_host == 1400, || {
        "background is not 1400 flows".into()
    })?;
    let (r, el) = timed(Duration::from_secs(60), || run_experiment(&sc))?;
    ensure(r.reps.len() == 100, || format!("{} reps", r.reps.len()))?;
    let min_pi = r.reps.iter().map(|x| x.packet_ins).min().unwrap_or(0);
    ensure(min_pi >= 1400, || format!("only {min_pi} packet-ins in some rep"))?;
    all_clean(&r)?;
    migrated_at(&r, 100)?;
    let ratio = r.summary().ratio().ok_or("no ratio")?;
    ensure((0.95..=1.05).contains(&ratio), || format!("ratio {ratio}"))?;
    Ok(format!("min packet-ins {min_pi}, ratio {ratio:.4}, {el:.2?}"))
}

fn c3_copy_on_demand() -> Outcome {
    let sc = load("e3_copy_on_demand");
    let table = CostTable::load(&scenario_dir().join("cost_table.toml")).map_err(|e| e.to_string())?;
    let LatencyDist::Fixed { us: configured } = table.get(CloneKind::VictimImage).ok_or("no VICTIM_IMAGE")?.latency
    else {
        return Err("VICTIM_IMAGE latency is not fixed".into());
    };
    ensure(configured < sc.request_interval_us, || {
        "instantiation does not fit the gap".into()
    })?;
    let r = run_experiment(&sc);
    all_clean(&r)?;
    let oracle = run_experiment(&oracle_of(&sc));
    for (m, o) in r.reps.iter().zip(&oracle.reps) {
        let inst: Vec<_> = m.events.iter().filter(|e| e.event == "clone_instantiated").collect();
        ensure(inst.len() == 1, || {
            format!("rep {}: {} instantiation records", m.rep, inst.len())
        })?;
        let requested = m
            .events
            .iter()
            .find(|e| e.event == "clone_requested")
            .ok_or_else(|| format!("rep {}: no clone request", m.rep))?;
        let lat: Micros = inst[0]
            .field("latency_us")
            .and_then(|v| v.parse().ok())
            .ok_or("bad latency field")?;
        ensure(lat == configured && inst[0].time - requested.time == configured, || {
            format!("rep {}: latency {lat}, want {configured}", m.rep)
        })?;
        ensure(
            m.clone_tickets.len() == 1 && m.clone_tickets[0].latency_us == configured,
            || format!("rep {}: ticket mismatch", m.rep),
        )?;
        let base: HashMap<u64, Micros> = o
            .trace
            .records
            .iter()
            .filter_map(|p| Some((p.index, p.rtt_us()?)))
            .collect();
        for p in &m.trace.records {
            let rtt = p
                .rtt_us()
                .ok_or_else(|| format!("rep {}: packet {} unanswered", m.rep, p.index))?;
            let b = base[&p.index];
            ensure(rtt <= b, || {
                format!("rep {}: packet {} rtt {rtt} > baseline {b}", m.rep, p.index)
            })?;
        }
    }
    Ok(format!(
        "{} reps, one instantiation each at {configured} us, no rtt above baseline",
        r.reps.len()
    ))
}

fn c4_stealth() -> Outcome {
    let mut segments = 0;
    let mut names = Vec::new();
    for sc in shipped() {
        let r = run_experiment(&sc);
        ensure(r.reps.iter().all(|x| x.violations.is_empty()), || {
            format!("{}: {}", sc.name, r.problems().join("; "))
        })?;
        all_clean(&r).map_err(|e| format!("{}: {e}", sc.name))?;
        segments += r.reps.iter().map(|x| x.segments_checked).sum::<u64>();
        names.push(sc.name);
    }
    let suite = randomized_suite(SUITE_ROOT, SUITE_SIZE);
    for case in &suite {
        let m = &case.migrated;
        ensure(m.is_clean(), || {
            format!("{}: {:?} {:?}", case.scenario.name, m.violations, m.faults)
        })?;
        let total = case.scenario.total_packets as usize;
        ensure(
            m.attacker_requests.len() == total && m.trace.records.len() == total,
            || format!("{}: session cut short", case.scenario.name),
        )?;
        segments += m.segments_checked;
    }
    Ok(format!(
        "{} shipped scenarios + {} randomized, {segments} attacker segments, 0 violations",
        names.len(),
        suite.len()
    ))
}

fn c5_oracle() -> Outcome {
    let suite = randomized_suite(SUITE_ROOT, SUITE_SIZE);
    let mut migrated = 0;
    for case in &suite {
        ensure(case.scenario.replay, || format!("{}: replay off", case.scenario.name))?;
        ensure(case.oracle.final_phase() == Phase::Idle, || "oracle migrated".into())?;
        ensure(case.streams_match(), || {
            format!(
                "{}: stream differs ({} vs {} bytes)",
                case.scenario.name,
                case.migrated.attacker_stream.len(),
                case.oracle.attacker_stream.len()
            )
        })?;
        if matches!(case.migrated.final_phase(), Phase::Redirected | Phase::Restored) {
            migrated += 1;
        }
    }
    ensure(migrated == suite.len(), || {
        format!("only {migrated} of {} migrated", suite.len())
    })?;
    Ok(format!("{migrated} migrated runs byte-identical to their oracle"))
}

fn c6_restore() -> Outcome {
    let sc = load("e4_restore");
    let r = run_experiment(&sc);
    all_clean(&r)?;
    for rep in &r.reps {
        ensure(rep.final_phase() == Phase::Restored, || {
            format!("rep {} ended in {:?}", rep.rep, rep.final_phase())
        })?;
        ensure(rep.victim_log == rep.attacker_requests, || {
            format!(
                "rep {}: victim logged {} of {} requests or out of order",
                rep.rep,
                rep.victim_log.len(),
                rep.attacker_requests.len()
            )
        })?;
    }
    Ok(format!(
        "{} reps restored, victim log complete and ordered",
        r.reps.len()
    ))
}

const LISTING: &str = "alert tcp any -> 10.0.0.2
any (msg: \"MIGRATE\"; flags: P.A.;
threshold: type threshold, track
by_dst, count 5, seconds 120; sid1000001;)";

fn host(last: u8) -> HostAddr {
    HostAddr::new(Ipv4Addr::new(10, 0, 0, last), MacAddr::local(last as u32))
}

fn push_to(dst: u8) -> Packet {
    Packet::Tcp(TcpSegment {
        src: host(1),
        dst: host(dst),
        sport: 40000,
        dport: 80,
        seq: SeqNum(1),
        ack: SeqNum(1),
        flags: TcpFlags::PSH | TcpFlags::ACK,
        payload: b"x".to_vec(),
        ts_sent: 0,
    })
}

/// Brute force: an event alerts if the same destination has at least `count`
/// events, since its previous alert, younger than `span` at this instant.
fn brute_force(events: &[(Micros, u8)], count: usize, span: Micros) -> Vec<usize> {
    let mut fired: Vec<usize> = Vec::new();
    for (i, &(t, d)) in events.iter().enumerate() {
        let after = fired.iter().rev().find(|&&j| events[j].1 == d).map_or(0, |j| j + 1);
        let live = events[after..=i]
            .iter()
            .filter(|&&(u, e)| e == d && t - u < span)
            .count();
        if live >= count {
            fired.push(i);
        }
    }
    fired
}

fn c7_ids() -> Outcome {
    let rule = parse_rule(LISTING).map_err(|e| e.to_string())?;
    ensure(rule.msg == "MIGRATE", || format!("msg {:?}", rule.msg))?;
    ensure(rule.flags == TcpFlags::PSH | TcpFlags::ACK, || {
        format!("flags {:?}", rule.flags)
    })?;
    ensure(rule.threshold == Some(Threshold { count: 5, seconds: 120 }), || {
        format!("threshold {:?}", rule.threshold)
    })?;
    ensure(rule.sid == 1000001, || format!("sid {}", rule.sid))?;
    ensure(
        rule.src == AddrSpec::Any
            && rule.dst == AddrSpec::Ip(Ipv4Addr::new(10, 0, 0, 2))
            && rule.dst_port == PortSpec::Any,
        || format!("header {rule}"),
    )?;
    let shipped_rule = fs::read_to_string(scenario_dir().join("rules/migrate.rules")).map_err(|e| e.to_string())?;
    let shipped_rule = honeysplice::ids::parse_ruleset(&shipped_rule).map_err(|e| e.to_string())?;
    ensure(shipped_rule == vec![rule.clone()], || "shipped rule differs".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x7157);
    let mut alerts = 0;
    for _ in 0..1000 {
        let count = rng.random_range(1..=8u32);
        let seconds = rng.random_range(1..=6u32);
        let span = seconds as Micros * 1_000_000;
        let mut t = 0;
        let events: Vec<(Micros, u8)> = (0..rng.random_range(0..=80))
            .map(|_| {
                t += rng.random_range(0..=2 * span / count as Micros);
                (t, rng.random_range(2..=4u8))
            })
            .collect();
        let mut r = rule.clone();
        r.dst = AddrSpec::Any;
        r.threshold = Some(Threshold { count, seconds });
        let mut engine = RuleEngine::new(vec![r]);
        let got: Vec<usize> = events
            .iter()
            .enumerate()
            .filter(|(_, &(t, d))| !engine.observe(&push_to(d), t).is_empty())
            .map(|(i, _)| i)
            .collect();
        let want = brute_force(&events, count as usize, span);
        ensure(got == want, || {
            format!("count {count} seconds {seconds}: {got:?} vs {want:?}")
        })?;
        alerts += want.len();
    }
    Ok(format!(
        "listing parsed exactly; 1000 timelines agree ({alerts} alerts)"
    ))
}

fn c8_strategy() -> Outcome {
    let table = CostTable::load(&scenario_dir().join("cost_table.toml")).map_err(|e| e.to_string())?;
    ensure(table == CostTable::default(), || {
        "shipped cost table differs from the default".into()
    })?;
    ensure(table.strategies.len() == 4, || "table lacks a strategy".into())?;
    let argmin = |w: Weights| {
        let mut best: Option<(f64, CloneKind)> = None;
        for kind in CloneKind::ALL {
            let e = table.get(kind).expect("every kind present");
            let mean_ms = match e.latency {
                LatencyDist::Fixed { us } => us as f64 / 1000.0,
                LatencyDist::Uniform { lo, hi } => (lo + hi) as f64 / 2000.0,
                LatencyDist::Normal { mean, .. } => mean / 1000.0,
            };
            let score = w.w_latency * mean_ms + w.w_cost * e.steady_cost;
            if best.is_none_or(|(b, _)| score < b) {
                best = Some((score, kind));
            }
        }
        best.expect("non-empty").1
    };
    let default = Weights::default();
    ensure(default.w_latency == 1.0 && default.w_cost == 1.0, || {
        "default weights".into()
    })?;
    let cost_blind = Weights {
        w_latency: 1.0,
        w_cost: 0.0,
    };
    for (w, want) in [(default, CloneKind::VictimImage), (cost_blind, CloneKind::Suspended)] {
        let got = select_strategy(&table, w).map_err(|e| e.to_string())?;
        ensure(got == want && argmin(w) == want, || {
            format!("{w:?}: got {got}, want {want}")
        })?;
    }
    Ok("(1,1) -> VICTIM_IMAGE, (1,0) -> SUSPENDED".into())
}

fn csv_bytes(r: &ExperimentResult) -> Result<(Vec<u8>, Vec<u8>), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    r.write_outputs(dir.path()).map_err(|e| e.to_string())?;
    let read = |f: &str| fs::read(dir.path().join(f)).map_err(|e| e.to_string());
    Ok((read(TRACE_FILE)?, read(CONTROLLER_FILE)?))
}

fn c9_determinism() -> Outcome {
    let mut checked = 0;
    for mut sc in shipped() {
        sc.repetitions = sc.repetitions.min(10);
        let a = csv_bytes(&run_experiment(&sc))?;
        let b = csv_bytes(&run_experiment(&sc))?;
        ensure(a == b, || format!("{}: outputs differ between runs", sc.name))?;
        checked += 1;
    }
    let sc = load("e1_redirect_jitter");
    let other_seed = run_repetition(
        &Scenario {
            seed: sc.seed + 1,
            ..sc.clone()
        },
        0,
    );
    ensure(run_repetition(&sc, 0).trace != other_seed.trace, || {
        "seed has no effect".into()
    })?;
    Ok(format!("{checked} scenarios byte-identical across two runs"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("E1 redirect", c1_redirect),
        ("E2 saturated controller", c2_saturated),
        ("E3 copy on demand", c3_copy_on_demand),
        ("stealth invariants", c4_stealth),
        ("oracle equivalence", c5_oracle),
        ("restore", c6_restore),
        ("IDS conformance", c7_ids),
        ("strategy selection", c8_strategy),
        ("determinism", c9_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str()) || id == *p) {
            continue;
        }
        match f() {
            Ok(detail) => println!("{id} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
