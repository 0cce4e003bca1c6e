//! One repetition of a scenario: hosts, links, switch, IDS tap and
//! controller wired together on the event engine.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::clonemgr::{CloneManager, CloneTicket};
use crate::controller::{
    CloneSource, Controller, ControllerConfig, ControllerEvent, ControllerInput, ControllerOutput, HoneyAddressing,
    MigrationRecord, Phase,
};
use crate::endpoint::{ConnectionState, IssPolicy, ServerApp, TcpState};
use crate::harness::scenario::{CloneMode, IdsMode, RequestSize, Scenario, Trigger};
use crate::harness::stealth::{StealthMonitor, Violation, ViolationKind};
use crate::harness::trace::{LatencyTrace, PacketRecord};
use crate::ids::{Detector, NthPacketTrigger, RuleEngine};
use crate::netcore::{ConnKey, EchoPacket, HostAddr, MacAddr, Micros, Packet, PortId, SeqNum, TcpFlags, TcpSegment};
use crate::simnet::{spawn_background_load, stream, BackgroundFlow, EchoTarget, Engine, Link, RngStreams};
use crate::vswitch::{PacketInReason, Switch, SwitchEffect};

pub const ATTACKER_PORT: PortId = 1;
pub const VICTIM_PORT: PortId = 2;
pub const HONEY_PORT: PortId = 3;
pub const BACKGROUND_PORT_BASE: PortId = 4;
pub const SERVICE_PORT: u16 = 80;
pub const ATTACKER_SPORT: u16 = 40_000;
pub const APP_ID: &str = "web";

pub fn attacker_addr() -> HostAddr {
    HostAddr::new(Ipv4Addr::new(10, 0, 0, 1), MacAddr::local(1))
}

pub fn victim_addr() -> HostAddr {
    HostAddr::new(Ipv4Addr::new(10, 0, 0, 2), MacAddr::local(2))
}

/// Honey address when it does not share the victim's.
pub fn internal_honey_addr() -> HostAddr {
    HostAddr::new(Ipv4Addr::new(10, 0, 0, 3), MacAddr::local(3))
}

pub fn background_addr(h: usize) -> HostAddr {
    let [hi, lo] = (h as u16).to_be_bytes();
    HostAddr::new(Ipv4Addr::new(10, 1, hi, lo), MacAddr::local(0x1000 + h as u32))
}

/// What one repetition produced.
#[derive(Clone, Debug)]
pub struct RepOutcome {
    pub rep: u32,
    pub seed: u64,
    pub trace: LatencyTrace,
    pub events: Vec<ControllerEvent>,
    pub violations: Vec<Violation>,
    pub segments_checked: u64,
    /// Attacker requests the victim served while the connection was redirected.
    pub containment_breaches: usize,
    /// Switch command failures and controller errors.
    pub faults: Vec<String>,
    pub packet_ins: u64,
    pub clone_tickets: Vec<CloneTicket>,
    pub attacker_requests: Vec<Vec<u8>>,
    /// Everything the attacker's application received.
    pub attacker_stream: Vec<u8>,
    pub victim_log: Vec<Vec<u8>>,
    pub honey_log: Vec<Vec<u8>>,
    pub record: Option<MigrationRecord>,
    pub end_time: Micros,
}

impl RepOutcome {
    pub fn final_phase(&self) -> Phase {
        self.record.as_ref().map_or(Phase::Idle, |r| r.phase)
    }

    /// Packet index of the alert that started the migration.
    pub fn migration_index(&self) -> Option<u64> {
        let i = self
            .events
            .iter()
            .position(|e| e.event == "phase" && e.field("to") == Some("CLONING"))?;
        self.events[..i]
            .iter()
            .rev()
            .find(|e| e.event == "alert")
            .and_then(|e| e.field("packet_index"))
            .and_then(|v| v.parse().ok())
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.containment_breaches == 0 && self.faults.is_empty()
    }
}

struct ServerHost {
    addr: HostAddr,
    conn: Option<ConnectionState>,
    app: ServerApp,
    iss: IssPolicy,
    accept: bool,
    /// Stop accepting connections once the current one is reset.
    refuse_after_reset: bool,
    handled_at: Vec<Micros>,
}

fn reset_for(seg: &TcpSegment, local: HostAddr, now: Micros) -> TcpSegment {
    let (seq, ack, flags) = if seg.has(TcpFlags::ACK) {
        (seg.ack, SeqNum(0), TcpFlags::RST)
    } else {
        (SeqNum(0), seg.end_seq(), TcpFlags::RST | TcpFlags::ACK)
    };
    TcpSegment {
        src: local,
        dst: seg.src,
        sport: seg.dport,
        dport: seg.sport,
        seq,
        ack,
        flags,
        payload: Vec::new(),
        ts_sent: now,
    }
}

fn echo_reply(e: &EchoPacket, local: HostAddr, now: Micros) -> Option<Packet> {
    (!e.is_reply).then_some(Packet::Echo(EchoPacket {
        src: local,
        dst: e.src,
        ident: e.ident,
        seqno: e.seqno,
        is_reply: true,
        ts_sent: now,
    }))
}

impl ServerHost {
    fn new(addr: HostAddr, iss: IssPolicy) -> Self {
        ServerHost {
            addr,
            conn: None,
            app: ServerApp::new(APP_ID),
            iss,
            accept: true,
            refuse_after_reset: false,
            handled_at: Vec::new(),
        }
    }

    fn receive(&mut self, pkt: Packet, now: Micros) -> Vec<Packet> {
        let seg = match pkt {
            Packet::Echo(e) => return echo_reply(&e, self.addr, now).into_iter().collect(),
            Packet::Tcp(s) => s,
        };
        let live = self.conn.as_ref().is_some_and(|c| {
            !matches!(c.state, TcpState::Closed | TcpState::ClosedFinal)
                && c.remote.ip == seg.src.ip
                && c.remote_port == seg.sport
        });
        if seg.has(TcpFlags::SYN) && !seg.has(TcpFlags::ACK) {
            if live {
                return Vec::new();
            }
            if !self.accept || seg.dport != SERVICE_PORT {
                return vec![Packet::Tcp(reset_for(&seg, self.addr, now))];
            }
            let (c, synack) = ConnectionState::accept(self.addr, &seg, &mut self.iss, now);
            self.conn = Some(c);
            return vec![Packet::Tcp(synack)];
        }
        if !live {
            if seg.has(TcpFlags::RST) {
                return Vec::new();
            }
            return vec![Packet::Tcp(reset_for(&seg, self.addr, now))];
        }
        let c = self.conn.as_mut().expect("live connection");
        let out = c.on_segment(&seg, now);
        if c.state == TcpState::ClosedFinal && self.refuse_after_reset {
            self.accept = false;
        }
        if out.delivered.is_empty() {
            return out.emitted.into_iter().map(Packet::Tcp).collect();
        }
        // One request per segment; the response carries the ack.
        let resp = self.app.handle(&out.delivered);
        self.handled_at.push(now);
        match c.app_send(&resp, now) {
            Ok(s) => vec![Packet::Tcp(s)],
            Err(_) => out.emitted.into_iter().map(Packet::Tcp).collect(),
        }
    }
}

struct Attacker {
    conn: ConnectionState,
    iss: IssPolicy,
    requests: Vec<Vec<u8>>,
    send_times: Vec<Option<Micros>>,
    recv_times: Vec<Option<Micros>>,
    responses: usize,
    monitor: StealthMonitor,
    lost: bool,
}

impl Attacker {
    fn lose(&mut self, now: Micros) {
        if !self.lost {
            self.lost = true;
            self.monitor.report(now, ViolationKind::ConnectionLost);
        }
    }
}

fn make_requests(size: RequestSize, n: u64, rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    (0..n)
        .map(|_| {
            let len = match size {
                RequestSize::Fixed { bytes } => bytes,
                RequestSize::Uniform { min, max } => rng.random_range(min..=max),
            };
            (0..len).map(|_| rng.random_range(b'a'..=b'z')).collect()
        })
        .collect()
}

fn iss_policy(fixed: Option<u32>, streams: &RngStreams, id: u64) -> IssPolicy {
    match fixed {
        Some(v) => IssPolicy::Fixed(SeqNum(v)),
        None => IssPolicy::Random(streams.stream(id)),
    }
}

struct Params {
    ids_mode: IdsMode,
    control_delay: Micros,
    service: Micros,
    miss_hold: Micros,
    interval: Micros,
    restore_at: Option<u64>,
    background_until: Micros,
}

pub(crate) struct World {
    p: Params,
    switch: Switch,
    controller: Controller,
    detector: Option<Detector>,
    links: HashMap<PortId, (Link, Link)>,
    attacker: Attacker,
    victim: ServerHost,
    honey: Option<ServerHost>,
    honey_pending: Option<(HostAddr, IssPolicy)>,
    background: Vec<HostAddr>,
    flows: Vec<BackgroundFlow>,
    flow_seq: Vec<u32>,
    clones: CloneManager,
    tickets: Vec<CloneTicket>,
    ctrl_busy: Micros,
    attacker_data_seen: u64,
    restore_sent: bool,
    faults: Vec<String>,
}

type Eng = Engine<World>;

fn schedule_at<F>(e: &mut Eng, at: Micros, label: &'static str, f: F)
where
    F: FnOnce(&mut World, &mut Eng) + 'static,
{
    e.schedule(at, label, f)
        .expect("events are never scheduled in the past");
}

fn host_send(w: &mut World, e: &mut Eng, port: PortId, pkt: Packet) {
    let t = w
        .links
        .get_mut(&port)
        .expect("port has a link")
        .0
        .delivery_time(e.now());
    schedule_at(e, t, "ingress", move |w, e| switch_ingress(w, e, pkt, port));
}

fn deliver(w: &mut World, e: &mut Eng, port: PortId, pkt: Packet) {
    let Some((_, down)) = w.links.get_mut(&port) else {
        return;
    };
    let t = down.delivery_time(e.now());
    schedule_at(e, t, "deliver", move |w, e| host_receive(w, e, port, pkt));
}

fn is_attacker_data(pkt: &Packet) -> Option<ConnKey> {
    let seg = pkt.as_tcp()?;
    (seg.src.ip == attacker_addr().ip && seg.dport == SERVICE_PORT && !seg.payload.is_empty())
        .then(|| ConnKey::from_client_segment(seg))
}

fn switch_ingress(w: &mut World, e: &mut Eng, pkt: Packet, port: PortId) {
    let now = e.now();
    let serial = w.switch.next_serial();
    let wake = w.controller.observe_mirror(&pkt, port, serial);
    let alerts = w.detector.as_mut().map(|d| d.observe(&pkt, now)).unwrap_or_default();
    if port == ATTACKER_PORT {
        if let Some(conn) = is_attacker_data(&pkt) {
            w.attacker_data_seen += 1;
            if w.p.restore_at == Some(w.attacker_data_seen) && !w.restore_sent {
                w.restore_sent = true;
                to_controller(w, e, ControllerInput::Restore(conn), w.p.control_delay);
            }
        }
    }
    for a in alerts {
        match w.p.ids_mode {
            IdsMode::Passive => to_controller(w, e, ControllerInput::Alert(a), w.p.control_delay),
            IdsMode::Inline => run_controller(w, e, ControllerInput::Alert(a), true),
        }
    }
    if let Some(conn) = wake {
        to_controller(w, e, ControllerInput::Wake(conn), w.p.control_delay);
    }
    let ingress = w.switch.ingress(pkt, port);
    effects(w, e, ingress.effects);
}

fn effects(w: &mut World, e: &mut Eng, effects: Vec<SwitchEffect>) {
    for eff in effects {
        match eff {
            SwitchEffect::Output { port, packet } => deliver(w, e, port, packet),
            SwitchEffect::PacketIn {
                packet,
                in_port,
                reason,
                buffer_id,
            } => {
                if let (PacketInReason::NoMatch, Some(id)) = (reason, buffer_id) {
                    schedule_at(e, e.now() + w.p.miss_hold, "expire_held", move |w, _| {
                        w.switch.expire_held(id);
                    });
                }
                let input = ControllerInput::PacketIn {
                    packet,
                    in_port,
                    reason,
                    buffer_id,
                };
                to_controller(w, e, input, w.p.control_delay);
            }
            SwitchEffect::Buffered { .. } | SwitchEffect::Dropped => {}
        }
    }
}

/// Queue an input at the controller. Inputs are served one at a time in
/// arrival order.
fn to_controller(w: &mut World, e: &mut Eng, input: ControllerInput, delay: Micros) {
    let start = (e.now() + delay).max(w.ctrl_busy);
    let done = start + w.p.service;
    w.ctrl_busy = done;
    schedule_at(e, done, "controller", move |w, e| run_controller(w, e, input, false));
}

fn run_controller(w: &mut World, e: &mut Eng, input: ControllerInput, sync: bool) {
    match w.controller.handle(input, e.now()) {
        Ok(outs) => dispatch(w, e, outs, sync),
        Err(err) => w.faults.push(format!("t={} controller: {err}", e.now())),
    }
}

fn dispatch(w: &mut World, e: &mut Eng, outs: Vec<ControllerOutput>, sync: bool) {
    let now = e.now();
    for o in outs {
        match o {
            ControllerOutput::Switch { commands, barrier } if sync => apply_commands(w, e, commands, barrier, true),
            ControllerOutput::Switch { commands, barrier } => {
                schedule_at(e, now + w.p.control_delay, "switch_commands", move |w, e| {
                    apply_commands(w, e, commands, barrier, false)
                });
            }
            ControllerOutput::RequestClone { conn, spec, kind } => match w.clones.request_clone(&spec, kind) {
                Ok(ticket) => {
                    w.tickets.push(ticket.clone());
                    let ready_at = now + ticket.latency_us;
                    schedule_at(e, ready_at, "clone_ready", move |w, e| {
                        if let Some((addr, iss)) = w.honey_pending.take() {
                            w.honey = Some(ServerHost::new(addr, iss));
                        }
                        let input = ControllerInput::CloneReady {
                            conn,
                            ticket,
                            requested_at: now,
                            ready_at,
                        };
                        to_controller(w, e, input, 0);
                    });
                }
                Err(_) => to_controller(w, e, ControllerInput::CloneFailed { conn }, 0),
            },
            ControllerOutput::Timer { at, conn } => {
                schedule_at(e, at, "fallback_timer", move |w, e| {
                    to_controller(w, e, ControllerInput::FallbackTimer(conn), 0)
                });
            }
        }
    }
}

fn apply_commands(
    w: &mut World,
    e: &mut Eng,
    commands: Vec<crate::vswitch::SwitchCommand>,
    barrier: Option<crate::controller::BarrierToken>,
    sync: bool,
) {
    for c in commands {
        match w.switch.apply(c) {
            Ok(eff) => effects(w, e, eff),
            Err(err) => w.faults.push(format!("t={} switch: {err}", e.now())),
        }
    }
    if let Some(token) = barrier {
        let input = ControllerInput::Barrier {
            token,
            serial: w.switch.next_serial(),
        };
        if sync {
            run_controller(w, e, input, true);
        } else {
            to_controller(w, e, input, w.p.control_delay);
        }
    }
}

fn host_receive(w: &mut World, e: &mut Eng, port: PortId, pkt: Packet) {
    let now = e.now();
    let out = match port {
        ATTACKER_PORT => attacker_receive(w, e, pkt),
        VICTIM_PORT => w.victim.receive(pkt, now),
        HONEY_PORT => match w.honey.as_mut() {
            Some(h) => h.receive(pkt, now),
            None => Vec::new(),
        },
        p => {
            let local = w.background[(p - BACKGROUND_PORT_BASE) as usize];
            match pkt {
                Packet::Echo(ref echo) => echo_reply(echo, local, now).into_iter().collect(),
                Packet::Tcp(_) => Vec::new(),
            }
        }
    };
    for p in out {
        host_send(w, e, port, p);
    }
}

fn attacker_receive(w: &mut World, e: &mut Eng, pkt: Packet) -> Vec<Packet> {
    let now = e.now();
    let Packet::Tcp(seg) = pkt else {
        return Vec::new();
    };
    let a = &mut w.attacker;
    a.monitor.check(&seg, &a.conn, now);
    let was = a.conn.state;
    let out = a.conn.on_segment(&seg, now);
    if a.conn.state == TcpState::ClosedFinal {
        a.lose(now);
    }
    if !out.delivered.is_empty() {
        if let Some(slot) = a.recv_times.get_mut(a.responses) {
            *slot = Some(now);
        }
        a.responses += 1;
    }
    if was == TcpState::SynSent && a.conn.is_established() {
        schedule_at(e, now, "attacker_request", |w, e| attacker_request(w, e, 0));
    }
    out.emitted.into_iter().map(Packet::Tcp).collect()
}

fn attacker_request(w: &mut World, e: &mut Eng, i: usize) {
    let now = e.now();
    let a = &mut w.attacker;
    match a.conn.app_send(&a.requests[i], now) {
        Ok(seg) => {
            a.send_times[i] = Some(now);
            host_send(w, e, ATTACKER_PORT, Packet::Tcp(seg));
        }
        Err(_) => a.lose(now),
    }
    if i + 1 < w.attacker.requests.len() {
        schedule_at(e, now + w.p.interval, "attacker_request", move |w, e| {
            attacker_request(w, e, i + 1)
        });
    }
}

fn background_send(w: &mut World, e: &mut Eng, f: usize) {
    let now = e.now();
    if now >= w.p.background_until {
        return;
    }
    let flow = &w.flows[f];
    let src = w.background[flow.src_host];
    let dst = match flow.target {
        EchoTarget::Peer(h) => w.background[h],
        EchoTarget::Server => victim_addr(),
    };
    let pkt = Packet::Echo(EchoPacket {
        src,
        dst,
        ident: flow.ident,
        seqno: w.flow_seq[f],
        is_reply: false,
        ts_sent: now,
    });
    w.flow_seq[f] += 1;
    let (port, interval) = (BACKGROUND_PORT_BASE + flow.src_host as PortId, flow.interval);
    host_send(w, e, port, pkt);
    schedule_at(e, now + interval, "background", move |w, e| background_send(w, e, f));
}

fn attacker_open(w: &mut World, e: &mut Eng) {
    let now = e.now();
    let a = &mut w.attacker;
    let syn = a.conn.open(&mut a.iss, now).expect("attacker opens once");
    host_send(w, e, ATTACKER_PORT, Packet::Tcp(syn));
}

/// Controller configuration for a scenario.
pub fn controller_config(sc: &Scenario) -> ControllerConfig {
    let mut hosts = HashMap::new();
    hosts.insert(attacker_addr().ip, ATTACKER_PORT);
    hosts.insert(victim_addr().ip, VICTIM_PORT);
    if let Some(bg) = &sc.background {
        for h in 0..bg.n_hosts as usize {
            hosts.insert(background_addr(h).ip, BACKGROUND_PORT_BASE + h as PortId);
        }
    }
    ControllerConfig {
        hosts,
        victim: victim_addr(),
        service_port: SERVICE_PORT,
        victim_port: VICTIM_PORT,
        honey: match sc.honey_addressing {
            HoneyAddressing::Mirror => victim_addr(),
            HoneyAddressing::Internal => internal_honey_addr(),
        },
        honey_port: HONEY_PORT,
        addressing: sc.honey_addressing,
        replay: sc.replay,
        clone: match (sc.clone.mode, sc.resolved.strategy) {
            (CloneMode::OnDemand, Some(k)) => CloneSource::OnDemand(k),
            _ => CloneSource::Prestaged,
        },
        fallback: sc.clone.fallback,
        miss_hold_us: sc.topology.miss_hold_us,
        app_id: APP_ID.into(),
    }
}

/// Knobs that scenarios do not expose, used by tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    /// Once reset, the victim refuses new connections.
    pub victim_refuses_after_cut: bool,
}

/// Run one repetition with root seed `seed`.
pub fn simulate(sc: &Scenario, rep: u32, seed: u64) -> RepOutcome {
    simulate_with(sc, rep, seed, Overrides::default())
}

pub fn simulate_with(sc: &Scenario, rep: u32, seed: u64, ov: Overrides) -> RepOutcome {
    let streams = RngStreams::new(seed);
    let cfg = controller_config(sc);
    let honey_addr = cfg.honey;
    let total = sc.total_packets as usize;

    let mut links = HashMap::new();
    let mut add_link = |port: PortId| {
        let id = stream::LINK_BASE + 2 * port as u64;
        let up = Link::new(sc.topology.link, streams.stream(id));
        let down = Link::new(sc.topology.link, streams.stream(id + 1));
        links.insert(port, (up, down));
    };
    for port in [ATTACKER_PORT, VICTIM_PORT, HONEY_PORT] {
        add_link(port);
    }
    let (background, flows) = match &sc.background {
        Some(spec) => {
            for h in 0..spec.n_hosts as usize {
                add_link(BACKGROUND_PORT_BASE + h as PortId);
            }
            let hosts = (0..spec.n_hosts as usize).map(background_addr).collect();
            (hosts, spawn_background_load(spec, &streams))
        }
        None => (Vec::new(), Vec::new()),
    };

    let detector = match sc.trigger {
        Trigger::NthPacket { n } => Some(Detector::NthPacket(NthPacketTrigger::new(
            n,
            victim_addr().ip,
            SERVICE_PORT,
        ))),
        Trigger::Threshold => Some(Detector::Rules(RuleEngine::new(sc.resolved.rules.clone()))),
        Trigger::None => None,
    };

    let mut payload_rng = streams.stream(stream::ATTACKER_PAYLOAD);
    let requests = make_requests(sc.request_size, sc.total_packets, &mut payload_rng);
    let honey_iss = iss_policy(sc.iss.honey, &streams, stream::HONEY);
    let (honey, honey_pending) = match cfg.clone {
        CloneSource::Prestaged => (Some(ServerHost::new(honey_addr, honey_iss)), None),
        CloneSource::OnDemand(_) => (None, Some((honey_addr, honey_iss))),
    };
    let mut victim = ServerHost::new(victim_addr(), iss_policy(sc.iss.victim, &streams, stream::VICTIM));
    victim.refuse_after_reset = ov.victim_refuses_after_cut;

    let last_request = sc.attacker_start_us + sc.request_interval_us * sc.total_packets;
    let mut w = World {
        p: Params {
            ids_mode: sc.ids_mode,
            control_delay: sc.topology.control_delay_us,
            service: sc.topology.controller_service_us,
            miss_hold: sc.topology.miss_hold_us,
            interval: sc.request_interval_us,
            restore_at: sc.restore_at,
            background_until: last_request + 100_000,
        },
        switch: Switch::new(),
        controller: Controller::new(cfg),
        detector,
        links,
        attacker: Attacker {
            conn: ConnectionState::new(attacker_addr(), ATTACKER_SPORT, victim_addr(), SERVICE_PORT),
            iss: iss_policy(sc.iss.attacker, &streams, stream::ATTACKER),
            requests,
            send_times: vec![None; total],
            recv_times: vec![None; total],
            responses: 0,
            monitor: StealthMonitor::new(victim_addr(), SERVICE_PORT),
            lost: false,
        },
        victim,
        honey,
        honey_pending,
        flow_seq: vec![0; flows.len()],
        background,
        flows,
        clones: CloneManager::new(
            sc.resolved.cost_table.clone(),
            sc.clone.failure_probability,
            streams.stream(stream::CLONE_MANAGER),
        ),
        tickets: Vec::new(),
        ctrl_busy: 0,
        attacker_data_seen: 0,
        restore_sent: false,
        faults: Vec::new(),
    };

    let mut e: Eng = Engine::new();
    schedule_at(&mut e, sc.attacker_start_us, "attacker_open", attacker_open);
    for f in 0..w.flows.len() {
        let at = w.flows[f].first_send;
        schedule_at(&mut e, at, "background", move |w, e| background_send(w, e, f));
    }
    e.run_until(&mut w, Micros::MAX);
    let end_time = e.now();
    finish(w, rep, seed, end_time)
}

fn finish(w: World, rep: u32, seed: u64, end_time: Micros) -> RepOutcome {
    let key = ConnKey {
        client_ip: attacker_addr().ip,
        client_port: ATTACKER_SPORT,
        server_ip: victim_addr().ip,
        server_port: SERVICE_PORT,
    };
    let record = w.controller.record(&key).cloned();
    let containment_breaches = match &record {
        Some(r) => match r.entered(Phase::Redirected) {
            Some(from) => {
                let until = r.restore_started_at.unwrap_or(Micros::MAX);
                w.victim.handled_at.iter().filter(|&&t| t > from && t < until).count()
            }
            None => 0,
        },
        None => 0,
    };
    let a = w.attacker;
    let records = (0..a.requests.len())
        .filter_map(|i| {
            a.send_times[i].map(|send_us| PacketRecord {
                index: i as u64 + 1,
                send_us,
                recv_us: a.recv_times[i],
            })
        })
        .collect();
    RepOutcome {
        rep,
        seed,
        trace: LatencyTrace { rep, records },
        packet_ins: w.controller.packet_ins(),
        events: w.controller.into_log().into_events(),
        segments_checked: a.monitor.checked(),
        violations: a.monitor.into_violations(),
        containment_breaches,
        faults: w.faults,
        clone_tickets: w.tickets,
        attacker_requests: a.requests,
        attacker_stream: a.conn.rcvd_stream,
        victim_log: w.victim.app.request_log().to_vec(),
        honey_log: w.honey.map(|h| h.app.request_log().to_vec()).unwrap_or_default(),
        record,
        end_time,
    }
}
