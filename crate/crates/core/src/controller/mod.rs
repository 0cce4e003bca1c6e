//! Intrusion response: reactive forwarding for ordinary traffic and the
//! migration state machine that moves a flagged connection onto a honey
//! server and, on request, back again.
//!
//! A migration hides the switch of server behind a TCP splice. The
//! controller opens its own connection to the new server while posing as the
//! client, replays whatever the client already sent, then installs rewrite
//! rules that shift seq/ack numbers by the difference between the two server
//! streams.

mod ledger;
mod log;
mod record;

use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clonemgr::{CloneKind, CloneTicket, VictimSpec};
use crate::endpoint::{ConnectionState, IssPolicy, TcpState};
use crate::ids::Alert;
use crate::netcore::{seq_le, ConnKey, HostAddr, Micros, Packet, PortId, Proto, SeqNum, TcpFlags, TcpSegment};
use crate::vswitch::{
    BufferId, Cookie, FlowAction, FlowMatch, FlowRule, PacketInReason, QueueId, Rewrite, SwitchCommand,
};

pub use ledger::{ConnLedger, TrackedConn};
pub use log::{ControllerEvent, EventLog};
pub use record::{splice_deltas, MigrationRecord, Phase};

pub const PRIO_REACTIVE: u16 = 10;
pub const PRIO_BUFFER: u16 = 100;
pub const PRIO_SPLICE: u16 = 150;
pub const PRIO_CAPTURE: u16 = 200;
pub const PRIO_HOLD: u16 = 250;

/// How the honey server is addressed on the data plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoneyAddressing {
    /// Same IP and MAC as the victim, told apart only by switch port.
    #[default]
    Mirror,
    /// Own address; the switch rewrites it to the victim's on the way out.
    Internal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloneSource {
    /// Honey server already running before any alert.
    Prestaged,
    OnDemand(CloneKind),
}

/// What to do with a flagged connection when no clone can be made.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Hand the connection back to the original server.
    #[default]
    FailOpen,
    /// Drop the client's traffic.
    FailClosed,
}

#[derive(Clone, Debug)]
pub struct ControllerConfig {
    /// Reactive forwarding table.
    pub hosts: HashMap<Ipv4Addr, PortId>,
    pub victim: HostAddr,
    pub service_port: u16,
    pub victim_port: PortId,
    pub honey: HostAddr,
    pub honey_port: PortId,
    pub addressing: HoneyAddressing,
    pub replay: bool,
    pub clone: CloneSource,
    pub fallback: Fallback,
    pub miss_hold_us: Micros,
    pub app_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BarrierToken(pub u64);

#[derive(Clone, Debug)]
pub enum ControllerInput {
    PacketIn {
        packet: Packet,
        in_port: PortId,
        reason: PacketInReason,
        buffer_id: Option<BufferId>,
    },
    Alert(Alert),
    /// The switch finished a batch; `serial` is its next ingress serial.
    Barrier {
        token: BarrierToken,
        serial: u64,
    },
    CloneReady {
        conn: ConnKey,
        ticket: CloneTicket,
        requested_at: Micros,
        ready_at: Micros,
    },
    CloneFailed {
        conn: ConnKey,
    },
    Restore(ConnKey),
    /// Mirrored traffic moved a pending condition for this connection.
    Wake(ConnKey),
    FallbackTimer(ConnKey),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControllerOutput {
    /// Commands applied in order in one switch dispatch. With a barrier, the
    /// switch reports back once they are all in.
    Switch {
        commands: Vec<SwitchCommand>,
        barrier: Option<BarrierToken>,
    },
    RequestClone {
        conn: ConnKey,
        spec: VictimSpec,
        kind: CloneKind,
    },
    Timer {
        at: Micros,
        conn: ConnKey,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("alert for unknown connection {0}")]
    AlertForUnknownConnection(ConnKey),
    #[error("connection {0} is not established")]
    NotEstablished(ConnKey),
    #[error("`{op}` not allowed for {conn} in phase {phase}")]
    InvalidPhase {
        conn: ConnKey,
        op: &'static str,
        phase: Phase,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum JobKind {
    Honey,
    Restore,
    FailOpen,
}

/// A forged connection being brought up to take over a client.
struct Job {
    kind: JobKind,
    port: PortId,
    addr: HostAddr,
    forge: ConnectionState,
    replay: Vec<Vec<u8>>,
    replay_sent: bool,
    /// The outgoing server must have acknowledged this much client data.
    cut: SeqNum,
    capture: Cookie,
    queue: QueueId,
    buffer_rule: Cookie,
}

#[derive(Clone, Copy)]
enum Awaiting {
    Cut,
    RestoreCut { queue: QueueId, buffer_rule: Cookie },
}

struct Migration {
    record: MigrationRecord,
    queue: QueueId,
    buffer_rule: Cookie,
    awaiting: Option<Awaiting>,
    job: Option<Job>,
    splice_rules: Vec<Cookie>,
    pending_restore: bool,
    fallback_waiting: bool,
    clone_requested_at: Option<Micros>,
}

pub struct Controller {
    cfg: ControllerConfig,
    ledger: ConnLedger,
    migrations: HashMap<ConnKey, Migration>,
    flows: HashMap<FlowMatch, Cookie>,
    tokens: HashMap<BarrierToken, ConnKey>,
    next_cookie: u64,
    next_queue: u32,
    next_token: u64,
    log: EventLog,
    packet_ins: u64,
}

fn tcp_match(in_port: PortId, src: Ipv4Addr, sport: u16, dst: Ipv4Addr, dport: u16) -> FlowMatch {
    FlowMatch {
        in_port: Some(in_port),
        proto: Some(Proto::Tcp),
        src_ip: Some(src),
        dst_ip: Some(dst),
        src_port: Some(sport),
        dst_port: Some(dport),
        flags: None,
    }
}

fn reverse_of(m: &FlowMatch, in_port: PortId) -> FlowMatch {
    FlowMatch {
        in_port: Some(in_port),
        proto: m.proto,
        src_ip: m.dst_ip,
        dst_ip: m.src_ip,
        src_port: m.dst_port,
        dst_port: m.src_port,
        flags: None,
    }
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Self {
        let mut ledger = ConnLedger::new(cfg.victim, cfg.service_port);
        if cfg.honey.ip != cfg.victim.ip {
            ledger.add_alias(cfg.honey.ip);
        }
        Controller {
            cfg,
            ledger,
            migrations: HashMap::new(),
            flows: HashMap::new(),
            tokens: HashMap::new(),
            next_cookie: 1,
            next_queue: 1,
            next_token: 1,
            log: EventLog::default(),
            packet_ins: 0,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &ConnLedger {
        &self.ledger
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn packet_ins(&self) -> u64 {
        self.packet_ins
    }

    pub fn record(&self, conn: &ConnKey) -> Option<&MigrationRecord> {
        self.migrations.get(conn).map(|m| &m.record)
    }

    pub fn records(&self) -> impl Iterator<Item = &MigrationRecord> {
        self.migrations.values().map(|m| &m.record)
    }

    pub fn phase(&self, conn: &ConnKey) -> Phase {
        self.record(conn).map_or(Phase::Idle, |r| r.phase)
    }

    /// Feed a packet copied off the switch's mirror port. Returns the
    /// connection if the controller should be woken to re-check it.
    pub fn observe_mirror(&mut self, pkt: &Packet, in_port: PortId, serial: u64) -> Option<ConnKey> {
        let conn = self.ledger.observe(pkt, in_port, serial)?;
        let m = self.migrations.get(&conn)?;
        let from_active = self
            .ledger
            .get(&conn)
            .is_some_and(|t| t.active_port == in_port && pkt.dst().ip == conn.client_ip);
        let waiting = m.fallback_waiting || m.job.as_ref().is_some_and(|j| j.replay_sent);
        (from_active && waiting).then_some(conn)
    }

    pub fn handle(&mut self, input: ControllerInput, now: Micros) -> Result<Vec<ControllerOutput>, ControllerError> {
        match input {
            ControllerInput::PacketIn {
                packet,
                in_port,
                reason,
                buffer_id,
            } => Ok(self.on_packet_in(packet, in_port, reason, buffer_id, now)),
            ControllerInput::Alert(a) => self.on_alert(&a, now),
            ControllerInput::Barrier { token, serial } => Ok(self.on_barrier(token, serial, now)),
            ControllerInput::CloneReady {
                conn,
                ticket,
                requested_at,
                ready_at,
            } => Ok(self.on_clone_ready(conn, &ticket, requested_at, ready_at, now)),
            ControllerInput::CloneFailed { conn } => Ok(self.on_clone_failed(conn, now)),
            ControllerInput::Restore(conn) => self.restore_original(conn, now),
            ControllerInput::Wake(conn) => Ok(self.on_wake(conn, now)),
            ControllerInput::FallbackTimer(conn) => Ok(self.on_fallback(conn, now)),
        }
    }

    fn cookie(&mut self) -> Cookie {
        let c = Cookie(self.next_cookie);
        self.next_cookie += 1;
        c
    }

    fn queue(&mut self) -> QueueId {
        let q = QueueId(self.next_queue);
        self.next_queue += 1;
        q
    }

    fn token(&mut self, conn: ConnKey) -> BarrierToken {
        let t = BarrierToken(self.next_token);
        self.next_token += 1;
        self.tokens.insert(t, conn);
        t
    }

    fn client_port(&self, conn: &ConnKey) -> PortId {
        self.cfg.hosts.get(&conn.client_ip).copied().unwrap_or(0)
    }

    fn client_match(&self, conn: &ConnKey) -> FlowMatch {
        tcp_match(
            self.client_port(conn),
            conn.client_ip,
            conn.client_port,
            conn.server_ip,
            conn.server_port,
        )
    }

    fn client_addr(&self, conn: &ConnKey) -> HostAddr {
        self.ledger.get(conn).expect("migrating connection is tracked").client
    }

    fn set_phase(&mut self, conn: ConnKey, to: Phase, now: Micros) {
        let m = self.migrations.get_mut(&conn).expect("migration exists");
        let from = m.record.phase;
        if m.record.advance(to, now) {
            self.log.push(now, "phase", Some(conn), format!("from={from} to={to}"));
        }
    }

    fn on_packet_in(
        &mut self,
        packet: Packet,
        in_port: PortId,
        reason: PacketInReason,
        buffer_id: Option<BufferId>,
        now: Micros,
    ) -> Vec<ControllerOutput> {
        self.packet_ins += 1;
        if reason == PacketInReason::Action {
            return match packet {
                Packet::Tcp(seg) => self.on_captured(seg, in_port, now),
                Packet::Echo(_) => Vec::new(),
            };
        }
        let Some(&out_port) = self.cfg.hosts.get(&packet.dst().ip) else {
            self.log
                .push(now, "packet_in", None, format!("in_port={in_port} route=none"));
            return Vec::new();
        };
        let fwd = FlowMatch::exact(in_port, &packet);
        let rev = reverse_of(&fwd, out_port);
        let mut commands = Vec::new();
        for (m, port) in [(fwd, out_port), (rev, in_port)] {
            if self.flows.contains_key(&m) {
                continue;
            }
            let cookie = self.cookie();
            self.flows.insert(m.clone(), cookie);
            commands.push(SwitchCommand::Install(FlowRule {
                priority: PRIO_REACTIVE,
                matcher: m,
                actions: vec![FlowAction::Output(port)],
                cookie,
            }));
        }
        self.log.push(
            now,
            "packet_in",
            None,
            format!("in_port={in_port} out_port={out_port} installed={}", commands.len()),
        );
        if let Some(id) = buffer_id {
            commands.push(SwitchCommand::ReleaseHeld(id));
        }
        vec![ControllerOutput::Switch {
            commands,
            barrier: None,
        }]
    }

    /// Step 3: stop the client's traffic at the switch, then (once the
    /// barrier confirms it) cut the victim off and ask for a clone.
    pub fn on_alert(&mut self, alert: &Alert, now: Micros) -> Result<Vec<ControllerOutput>, ControllerError> {
        let conn = alert.conn;
        self.log.push(
            now,
            "alert",
            Some(conn),
            format!("packet_index={} sid={}", alert.ordinal, alert.sid),
        );
        let Some(tracked) = self.ledger.get(&conn) else {
            self.log
                .push(now, "alert_rejected", Some(conn), "reason=unknown_connection".into());
            return Err(ControllerError::AlertForUnknownConnection(conn));
        };
        if let Some(m) = self.migrations.get(&conn) {
            if m.record.phase != Phase::Idle {
                self.log
                    .push(now, "alert_ignored", Some(conn), format!("phase={}", m.record.phase));
                return Ok(Vec::new());
            }
        }
        if !tracked.established() {
            self.log
                .push(now, "alert_rejected", Some(conn), "reason=not_established".into());
            return Err(ControllerError::NotEstablished(conn));
        }
        let queue = self.queue();
        let buffer_rule = self.cookie();
        let mut record = MigrationRecord::new(conn, self.cfg.victim, self.cfg.honey, now);
        record.advance(Phase::Cloning, now);
        self.log.push(now, "phase", Some(conn), "from=IDLE to=CLONING".into());
        self.migrations.insert(
            conn,
            Migration {
                record,
                queue,
                buffer_rule,
                awaiting: Some(Awaiting::Cut),
                job: None,
                splice_rules: Vec::new(),
                pending_restore: false,
                fallback_waiting: false,
                clone_requested_at: None,
            },
        );
        let rule = FlowRule {
            priority: PRIO_BUFFER,
            matcher: self.client_match(&conn),
            actions: vec![FlowAction::Buffer(queue)],
            cookie: buffer_rule,
        };
        let token = self.token(conn);
        Ok(vec![ControllerOutput::Switch {
            commands: vec![SwitchCommand::Install(rule)],
            barrier: Some(token),
        }])
    }

    fn on_barrier(&mut self, token: BarrierToken, serial: u64, now: Micros) -> Vec<ControllerOutput> {
        let Some(conn) = self.tokens.remove(&token) else {
            return Vec::new();
        };
        let Some(awaiting) = self.migrations.get_mut(&conn).and_then(|m| m.awaiting.take()) else {
            return Vec::new();
        };
        let tracked = self.ledger.get(&conn).expect("migrating connection is tracked");
        let cut = tracked.forwarded_end(serial);
        match awaiting {
            Awaiting::Cut => {
                let consumed = tracked.payloads_between(tracked.base(), cut);
                let client = tracked.client;
                let m = self.migrations.get_mut(&conn).expect("migration exists");
                m.record.victim_cut = Some(cut);
                if self.cfg.replay {
                    m.record.replay_buffer = consumed.into_iter().map(|(_, p)| p).collect();
                }
                let rst = TcpSegment {
                    src: client,
                    dst: self.cfg.victim,
                    sport: conn.client_port,
                    dport: conn.server_port,
                    seq: cut,
                    ack: SeqNum(0),
                    flags: TcpFlags::RST,
                    payload: Vec::new(),
                    ts_sent: now,
                };
                self.log.push(now, "victim_reset", Some(conn), format!("seq={cut}"));
                let mut out = vec![ControllerOutput::Switch {
                    commands: vec![SwitchCommand::PacketOut {
                        port: self.cfg.victim_port,
                        packet: Packet::Tcp(rst),
                    }],
                    barrier: None,
                }];
                match self.cfg.clone {
                    CloneSource::Prestaged => {
                        self.log.push(now, "clone_prestaged", Some(conn), String::new());
                        out.extend(self.start_honey(conn, now));
                    }
                    CloneSource::OnDemand(kind) => {
                        self.migrations
                            .get_mut(&conn)
                            .expect("migration exists")
                            .clone_requested_at = Some(now);
                        self.log
                            .push(now, "clone_requested", Some(conn), format!("strategy={kind}"));
                        out.push(ControllerOutput::RequestClone {
                            conn,
                            spec: VictimSpec {
                                addr: self.cfg.honey,
                                app_id: self.cfg.app_id.clone(),
                                ports: vec![self.cfg.service_port],
                                image_version: "current".into(),
                            },
                            kind,
                        });
                    }
                }
                out
            }
            Awaiting::RestoreCut { queue, buffer_rule } => {
                let m = self.migrations.get(&conn).expect("migration exists");
                let from = m.record.victim_cut.expect("cut set before redirect");
                let suffix = tracked.payloads_between(from, cut);
                self.log.push(
                    now,
                    "restore_started",
                    Some(conn),
                    format!("replay={} cut={cut}", suffix.len()),
                );
                let (port, addr) = (self.cfg.victim_port, self.cfg.victim);
                let replay = suffix.into_iter().map(|(_, p)| p).collect();
                self.start_job(
                    conn,
                    JobKind::Restore,
                    port,
                    addr,
                    from,
                    replay,
                    cut,
                    queue,
                    buffer_rule,
                    now,
                )
            }
        }
    }

    fn start_honey(&mut self, conn: ConnKey, now: Micros) -> Vec<ControllerOutput> {
        self.set_phase(conn, Phase::Splicing, now);
        let m = self.migrations.get(&conn).expect("migration exists");
        let cut = m.record.victim_cut.expect("cut set before cloning completes");
        let replay = m.record.replay_buffer.clone();
        let first = if replay.is_empty() {
            cut
        } else {
            self.ledger.get(&conn).expect("tracked").base()
        };
        let (queue, buffer_rule) = (m.queue, m.buffer_rule);
        let (port, addr) = (self.cfg.honey_port, self.cfg.honey);
        self.start_job(
            conn,
            JobKind::Honey,
            port,
            addr,
            first,
            replay,
            cut,
            queue,
            buffer_rule,
            now,
        )
    }

    /// Open the forged connection. Its SYN sits one before `first`, the seq
    /// of the first replayed byte, so no client seq ever needs rewriting.
    #[allow(clippy::too_many_arguments)]
    fn start_job(
        &mut self,
        conn: ConnKey,
        kind: JobKind,
        port: PortId,
        addr: HostAddr,
        first: SeqNum,
        replay: Vec<Vec<u8>>,
        cut: SeqNum,
        queue: QueueId,
        buffer_rule: Cookie,
        now: Micros,
    ) -> Vec<ControllerOutput> {
        let client = self.client_addr(&conn);
        let mut forge = ConnectionState::new(client, conn.client_port, addr, self.cfg.service_port);
        let syn = forge
            .open(&mut IssPolicy::Fixed(first.add(u32::MAX)), now)
            .expect("fresh connection opens");
        let capture = self.cookie();
        let rule = FlowRule {
            priority: PRIO_CAPTURE,
            matcher: tcp_match(port, addr.ip, self.cfg.service_port, conn.client_ip, conn.client_port),
            actions: vec![FlowAction::PacketIn],
            cookie: capture,
        };
        let m = self.migrations.get_mut(&conn).expect("migration exists");
        m.job = Some(Job {
            kind,
            port,
            addr,
            forge,
            replay,
            replay_sent: false,
            cut,
            capture,
            queue,
            buffer_rule,
        });
        vec![ControllerOutput::Switch {
            commands: vec![
                SwitchCommand::Install(rule),
                SwitchCommand::PacketOut {
                    port,
                    packet: Packet::Tcp(syn),
                },
            ],
            barrier: None,
        }]
    }

    fn on_captured(&mut self, seg: TcpSegment, in_port: PortId, now: Micros) -> Vec<ControllerOutput> {
        let Some(conn) = self.migrations.iter().find_map(|(k, m)| {
            let j = m.job.as_ref()?;
            (j.port == in_port && k.client_ip == seg.dst.ip && k.client_port == seg.dport).then_some(*k)
        }) else {
            return Vec::new();
        };
        let job = self
            .migrations
            .get_mut(&conn)
            .and_then(|m| m.job.as_mut())
            .expect("job found above");
        let was = job.forge.state;
        let res = job.forge.on_segment(&seg, now);
        if job.forge.state == TcpState::ClosedFinal {
            return self.job_refused(conn, now);
        }
        let mut out = Vec::new();
        if was == TcpState::SynSent && job.forge.is_established() && !job.replay_sent {
            let mut cmds: Vec<SwitchCommand> = res
                .emitted
                .into_iter()
                .map(|s| SwitchCommand::PacketOut {
                    port: job.port,
                    packet: Packet::Tcp(s),
                })
                .collect();
            for p in std::mem::take(&mut job.replay) {
                let s = job.forge.app_send(&p, now).expect("established forge sends");
                cmds.push(SwitchCommand::PacketOut {
                    port: job.port,
                    packet: Packet::Tcp(s),
                });
            }
            job.replay_sent = true;
            let target = match job.kind {
                JobKind::Honey => "honey",
                _ => "victim",
            };
            let n = cmds.len() - 1;
            self.log
                .push(now, "replay", Some(conn), format!("target={target} payloads={n}"));
            out.push(ControllerOutput::Switch {
                commands: cmds,
                barrier: None,
            });
        }
        out.extend(self.try_finalize(conn, now));
        out
    }

    fn try_finalize(&mut self, conn: ConnKey, now: Micros) -> Vec<ControllerOutput> {
        let Some(m) = self.migrations.get(&conn) else {
            return Vec::new();
        };
        let Some(job) = &m.job else {
            return Vec::new();
        };
        let tracked = self.ledger.get(&conn).expect("tracked");
        let ready = job.replay_sent
            && job.forge.is_established()
            && job.forge.all_acked()
            && seq_le(job.cut, tracked.active_acked);
        if !ready {
            return Vec::new();
        }
        self.finalize(conn, now)
    }

    /// Swap the rules in one batch: stop buffering, point the client at the
    /// new server with rewrites, release what was held.
    fn finalize(&mut self, conn: ConnKey, now: Micros) -> Vec<ControllerOutput> {
        let client_port = self.client_port(&conn);
        let client_match = self.client_match(&conn);
        let victim = self.cfg.victim;
        let internal = self.cfg.addressing == HoneyAddressing::Internal;
        let service = self.cfg.service_port;
        let (honey_port, honey) = (self.cfg.honey_port, self.cfg.honey);
        let visible = self.ledger.get(&conn).expect("tracked").visible_next;

        let m = self.migrations.get_mut(&conn).expect("migration exists");
        let job = m.job.take().expect("finalize with a job");
        let new_next = job.forge.rcv_nxt;
        let (seq_delta, ack_delta) = splice_deltas(visible, new_next);
        let to_honey = job.kind == JobKind::Honey;

        let mut commands = vec![
            SwitchCommand::Remove(job.buffer_rule),
            SwitchCommand::Remove(job.capture),
        ];
        for c in m.splice_rules.drain(..) {
            commands.push(SwitchCommand::Remove(c));
        }
        let reactive_fwd = client_match.clone();
        let reactive_rev = reverse_of(&reactive_fwd, self.cfg.victim_port);
        for k in [reactive_fwd, reactive_rev] {
            if let Some(c) = self.flows.remove(&k) {
                commands.push(SwitchCommand::Remove(c));
            }
        }
        let fwd_cookie = Cookie(self.next_cookie);
        let rev_cookie = Cookie(self.next_cookie + 1);
        self.next_cookie += 2;
        commands.push(SwitchCommand::Install(FlowRule {
            priority: PRIO_SPLICE,
            matcher: client_match,
            actions: vec![
                FlowAction::Rewrite(Rewrite {
                    ack_delta: seq_delta,
                    new_dst: (to_honey && internal).then_some(honey),
                    ..Rewrite::default()
                }),
                FlowAction::Output(job.port),
            ],
            cookie: fwd_cookie,
        }));
        commands.push(SwitchCommand::Install(FlowRule {
            priority: PRIO_SPLICE,
            matcher: tcp_match(job.port, job.addr.ip, service, conn.client_ip, conn.client_port),
            actions: vec![
                FlowAction::Rewrite(Rewrite {
                    seq_delta: ack_delta,
                    new_src: (to_honey && internal).then_some(victim),
                    ..Rewrite::default()
                }),
                FlowAction::Output(client_port),
            ],
            cookie: rev_cookie,
        }));
        commands.push(SwitchCommand::ReleaseBuffer {
            queue: job.queue,
            rewrite: None,
        });
        if job.kind == JobKind::Restore {
            let client = self.ledger.get(&conn).expect("tracked").client;
            commands.push(SwitchCommand::PacketOut {
                port: honey_port,
                packet: Packet::Tcp(TcpSegment {
                    src: client,
                    dst: honey,
                    sport: conn.client_port,
                    dport: service,
                    seq: job.cut,
                    ack: SeqNum(0),
                    flags: TcpFlags::RST,
                    payload: Vec::new(),
                    ts_sent: now,
                }),
            });
        }
        m.splice_rules = vec![fwd_cookie, rev_cookie];
        m.record.seq_delta = seq_delta;
        m.record.ack_delta = ack_delta;
        let pending_restore = std::mem::take(&mut m.pending_restore) && to_honey;
        self.ledger
            .get_mut(&conn)
            .expect("tracked")
            .switch_active(job.port, ack_delta, job.forge.snd_una);
        self.log.push(
            now,
            "splice_installed",
            Some(conn),
            format!("seq_delta={seq_delta} ack_delta={ack_delta} out_port={}", job.port),
        );
        let to = match job.kind {
            JobKind::Honey => Phase::Redirected,
            JobKind::Restore | JobKind::FailOpen => Phase::Restored,
        };
        self.set_phase(conn, to, now);
        let mut out = vec![ControllerOutput::Switch {
            commands,
            barrier: None,
        }];
        if pending_restore {
            out.extend(self.restore_original(conn, now).unwrap_or_default());
        }
        out
    }

    fn job_refused(&mut self, conn: ConnKey, now: Micros) -> Vec<ControllerOutput> {
        let m = self.migrations.get_mut(&conn).expect("migration exists");
        let job = m.job.take().expect("job present");
        match job.kind {
            JobKind::Restore => {
                m.record.restore_started_at = None;
                self.log
                    .push(now, "restore_failed", Some(conn), "reason=refused".into());
                vec![ControllerOutput::Switch {
                    commands: vec![
                        SwitchCommand::Remove(job.buffer_rule),
                        SwitchCommand::Remove(job.capture),
                        SwitchCommand::ReleaseBuffer {
                            queue: job.queue,
                            rewrite: None,
                        },
                    ],
                    barrier: None,
                }]
            }
            JobKind::Honey | JobKind::FailOpen => {
                self.log.push(now, "splice_refused", Some(conn), String::new());
                let mut out = vec![ControllerOutput::Switch {
                    commands: vec![SwitchCommand::Remove(job.capture)],
                    barrier: None,
                }];
                out.extend(self.fail_closed(conn, now));
                out
            }
        }
    }

    fn on_clone_ready(
        &mut self,
        conn: ConnKey,
        ticket: &CloneTicket,
        requested_at: Micros,
        ready_at: Micros,
        now: Micros,
    ) -> Vec<ControllerOutput> {
        self.log.push(
            ready_at,
            "clone_instantiated",
            Some(conn),
            format!(
                "latency_us={} strategy={} handle={}",
                ready_at - requested_at,
                ticket.kind,
                ticket.handle.0
            ),
        );
        if self.phase(&conn) != Phase::Cloning {
            return Vec::new();
        }
        self.start_honey(conn, now)
    }

    fn on_clone_failed(&mut self, conn: ConnKey, now: Micros) -> Vec<ControllerOutput> {
        self.log.push(now, "clone_failed", Some(conn), String::new());
        if self.phase(&conn) != Phase::Cloning {
            return Vec::new();
        }
        vec![ControllerOutput::Timer {
            at: now + self.cfg.miss_hold_us,
            conn,
        }]
    }

    fn on_fallback(&mut self, conn: ConnKey, now: Micros) -> Vec<ControllerOutput> {
        if self.phase(&conn) != Phase::Cloning {
            return Vec::new();
        }
        match self.cfg.fallback {
            Fallback::FailClosed => self.fail_closed(conn, now),
            Fallback::FailOpen => {
                let tracked = self.ledger.get(&conn).expect("tracked");
                let m = self.migrations.get_mut(&conn).expect("migration exists");
                let cut = m.record.victim_cut.expect("cut set");
                if m.job.is_some() {
                    return Vec::new();
                }
                if !seq_le(cut, tracked.active_acked) {
                    m.fallback_waiting = true;
                    return Vec::new();
                }
                m.fallback_waiting = false;
                let (queue, buffer_rule) = (m.queue, m.buffer_rule);
                self.ledger.get_mut(&conn).expect("tracked").frozen = true;
                self.log.push(now, "fallback", Some(conn), "mode=fail_open".into());
                let (port, addr) = (self.cfg.victim_port, self.cfg.victim);
                self.start_job(
                    conn,
                    JobKind::FailOpen,
                    port,
                    addr,
                    cut,
                    Vec::new(),
                    cut,
                    queue,
                    buffer_rule,
                    now,
                )
            }
        }
    }

    fn fail_closed(&mut self, conn: ConnKey, now: Micros) -> Vec<ControllerOutput> {
        let matcher = self.client_match(&conn);
        let drop_rule = self.cookie();
        let m = self.migrations.get_mut(&conn).expect("migration exists");
        let commands = vec![
            SwitchCommand::Install(FlowRule {
                priority: PRIO_HOLD,
                matcher,
                actions: vec![FlowAction::Drop],
                cookie: drop_rule,
            }),
            SwitchCommand::Remove(m.buffer_rule),
            SwitchCommand::DiscardBuffer(m.queue),
        ];
        self.log.push(now, "fallback", Some(conn), "mode=fail_closed".into());
        self.set_phase(conn, Phase::Failed, now);
        vec![ControllerOutput::Switch {
            commands,
            barrier: None,
        }]
    }

    fn on_wake(&mut self, conn: ConnKey, now: Micros) -> Vec<ControllerOutput> {
        let waiting = self.migrations.get(&conn).is_some_and(|m| m.fallback_waiting);
        if waiting {
            return self.on_fallback(conn, now);
        }
        self.try_finalize(conn, now)
    }

    /// Return a redirected connection to the victim. Requests that arrive
    /// while a migration is still in flight are held until it completes.
    pub fn restore_original(&mut self, conn: ConnKey, now: Micros) -> Result<Vec<ControllerOutput>, ControllerError> {
        let phase = self.phase(&conn);
        self.log
            .push(now, "restore_requested", Some(conn), format!("phase={phase}"));
        match phase {
            Phase::Redirected => {}
            Phase::Cloning | Phase::Splicing => {
                self.migrations
                    .get_mut(&conn)
                    .expect("migration exists")
                    .pending_restore = true;
                self.log.push(now, "restore_deferred", Some(conn), String::new());
                return Ok(Vec::new());
            }
            _ => {
                return Err(ControllerError::InvalidPhase {
                    conn,
                    op: "restore",
                    phase,
                })
            }
        }
        let m = self.migrations.get(&conn).expect("migration exists");
        if m.job.is_some() || m.awaiting.is_some() {
            self.log
                .push(now, "restore_ignored", Some(conn), "reason=in_progress".into());
            return Ok(Vec::new());
        }
        let queue = self.queue();
        let buffer_rule = self.cookie();
        let rule = FlowRule {
            priority: PRIO_HOLD,
            matcher: self.client_match(&conn),
            actions: vec![FlowAction::Buffer(queue)],
            cookie: buffer_rule,
        };
        let token = self.token(conn);
        let m = self.migrations.get_mut(&conn).expect("migration exists");
        m.awaiting = Some(Awaiting::RestoreCut { queue, buffer_rule });
        m.record.restore_started_at = Some(now);
        Ok(vec![ControllerOutput::Switch {
            commands: vec![SwitchCommand::Install(rule)],
            barrier: Some(token),
        }])
    }
}
