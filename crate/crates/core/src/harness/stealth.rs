use std::fmt;

use crate::endpoint::ConnectionState;
use crate::netcore::{seq_le, seq_lt, HostAddr, Micros, SeqNum, TcpFlags, TcpSegment};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// The attacker received a reset or a FIN it did not ask for.
    Teardown(TcpFlags),
    /// An ack went backwards, acked unsent data, or split a sent segment.
    AckDiscontinuity { ack: SeqNum, expected_max: SeqNum },
    /// Peer seq skipped or repeated bytes.
    SeqGap { seq: SeqNum, expected: SeqNum },
    /// The segment came from an address other than the server's.
    WrongSource { src: HostAddr, sport: u16 },
    /// The attacker's own connection broke down.
    ConnectionLost,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub time: Micros,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}us {:?}", self.time, self.kind)
    }
}

/// Attacker-side checks run on every received segment.
///
/// Acks are held to the boundaries of what the attacker sent: with
/// pipelined requests a response may legitimately ack less than `snd_nxt`.
pub struct StealthMonitor {
    server: HostAddr,
    server_port: u16,
    expected_seq: Option<SeqNum>,
    last_ack: Option<SeqNum>,
    violations: Vec<Violation>,
    checked: u64,
}

impl StealthMonitor {
    pub fn new(server: HostAddr, server_port: u16) -> Self {
        StealthMonitor {
            server,
            server_port,
            expected_seq: None,
            last_ack: None,
            violations: Vec::new(),
            checked: 0,
        }
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn into_violations(self) -> Vec<Violation> {
        self.violations
    }

    pub fn checked(&self) -> u64 {
        self.checked
    }

    pub fn report(&mut self, time: Micros, kind: ViolationKind) {
        self.violations.push(Violation { time, kind });
    }

    /// Check `seg` against the attacker state just before it is processed.
    pub fn check(&mut self, seg: &TcpSegment, conn: &ConnectionState, now: Micros) {
        self.checked += 1;
        let bad = seg.flags & (TcpFlags::RST | TcpFlags::FIN);
        if !bad.is_empty() {
            self.report(now, ViolationKind::Teardown(bad));
        }
        if seg.src != self.server || seg.sport != self.server_port {
            self.report(
                now,
                ViolationKind::WrongSource {
                    src: seg.src,
                    sport: seg.sport,
                },
            );
        }
        if seg.has(TcpFlags::ACK) && !self.ack_ok(seg.ack, conn) {
            self.report(
                now,
                ViolationKind::AckDiscontinuity {
                    ack: seg.ack,
                    expected_max: conn.snd_nxt,
                },
            );
        }
        if seg.has(TcpFlags::ACK) {
            self.last_ack = Some(seg.ack);
        }
        match self.expected_seq {
            None if seg.has(TcpFlags::SYN) => self.expected_seq = Some(seg.end_seq()),
            None => {}
            Some(exp) => {
                if seg.seq != exp {
                    self.report(
                        now,
                        ViolationKind::SeqGap {
                            seq: seg.seq,
                            expected: exp,
                        },
                    );
                }
                let end = seg.end_seq();
                if seq_lt(exp, end) {
                    self.expected_seq = Some(end);
                }
            }
        }
    }

    fn ack_ok(&self, ack: SeqNum, conn: &ConnectionState) -> bool {
        if self.last_ack.is_some_and(|l| seq_lt(ack, l)) || !seq_le(ack, conn.snd_nxt) {
            return false;
        }
        let mut b = conn.iss.add(1);
        if ack == b {
            return true;
        }
        for (p, _) in &conn.sent_log {
            b = b.add(p.len() as u32);
            if ack == b {
                return true;
            }
        }
        false
    }
}
