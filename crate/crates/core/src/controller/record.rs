use std::fmt;

use crate::netcore::{ConnKey, HostAddr, Micros, SeqNum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    Cloning,
    Splicing,
    Redirected,
    Restored,
    /// Clone failed and the connection was cut off (fail-closed).
    Failed,
}

impl Phase {
    /// Allowed transitions. Besides the main line, a failed clone may fall
    /// back to the original server or be dropped.
    pub fn can_go(self, to: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, to),
            (Idle, Cloning)
                | (Cloning, Splicing)
                | (Splicing, Redirected)
                | (Redirected, Restored)
                | (Cloning, Restored)
                | (Cloning, Failed)
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Idle => "IDLE",
            Phase::Cloning => "CLONING",
            Phase::Splicing => "SPLICING",
            Phase::Redirected => "REDIRECTED",
            Phase::Restored => "RESTORED",
            Phase::Failed => "FAILED",
        })
    }
}

/// Seq/ack offsets for joining a client to a server that is `new_next`
/// bytes into its own stream, when the client expects `visible_next`.
///
/// Returns `(seq_delta, ack_delta)` with `seq_delta = new_next - visible_next`
/// and `ack_delta = -seq_delta`. Server-to-client segments get `ack_delta`
/// added to their seq; client-to-server segments get `seq_delta` added to
/// their ack.
pub fn splice_deltas(visible_next: SeqNum, new_next: SeqNum) -> (u32, u32) {
    let seq_delta = new_next.0.wrapping_sub(visible_next.0);
    (seq_delta, seq_delta.wrapping_neg())
}

/// State of one migrated connection.
#[derive(Clone, Debug)]
pub struct MigrationRecord {
    pub conn: ConnKey,
    pub victim: HostAddr,
    pub honey: HostAddr,
    pub seq_delta: u32,
    pub ack_delta: u32,
    /// Client payloads replayed to the honey server, in order.
    pub replay_buffer: Vec<Vec<u8>>,
    pub phase: Phase,
    pub phase_times: Vec<(Phase, Micros)>,
    /// First client byte the victim never received.
    pub victim_cut: Option<SeqNum>,
    pub restore_started_at: Option<Micros>,
}

impl MigrationRecord {
    pub fn new(conn: ConnKey, victim: HostAddr, honey: HostAddr, now: Micros) -> Self {
        MigrationRecord {
            conn,
            victim,
            honey,
            seq_delta: 0,
            ack_delta: 0,
            replay_buffer: Vec::new(),
            phase: Phase::Idle,
            phase_times: vec![(Phase::Idle, now)],
            victim_cut: None,
            restore_started_at: None,
        }
    }

    /// Move to `to`, returning false (and staying put) if that is not a legal step.
    pub fn advance(&mut self, to: Phase, now: Micros) -> bool {
        if !self.phase.can_go(to) {
            return false;
        }
        self.phase = to;
        self.phase_times.push((to, now));
        true
    }

    pub fn entered(&self, phase: Phase) -> Option<Micros> {
        self.phase_times.iter().find(|(p, _)| *p == phase).map(|(_, t)| *t)
    }
}
