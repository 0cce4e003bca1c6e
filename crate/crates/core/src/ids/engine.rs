use std::collections::{HashMap, HashSet, VecDeque};
use std::net::Ipv4Addr;

use crate::ids::rule::IdsRule;
use crate::netcore::{ConnKey, Micros, Packet, TcpFlags, TcpSegment};

/// Raised by a detector; carries the segment that tipped it so the
/// controller can identify the connection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alert {
    pub sid: u32,
    pub msg: String,
    pub segment: TcpSegment,
    pub conn: ConnKey,
    pub time: Micros,
    /// Matches seen so far for this rule and track key, this one included.
    pub ordinal: u64,
}

impl Alert {
    fn new(sid: u32, msg: &str, seg: &TcpSegment, time: Micros, ordinal: u64) -> Self {
        Alert {
            sid,
            msg: msg.to_string(),
            segment: seg.clone(),
            conn: ConnKey::from_client_segment(seg),
            time,
            ordinal,
        }
    }
}

pub fn rule_matches(rule: &IdsRule, seg: &TcpSegment) -> bool {
    rule.src.matches(seg.src.ip)
        && rule.src_port.is_none_or(|p| p.matches(seg.sport))
        && rule.dst.matches(seg.dst.ip)
        && rule.dst_port.matches(seg.dport)
        && seg.flags.contains(rule.flags)
}

#[derive(Default)]
struct TrackState {
    /// Match times since the last alert, oldest first.
    window: VecDeque<Micros>,
    total: u64,
}

/// Rule matcher with per-(sid, destination) threshold counters.
pub struct RuleEngine {
    rules: Vec<IdsRule>,
    tracks: HashMap<(u32, Ipv4Addr), TrackState>,
}

impl RuleEngine {
    pub fn new(rules: Vec<IdsRule>) -> Self {
        RuleEngine {
            rules,
            tracks: HashMap::new(),
        }
    }

    pub fn rules(&self) -> &[IdsRule] {
        &self.rules
    }

    pub fn observe(&mut self, pkt: &Packet, now: Micros) -> Vec<Alert> {
        let Packet::Tcp(seg) = pkt else {
            return Vec::new();
        };
        let mut alerts = Vec::new();
        for rule in &self.rules {
            if !rule_matches(rule, seg) {
                continue;
            }
            let st = self.tracks.entry((rule.sid, seg.dst.ip)).or_default();
            st.total += 1;
            let Some(th) = rule.threshold else {
                alerts.push(Alert::new(rule.sid, &rule.msg, seg, now, st.total));
                continue;
            };
            let span = th.seconds as u64 * 1_000_000;
            while st.window.front().is_some_and(|t| now.saturating_sub(*t) >= span) {
                st.window.pop_front();
            }
            st.window.push_back(now);
            if st.window.len() >= th.count as usize {
                st.window.clear();
                alerts.push(Alert::new(rule.sid, &rule.msg, seg, now, st.total));
            }
        }
        alerts
    }
}

/// Fires once per connection on its n-th client-to-server data segment
/// (PSH+ACK with payload) toward the protected service.
pub struct NthPacketTrigger {
    n: u64,
    server_ip: Ipv4Addr,
    server_port: u16,
    counts: HashMap<ConnKey, u64>,
    fired: HashSet<ConnKey>,
}

/// Reported as the sid of alerts raised by [`NthPacketTrigger`].
pub const NTH_PACKET_SID: u32 = 0;

impl NthPacketTrigger {
    /// `n` is clamped to at least 1.
    pub fn new(n: u64, server_ip: Ipv4Addr, server_port: u16) -> Self {
        NthPacketTrigger {
            n: n.max(1),
            server_ip,
            server_port,
            counts: HashMap::new(),
            fired: HashSet::new(),
        }
    }

    pub fn count(&self, conn: &ConnKey) -> u64 {
        self.counts.get(conn).copied().unwrap_or(0)
    }

    pub fn observe(&mut self, pkt: &Packet, now: Micros) -> Option<Alert> {
        let Packet::Tcp(seg) = pkt else {
            return None;
        };
        if seg.dst.ip != self.server_ip
            || seg.dport != self.server_port
            || seg.payload.is_empty()
            || !seg.flags.contains(TcpFlags::PSH | TcpFlags::ACK)
        {
            return None;
        }
        let key = ConnKey::from_client_segment(seg);
        let c = self.counts.entry(key).or_insert(0);
        *c += 1;
        if *c == self.n && self.fired.insert(key) {
            return Some(Alert::new(NTH_PACKET_SID, "NTH_PACKET", seg, now, *c));
        }
        None
    }
}

/// What the IDS tap runs on each mirrored packet.
pub enum Detector {
    Rules(RuleEngine),
    NthPacket(NthPacketTrigger),
}

impl Detector {
    pub fn observe(&mut self, pkt: &Packet, now: Micros) -> Vec<Alert> {
        match self {
            Detector::Rules(e) => e.observe(pkt, now),
            Detector::NthPacket(t) => t.observe(pkt, now).into_iter().collect(),
        }
    }
}
