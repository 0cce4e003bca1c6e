use std::collections::{BTreeMap, HashMap, VecDeque};

use thiserror::Error;

use crate::netcore::{Packet, PortId};
use crate::vswitch::flow::{Cookie, FlowAction, FlowRule, FlowTable, QueueId, Rewrite};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SwitchError {
    #[error("no rule with cookie {0:?}")]
    UnknownCookie(Cookie),
    #[error("cookie {0:?} already installed")]
    DuplicateCookie(Cookie),
    #[error("no buffer queue {0:?}")]
    UnknownQueue(QueueId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketInReason {
    NoMatch,
    Action,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SwitchEffect {
    Output {
        port: PortId,
        packet: Packet,
    },
    PacketIn {
        packet: Packet,
        in_port: PortId,
        reason: PacketInReason,
        /// Set when the switch is holding the packet pending a controller decision.
        buffer_id: Option<BufferId>,
    },
    Buffered {
        queue: QueueId,
    },
    Dropped,
}

/// Result of a packet entering the switch: the untouched copy for the IDS
/// tap plus whatever the flow table did with it.
#[derive(Clone, Debug)]
pub struct Ingress {
    pub mirror: Packet,
    pub effects: Vec<SwitchEffect>,
}

/// Controller-to-switch messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SwitchCommand {
    Install(FlowRule),
    Remove(Cookie),
    ReleaseHeld(BufferId),
    ReleaseBuffer { queue: QueueId, rewrite: Option<Rewrite> },
    DiscardBuffer(QueueId),
    PacketOut { port: PortId, packet: Packet },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SwitchStats {
    pub mirrored: u64,
    pub packet_ins: u64,
    pub dropped: u64,
    pub held_expired: u64,
}

/// Single-table software switch.
#[derive(Default)]
pub struct Switch {
    table: FlowTable,
    held: BTreeMap<BufferId, (Packet, PortId)>,
    next_buffer: u32,
    queues: HashMap<QueueId, VecDeque<(Packet, PortId)>>,
    stats: SwitchStats,
}

impl Switch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn table(&self) -> &FlowTable {
        &self.table
    }

    pub fn stats(&self) -> SwitchStats {
        self.stats
    }

    /// Serial number the next ingress packet will get. Everything with a
    /// smaller serial has already been through the table.
    pub fn next_serial(&self) -> u64 {
        self.stats.mirrored
    }

    pub fn held_count(&self) -> usize {
        self.held.len()
    }

    pub fn queue_len(&self, queue: QueueId) -> Option<usize> {
        self.queues.get(&queue).map(|q| q.len())
    }

    pub fn install_rule(&mut self, rule: FlowRule) -> Result<Cookie, SwitchError> {
        let cookie = rule.cookie;
        if self.table.insert(rule) {
            Ok(cookie)
        } else {
            Err(SwitchError::DuplicateCookie(cookie))
        }
    }

    pub fn remove_rule(&mut self, cookie: Cookie) -> Result<bool, SwitchError> {
        self.table
            .remove(cookie)
            .map(|_| true)
            .ok_or(SwitchError::UnknownCookie(cookie))
    }

    /// A packet arrives on a port: mirror it, then run the table.
    pub fn ingress(&mut self, packet: Packet, in_port: PortId) -> Ingress {
        self.stats.mirrored += 1;
        let mirror = packet.clone();
        let effects = self.dispatch(packet, in_port, true);
        Ingress { mirror, effects }
    }

    /// Table lookup and action execution without mirroring. Used for packets
    /// re-entering the pipeline from a buffer.
    fn dispatch(&mut self, mut packet: Packet, in_port: PortId, hold_on_miss: bool) -> Vec<SwitchEffect> {
        let Some(rule) = self.table.lookup(&packet, in_port) else {
            if !hold_on_miss {
                self.stats.dropped += 1;
                return vec![SwitchEffect::Dropped];
            }
            let id = BufferId(self.next_buffer);
            self.next_buffer += 1;
            self.held.insert(id, (packet.clone(), in_port));
            self.stats.packet_ins += 1;
            return vec![SwitchEffect::PacketIn {
                packet,
                in_port,
                reason: PacketInReason::NoMatch,
                buffer_id: Some(id),
            }];
        };
        let actions = rule.actions.clone();
        let mut effects = Vec::new();
        for action in actions {
            match action {
                FlowAction::Output(port) => effects.push(SwitchEffect::Output {
                    port,
                    packet: packet.clone(),
                }),
                FlowAction::Rewrite(rw) => rw.apply(&mut packet),
                FlowAction::Buffer(queue) => {
                    self.queues
                        .entry(queue)
                        .or_default()
                        .push_back((packet.clone(), in_port));
                    effects.push(SwitchEffect::Buffered { queue });
                }
                FlowAction::Drop => {
                    self.stats.dropped += 1;
                    effects.push(SwitchEffect::Dropped);
                    break;
                }
                FlowAction::PacketIn => {
                    self.stats.packet_ins += 1;
                    effects.push(SwitchEffect::PacketIn {
                        packet: packet.clone(),
                        in_port,
                        reason: PacketInReason::Action,
                        buffer_id: None,
                    });
                }
            }
        }
        if effects.is_empty() {
            // An action list with no terminal action discards the packet.
            self.stats.dropped += 1;
            effects.push(SwitchEffect::Dropped);
        }
        effects
    }

    /// Re-run a held miss packet through the (now updated) table.
    pub fn release_held(&mut self, id: BufferId) -> Vec<SwitchEffect> {
        match self.held.remove(&id) {
            Some((pkt, port)) => self.dispatch(pkt, port, false),
            None => Vec::new(),
        }
    }

    /// Drop a held packet whose controller answer never came. True if it was still held.
    pub fn expire_held(&mut self, id: BufferId) -> bool {
        let hit = self.held.remove(&id).is_some();
        if hit {
            self.stats.held_expired += 1;
            self.stats.dropped += 1;
        }
        hit
    }

    /// Replay a buffer queue through the table in arrival order, optionally
    /// rewriting each packet first. Returns the count released and the effects.
    pub fn release_buffer(
        &mut self,
        queue: QueueId,
        rewrite: Option<Rewrite>,
    ) -> Result<(usize, Vec<SwitchEffect>), SwitchError> {
        let pending: Vec<_> = self
            .queues
            .get_mut(&queue)
            .ok_or(SwitchError::UnknownQueue(queue))?
            .drain(..)
            .collect();
        let n = pending.len();
        let mut effects = Vec::new();
        for (mut pkt, port) in pending {
            if let Some(rw) = rewrite {
                rw.apply(&mut pkt);
            }
            effects.extend(self.dispatch(pkt, port, false));
        }
        Ok((n, effects))
    }

    pub fn discard_buffer(&mut self, queue: QueueId) -> Result<usize, SwitchError> {
        let q = self.queues.get_mut(&queue).ok_or(SwitchError::UnknownQueue(queue))?;
        let n = q.len();
        q.clear();
        self.stats.dropped += n as u64;
        Ok(n)
    }

    /// Declare an (empty) queue so it can be released before anything lands in it.
    pub fn ensure_queue(&mut self, queue: QueueId) {
        self.queues.entry(queue).or_default();
    }

    /// Execute one controller message. All of a batch runs inside a single
    /// dispatch, so packets see either the old table or the new one.
    pub fn apply(&mut self, cmd: SwitchCommand) -> Result<Vec<SwitchEffect>, SwitchError> {
        match cmd {
            SwitchCommand::Install(rule) => {
                if let Some(FlowAction::Buffer(q)) = rule.actions.iter().find(|a| matches!(a, FlowAction::Buffer(_))) {
                    self.ensure_queue(*q);
                }
                self.install_rule(rule).map(|_| Vec::new())
            }
            SwitchCommand::Remove(c) => self.remove_rule(c).map(|_| Vec::new()),
            SwitchCommand::ReleaseHeld(id) => Ok(self.release_held(id)),
            SwitchCommand::ReleaseBuffer { queue, rewrite } => self.release_buffer(queue, rewrite).map(|(_, e)| e),
            SwitchCommand::DiscardBuffer(q) => self.discard_buffer(q).map(|_| Vec::new()),
            SwitchCommand::PacketOut { port, packet } => Ok(vec![SwitchEffect::Output { port, packet }]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{HostAddr, MacAddr, SeqNum, TcpFlags, TcpSegment};
    use crate::vswitch::flow::FlowMatch;
    use std::net::Ipv4Addr;

    fn addr(n: u8) -> HostAddr {
        HostAddr::new(Ipv4Addr::new(10, 0, 0, n), MacAddr::local(n as u32))
    }

    fn tcp(seq: u32, ack: u32) -> Packet {
        Packet::Tcp(TcpSegment {
            src: addr(1),
            dst: addr(2),
            sport: 40000,
            dport: 80,
            seq: SeqNum(seq),
            ack: SeqNum(ack),
            flags: TcpFlags::PSH | TcpFlags::ACK,
            payload: b"x".to_vec(),
            ts_sent: 0,
        })
    }

    fn rule(cookie: u64, priority: u16, actions: Vec<FlowAction>) -> FlowRule {
        FlowRule {
            priority,
            matcher: FlowMatch::any(),
            actions,
            cookie: Cookie(cookie),
        }
    }

    fn outputs(effects: &[SwitchEffect]) -> Vec<(PortId, Packet)> {
        effects
            .iter()
            .filter_map(|e| match e {
                SwitchEffect::Output { port, packet } => Some((*port, packet.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn install_then_match() {
        let mut sw = Switch::new();
        sw.install_rule(rule(1, 10, vec![FlowAction::Output(2)])).unwrap();
        let ing = sw.ingress(tcp(1, 1), 1);
        assert_eq!(outputs(&ing.effects), vec![(2, tcp(1, 1))]);
    }

    #[test]
    fn remove_once_then_unknown() {
        let mut sw = Switch::new();
        sw.install_rule(rule(7, 10, vec![FlowAction::Drop])).unwrap();
        assert_eq!(sw.remove_rule(Cookie(7)), Ok(true));
        assert_eq!(sw.remove_rule(Cookie(7)), Err(SwitchError::UnknownCookie(Cookie(7))));
    }

    #[test]
    fn equal_priority_earliest_wins_higher_priority_beats_both() {
        let mut sw = Switch::new();
        sw.install_rule(rule(1, 10, vec![FlowAction::Output(5)])).unwrap();
        sw.install_rule(rule(2, 10, vec![FlowAction::Output(6)])).unwrap();
        assert_eq!(outputs(&sw.ingress(tcp(1, 1), 1).effects)[0].0, 5);
        sw.install_rule(rule(3, 11, vec![FlowAction::Output(7)])).unwrap();
        assert_eq!(outputs(&sw.ingress(tcp(1, 1), 1).effects)[0].0, 7);
    }

    #[test]
    fn exact_rule_and_wildcard_compete_by_priority() {
        let mut sw = Switch::new();
        let pkt = tcp(1, 1);
        sw.install_rule(FlowRule {
            priority: 10,
            matcher: FlowMatch::exact(1, &pkt),
            actions: vec![FlowAction::Output(2)],
            cookie: Cookie(1),
        })
        .unwrap();
        sw.install_rule(rule(2, 5, vec![FlowAction::Output(3)])).unwrap();
        assert_eq!(outputs(&sw.ingress(pkt.clone(), 1).effects)[0].0, 2);
        // Different in_port misses the exact rule and falls to the wildcard.
        assert_eq!(outputs(&sw.ingress(pkt, 9).effects)[0].0, 3);
    }

    #[test]
    fn miss_emits_packet_in_and_holds() {
        let mut sw = Switch::new();
        let ing = sw.ingress(tcp(1, 1), 1);
        let [SwitchEffect::PacketIn {
            reason,
            buffer_id: Some(id),
            ..
        }] = ing.effects.as_slice()
        else {
            panic!("expected packet-in, got {:?}", ing.effects);
        };
        assert_eq!(*reason, PacketInReason::NoMatch);
        assert_eq!(sw.held_count(), 1);
        sw.install_rule(rule(1, 1, vec![FlowAction::Output(2)])).unwrap();
        assert_eq!(outputs(&sw.release_held(*id)).len(), 1);
        assert_eq!(sw.held_count(), 0);
        assert!(!sw.expire_held(*id));
    }

    #[test]
    fn rewrite_shifts_seq_and_ack() {
        let mut sw = Switch::new();
        let rw = Rewrite {
            seq_delta: 500,
            ack_delta: 500u32.wrapping_neg(),
            ..Rewrite::default()
        };
        sw.install_rule(rule(1, 1, vec![FlowAction::Rewrite(rw), FlowAction::Output(2)]))
            .unwrap();
        let ing = sw.ingress(tcp(1000, 9000), 1);
        assert_eq!(ing.mirror, tcp(1000, 9000), "mirror is pre-rewrite");
        assert_eq!(outputs(&ing.effects), vec![(2, tcp(1500, 8500))]);
    }

    #[test]
    fn rewrite_can_replace_addresses() {
        let mut pkt = tcp(1, 1);
        Rewrite {
            new_dst: Some(addr(9)),
            new_src: Some(addr(8)),
            ..Rewrite::default()
        }
        .apply(&mut pkt);
        assert_eq!(pkt.dst(), addr(9));
        assert_eq!(pkt.src(), addr(8));
    }

    #[test]
    fn buffer_release_preserves_order() {
        let mut sw = Switch::new();
        let q = QueueId(1);
        sw.install_rule(rule(1, 10, vec![FlowAction::Buffer(q)])).unwrap();
        for s in [1, 2, 3] {
            sw.ingress(tcp(s, 0), 1);
        }
        sw.remove_rule(Cookie(1)).unwrap();
        sw.install_rule(rule(2, 10, vec![FlowAction::Output(4)])).unwrap();
        let (n, eff) = sw.release_buffer(q, None).unwrap();
        assert_eq!(n, 3);
        let seqs: Vec<u32> = outputs(&eff)
            .into_iter()
            .map(|(_, p)| p.as_tcp().unwrap().seq.0)
            .collect();
        assert_eq!(seqs, vec![1, 2, 3]);
        assert_eq!(sw.release_buffer(q, None).unwrap().0, 0);
        assert_eq!(
            sw.release_buffer(QueueId(99), None).unwrap_err(),
            SwitchError::UnknownQueue(QueueId(99))
        );
    }

    #[test]
    fn buffer_release_with_rewrite() {
        let mut sw = Switch::new();
        let q = QueueId(1);
        sw.install_rule(rule(1, 10, vec![FlowAction::Buffer(q)])).unwrap();
        sw.ingress(tcp(u32::MAX - 1, 10), 1);
        sw.ingress(tcp(5, 20), 1);
        sw.remove_rule(Cookie(1)).unwrap();
        sw.install_rule(rule(2, 10, vec![FlowAction::Output(4)])).unwrap();
        let rw = Rewrite {
            seq_delta: 3,
            ack_delta: 20u32.wrapping_neg(),
            ..Rewrite::default()
        };
        let (_, eff) = sw.release_buffer(q, Some(rw)).unwrap();
        let got: Vec<(u32, u32)> = outputs(&eff)
            .into_iter()
            .map(|(_, p)| {
                let s = p.as_tcp().unwrap();
                (s.seq.0, s.ack.0)
            })
            .collect();
        // seq_add oracle: (2^32 - 2) + 3 = 1 mod 2^32; 10 - 20 = 2^32 - 10.
        assert_eq!(got, vec![(1, u32::MAX - 9), (8, 0)]);
    }

    #[test]
    fn every_ingress_is_mirrored_once_release_is_not() {
        let mut sw = Switch::new();
        let q = QueueId(1);
        sw.install_rule(rule(1, 10, vec![FlowAction::Buffer(q)])).unwrap();
        sw.ingress(tcp(1, 0), 1);
        sw.ingress(tcp(2, 0), 1);
        sw.remove_rule(Cookie(1)).unwrap();
        sw.release_buffer(q, None).unwrap();
        assert_eq!(sw.stats().mirrored, 2);
    }

    #[test]
    fn duplicate_cookie_rejected() {
        let mut sw = Switch::new();
        sw.install_rule(rule(1, 1, vec![FlowAction::Drop])).unwrap();
        assert_eq!(
            sw.install_rule(rule(1, 2, vec![FlowAction::Drop])),
            Err(SwitchError::DuplicateCookie(Cookie(1)))
        );
    }
}
