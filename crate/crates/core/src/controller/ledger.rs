use std::collections::{BTreeMap, HashMap};

use crate::netcore::{seq_lt, ConnKey, HostAddr, Packet, PortId, SeqNum, TcpFlags, TcpSegment};

struct LoggedPayload {
    serial: u64,
    bytes: Vec<u8>,
}

/// Everything the controller knows about one client connection to the
/// protected service, built from mirrored traffic.
pub struct TrackedConn {
    pub key: ConnKey,
    pub client: HostAddr,
    pub server: HostAddr,
    pub client_iss: SeqNum,
    pub server_isn: Option<SeqNum>,
    pub last_client_seq: SeqNum,
    pub last_client_ack: Option<SeqNum>,
    /// Client payloads by stream offset from `client_iss + 1`.
    log: BTreeMap<u32, LoggedPayload>,
    /// Switch port of the server whose output currently reaches the client.
    pub active_port: PortId,
    /// Added to that server's seq numbers on the way to the client.
    pub active_delta: u32,
    /// Next seq the client expects from "the server", in client-visible space.
    pub visible_next: SeqNum,
    /// Highest ack the active server has sent.
    pub active_acked: SeqNum,
    /// While set, server-side traffic is not folded into the fields above.
    pub frozen: bool,
}

impl TrackedConn {
    /// Seq of the first client payload byte.
    pub fn base(&self) -> SeqNum {
        self.client_iss.add(1)
    }

    pub fn established(&self) -> bool {
        self.server_isn.is_some()
    }

    /// End of the contiguous client stream made of segments that went through
    /// the switch before `serial`.
    pub fn forwarded_end(&self, serial: u64) -> SeqNum {
        let mut end = 0u32;
        for (off, p) in &self.log {
            if *off != end || p.serial >= serial {
                break;
            }
            end += p.bytes.len() as u32;
        }
        self.base().add(end)
    }

    /// End of everything logged so far (contiguous prefix).
    pub fn logged_end(&self) -> SeqNum {
        self.forwarded_end(u64::MAX)
    }

    /// Payloads wholly inside `[from, to)`, in stream order.
    pub fn payloads_between(&self, from: SeqNum, to: SeqNum) -> Vec<(SeqNum, Vec<u8>)> {
        let lo = from.diff(self.base()) as u32;
        let hi = to.diff(self.base()) as u32;
        self.log
            .range(lo..)
            .take_while(|(off, p)| *off + p.bytes.len() as u32 <= hi)
            .map(|(off, p)| (self.base().add(*off), p.bytes.clone()))
            .collect()
    }

    pub fn payload_count(&self) -> usize {
        self.log.len()
    }

    /// Make `port` the client-facing server from now on.
    pub fn switch_active(&mut self, port: PortId, delta: u32, acked: SeqNum) {
        self.active_port = port;
        self.active_delta = delta;
        self.active_acked = acked;
        self.frozen = false;
    }

    fn observe_client(&mut self, seg: &TcpSegment, serial: u64) {
        self.last_client_seq = seg.seq;
        if seg.has(TcpFlags::ACK) {
            self.last_client_ack = Some(seg.ack);
        }
        if !seg.payload.is_empty() {
            let off = seg.seq.diff(self.base()) as u32;
            self.log.entry(off).or_insert(LoggedPayload {
                serial,
                bytes: seg.payload.clone(),
            });
        }
    }

    fn observe_server(&mut self, seg: &TcpSegment, in_port: PortId) {
        if seg.has(TcpFlags::SYN) {
            if self.server_isn.is_none() && seg.has(TcpFlags::ACK) {
                self.server_isn = Some(seg.seq);
                self.active_port = in_port;
                self.visible_next = seg.seq.add(1);
                self.active_acked = seg.ack;
            }
            return;
        }
        if self.frozen || in_port != self.active_port || self.server_isn.is_none() {
            return;
        }
        let end = seg.end_seq().add(self.active_delta);
        if seq_lt(self.visible_next, end) {
            self.visible_next = end;
        }
        if seg.has(TcpFlags::ACK) && seq_lt(self.active_acked, seg.ack) {
            self.active_acked = seg.ack;
        }
    }
}

/// Per-connection records for traffic toward one protected service.
pub struct ConnLedger {
    server_ip: std::net::Ipv4Addr,
    server_port: u16,
    aliases: Vec<std::net::Ipv4Addr>,
    conns: HashMap<ConnKey, TrackedConn>,
}

impl ConnLedger {
    pub fn new(server: HostAddr, server_port: u16) -> Self {
        ConnLedger {
            server_ip: server.ip,
            server_port,
            aliases: Vec::new(),
            conns: HashMap::new(),
        }
    }

    /// Treat segments from `ip` on the service port as coming from the
    /// protected server.
    pub fn add_alias(&mut self, ip: std::net::Ipv4Addr) {
        self.aliases.push(ip);
    }

    pub fn get(&self, key: &ConnKey) -> Option<&TrackedConn> {
        self.conns.get(key)
    }

    pub fn get_mut(&mut self, key: &ConnKey) -> Option<&mut TrackedConn> {
        self.conns.get_mut(key)
    }

    pub fn len(&self) -> usize {
        self.conns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conns.is_empty()
    }

    /// Fold one mirrored packet in. Returns the connection it belonged to.
    pub fn observe(&mut self, pkt: &Packet, in_port: PortId, serial: u64) -> Option<ConnKey> {
        let Packet::Tcp(seg) = pkt else {
            return None;
        };
        if seg.dst.ip == self.server_ip && seg.dport == self.server_port {
            let key = ConnKey::from_client_segment(seg);
            if seg.has(TcpFlags::SYN) && !seg.has(TcpFlags::ACK) {
                // A fresh SYN from a known client restarts the record.
                if self.conns.get(&key).is_some_and(|c| c.client_iss == seg.seq) {
                    return Some(key);
                }
                self.conns.insert(
                    key,
                    TrackedConn {
                        key,
                        client: seg.src,
                        server: seg.dst,
                        client_iss: seg.seq,
                        server_isn: None,
                        last_client_seq: seg.seq,
                        last_client_ack: None,
                        log: BTreeMap::new(),
                        active_port: 0,
                        active_delta: 0,
                        visible_next: SeqNum(0),
                        active_acked: SeqNum(0),
                        frozen: false,
                    },
                );
                return Some(key);
            }
            let c = self.conns.get_mut(&key)?;
            c.observe_client(seg, serial);
            return Some(key);
        }
        if seg.sport == self.server_port && (seg.src.ip == self.server_ip || self.aliases.contains(&seg.src.ip)) {
            let mut key = ConnKey::from_server_segment(seg);
            key.server_ip = self.server_ip;
            let c = self.conns.get_mut(&key)?;
            c.observe_server(seg, in_port);
            return Some(key);
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::MacAddr;
    use std::net::Ipv4Addr;

    fn host(n: u8) -> HostAddr {
        HostAddr::new(Ipv4Addr::new(10, 0, 0, n), MacAddr::local(n as u32))
    }

    fn seg(from_client: bool, seq: u32, ack: u32, flags: TcpFlags, payload: &[u8]) -> Packet {
        let (src, dst, sport, dport) = if from_client {
            (host(1), host(2), 5000, 80)
        } else {
            (host(2), host(1), 80, 5000)
        };
        Packet::Tcp(TcpSegment {
            src,
            dst,
            sport,
            dport,
            seq: SeqNum(seq),
            ack: SeqNum(ack),
            flags,
            payload: payload.to_vec(),
            ts_sent: 0,
        })
    }

    fn handshake(l: &mut ConnLedger, c_iss: u32, s_isn: u32) -> ConnKey {
        let k = l.observe(&seg(true, c_iss, 0, TcpFlags::SYN, b""), 1, 0).unwrap();
        l.observe(
            &seg(false, s_isn, c_iss.wrapping_add(1), TcpFlags::SYN | TcpFlags::ACK, b""),
            2,
            1,
        );
        l.observe(
            &seg(true, c_iss.wrapping_add(1), s_isn.wrapping_add(1), TcpFlags::ACK, b""),
            1,
            2,
        );
        k
    }

    const PA: TcpFlags = TcpFlags::PSH.union(TcpFlags::ACK);

    #[test]
    fn tracks_handshake_and_payloads() {
        let mut l = ConnLedger::new(host(2), 80);
        let k = handshake(&mut l, u32::MAX - 2, 7000);
        l.observe(&seg(true, u32::MAX - 1, 7001, PA, b"abc"), 1, 3);
        l.observe(&seg(true, 1, 7001, PA, b"de"), 1, 4);
        let c = l.get(&k).unwrap();
        assert_eq!(c.server_isn, Some(SeqNum(7000)));
        assert_eq!(c.forwarded_end(4), SeqNum(1));
        assert_eq!(c.forwarded_end(5), SeqNum(3));
        assert_eq!(c.forwarded_end(0), SeqNum(u32::MAX - 1));
        let p = c.payloads_between(SeqNum(u32::MAX - 1), SeqNum(3));
        assert_eq!(
            p,
            vec![(SeqNum(u32::MAX - 1), b"abc".to_vec()), (SeqNum(1), b"de".to_vec())]
        );
        assert_eq!(c.payloads_between(SeqNum(1), SeqNum(3)).len(), 1);
        assert!(c.payloads_between(SeqNum(3), SeqNum(3)).is_empty());
    }

    #[test]
    fn server_side_follows_active_port_and_delta() {
        let mut l = ConnLedger::new(host(2), 80);
        let k = handshake(&mut l, 100, 7000);
        l.observe(&seg(true, 101, 7001, PA, b"req"), 1, 3);
        l.observe(&seg(false, 7001, 104, PA, b"resp"), 2, 4);
        assert_eq!(l.get(&k).unwrap().visible_next, SeqNum(7005));
        assert_eq!(l.get(&k).unwrap().active_acked, SeqNum(104));
        // Traffic from another port does not count until it becomes active.
        l.observe(&seg(false, 9001, 104, PA, b"zzzzzz"), 3, 5);
        assert_eq!(l.get(&k).unwrap().visible_next, SeqNum(7005));
        l.get_mut(&k)
            .unwrap()
            .switch_active(3, 7005u32.wrapping_sub(9007), SeqNum(104));
        l.observe(&seg(false, 9007, 107, PA, b"xy"), 3, 6);
        let c = l.get(&k).unwrap();
        assert_eq!(c.visible_next, SeqNum(7007));
        assert_eq!(c.active_acked, SeqNum(107));
    }

    #[test]
    fn untracked_traffic_ignored() {
        let mut l = ConnLedger::new(host(2), 80);
        assert!(l.observe(&seg(true, 5, 0, PA, b"x"), 1, 0).is_none());
        assert!(l.is_empty());
    }
}
