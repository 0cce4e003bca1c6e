//! Address, segment and sequence-arithmetic primitives.
//!
//! Everything here is a plain value type. Sequence numbers live in the
//! 32-bit circular space used by TCP; all arithmetic wraps and ordering is
//! the usual half-window comparison.

use std::fmt;
use std::net::Ipv4Addr;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

/// Simulated time in integer microseconds.
pub type Micros = u64;

/// Switch port number.
pub type PortId = u16;

/// 48-bit link-layer address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    /// Locally administered address derived from a small host number.
    pub fn local(n: u32) -> Self {
        let b = n.to_be_bytes();
        MacAddr([0x02, 0x00, b[0], b[1], b[2], b[3]])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }
}

/// Network identity of a host. Two hosts present the same identity iff both
/// the IP and the MAC are equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HostAddr {
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
}

impl HostAddr {
    pub fn new(ip: Ipv4Addr, mac: MacAddr) -> Self {
        Self { ip, mac }
    }
}

impl fmt::Display for HostAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.ip, self.mac)
    }
}

/// A TCP sequence number. Arithmetic is modulo 2^32.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SeqNum(pub u32);

impl SeqNum {
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, delta: u32) -> SeqNum {
        seq_add(self, delta)
    }

    /// Signed distance `self - other` interpreted in the half window.
    pub fn diff(self, other: SeqNum) -> i32 {
        self.0.wrapping_sub(other.0) as i32
    }
}

impl fmt::Display for SeqNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `(s + delta) mod 2^32`.
pub fn seq_add(s: SeqNum, delta: u32) -> SeqNum {
    SeqNum(s.0.wrapping_add(delta))
}

/// True iff `a` strictly precedes `b` in the 2^31-windowed circular order.
pub fn seq_lt(a: SeqNum, b: SeqNum) -> bool {
    (a.0.wrapping_sub(b.0) as i32) < 0
}

/// `a <= b` in the windowed order.
pub fn seq_le(a: SeqNum, b: SeqNum) -> bool {
    a == b || seq_lt(a, b)
}

bitflags! {
    #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const PSH = 0x08;
        const ACK = 0x10;
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Snort letter order.
        for (flag, c) in [
            (TcpFlags::FIN, 'F'),
            (TcpFlags::SYN, 'S'),
            (TcpFlags::RST, 'R'),
            (TcpFlags::PSH, 'P'),
            (TcpFlags::ACK, 'A'),
        ] {
            if self.contains(flag) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

/// A simulated TCP/IP segment. No checksum and no options.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TcpSegment {
    pub src: HostAddr,
    pub dst: HostAddr,
    pub sport: u16,
    pub dport: u16,
    pub seq: SeqNum,
    pub ack: SeqNum,
    pub flags: TcpFlags,
    pub payload: Vec<u8>,
    pub ts_sent: Micros,
}

impl TcpSegment {
    /// Segment with an empty payload.
    #[allow(clippy::too_many_arguments)]
    pub fn control(
        src: HostAddr,
        dst: HostAddr,
        sport: u16,
        dport: u16,
        seq: SeqNum,
        ack: SeqNum,
        flags: TcpFlags,
        ts_sent: Micros,
    ) -> Self {
        debug_assert!(!flags.contains(TcpFlags::SYN | TcpFlags::FIN));
        TcpSegment {
            src,
            dst,
            sport,
            dport,
            seq,
            ack,
            flags,
            payload: Vec::new(),
            ts_sent,
        }
    }

    /// False for the one structurally invalid combination, SYN together with FIN.
    pub fn is_well_formed(&self) -> bool {
        !self.flags.contains(TcpFlags::SYN | TcpFlags::FIN)
    }

    pub fn span(&self) -> u32 {
        seg_span(self)
    }

    /// Sequence number just past this segment.
    pub fn end_seq(&self) -> SeqNum {
        self.seq.add(self.span())
    }

    pub fn has(&self, flags: TcpFlags) -> bool {
        self.flags.contains(flags)
    }

    /// True for a segment carrying application bytes with PSH and ACK set.
    pub fn is_data(&self) -> bool {
        !self.payload.is_empty() && self.flags.contains(TcpFlags::PSH | TcpFlags::ACK)
    }
}

/// Sequence units consumed by a segment: payload length, plus one for SYN and one for FIN.
pub fn seg_span(seg: &TcpSegment) -> u32 {
    let mut n = seg.payload.len() as u32;
    if seg.flags.contains(TcpFlags::SYN) {
        n += 1;
    }
    if seg.flags.contains(TcpFlags::FIN) {
        n += 1;
    }
    n
}

/// ICMP-echo-like probe used for background load. Carries no TCP state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EchoPacket {
    pub src: HostAddr,
    pub dst: HostAddr,
    pub ident: u16,
    pub seqno: u32,
    pub is_reply: bool,
    pub ts_sent: Micros,
}

/// Anything that crosses the simulated data plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    Tcp(TcpSegment),
    Echo(EchoPacket),
}

/// Transport protocol tag used by flow matching.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Echo,
}

impl Packet {
    pub fn proto(&self) -> Proto {
        match self {
            Packet::Tcp(_) => Proto::Tcp,
            Packet::Echo(_) => Proto::Echo,
        }
    }

    pub fn src(&self) -> HostAddr {
        match self {
            Packet::Tcp(s) => s.src,
            Packet::Echo(e) => e.src,
        }
    }

    pub fn dst(&self) -> HostAddr {
        match self {
            Packet::Tcp(s) => s.dst,
            Packet::Echo(e) => e.dst,
        }
    }

    /// Source port; echo requests carry their identifier here.
    pub fn sport(&self) -> u16 {
        match self {
            Packet::Tcp(s) => s.sport,
            Packet::Echo(e) if e.is_reply => 0,
            Packet::Echo(e) => e.ident,
        }
    }

    /// Destination port; echo replies carry their identifier here.
    pub fn dport(&self) -> u16 {
        match self {
            Packet::Tcp(s) => s.dport,
            Packet::Echo(e) if e.is_reply => e.ident,
            Packet::Echo(_) => 0,
        }
    }

    pub fn as_tcp(&self) -> Option<&TcpSegment> {
        match self {
            Packet::Tcp(s) => Some(s),
            Packet::Echo(_) => None,
        }
    }

    pub fn set_src(&mut self, a: HostAddr) {
        match self {
            Packet::Tcp(s) => s.src = a,
            Packet::Echo(e) => e.src = a,
        }
    }

    pub fn set_dst(&mut self, a: HostAddr) {
        match self {
            Packet::Tcp(s) => s.dst = a,
            Packet::Echo(e) => e.dst = a,
        }
    }
}

/// Identifies one TCP connection, oriented client to server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnKey {
    pub client_ip: Ipv4Addr,
    pub client_port: u16,
    pub server_ip: Ipv4Addr,
    pub server_port: u16,
}

impl ConnKey {
    /// Key for a segment travelling from client to server.
    pub fn from_client_segment(seg: &TcpSegment) -> Self {
        ConnKey {
            client_ip: seg.src.ip,
            client_port: seg.sport,
            server_ip: seg.dst.ip,
            server_port: seg.dport,
        }
    }

    /// Key for a segment travelling from server to client.
    pub fn from_server_segment(seg: &TcpSegment) -> Self {
        ConnKey {
            client_ip: seg.dst.ip,
            client_port: seg.dport,
            server_ip: seg.src.ip,
            server_port: seg.sport,
        }
    }
}

impl fmt::Display for ConnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}->{}:{}",
            self.client_ip, self.client_port, self.server_ip, self.server_port
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn addr(n: u8) -> HostAddr {
        HostAddr::new(Ipv4Addr::new(10, 0, 0, n), MacAddr::local(n as u32))
    }

    fn seg(flags: TcpFlags, payload: &[u8]) -> TcpSegment {
        TcpSegment {
            src: addr(1),
            dst: addr(2),
            sport: 40000,
            dport: 80,
            seq: SeqNum(0),
            ack: SeqNum(0),
            flags,
            payload: payload.to_vec(),
            ts_sent: 0,
        }
    }

    // Reference: exact integer arithmetic in u64, reduced modulo 2^32.
    fn add_oracle(s: u32, d: u32) -> u32 {
        ((s as u64 + d as u64) % (1u64 << 32)) as u32
    }

    #[test]
    fn seq_add_examples() {
        assert_eq!(seq_add(SeqNum(1000), 500), SeqNum(1500));
        assert_eq!(seq_add(SeqNum(77), 0), SeqNum(77));
        let near_top = u32::MAX - 9; // 2^32 - 10
        assert_eq!(add_oracle(near_top, 20), 10);
        assert_eq!(seq_add(SeqNum(near_top), 20), SeqNum(10));
    }

    #[test]
    fn seq_lt_examples() {
        assert!(seq_lt(SeqNum(5), SeqNum(10)));
        assert!(!seq_lt(SeqNum(42), SeqNum(42)));
        assert!(seq_lt(SeqNum(u32::MAX - 4), SeqNum(3)));
        assert!(!seq_lt(SeqNum(3), SeqNum(u32::MAX - 4)));
    }

    // Windowed-ordering oracle: a < b iff b is reachable from a by adding a
    // positive offset smaller than 2^31. Enumerate small offsets around the wrap.
    #[test]
    fn seq_lt_matches_offset_enumeration_near_wrap() {
        let base = u32::MAX - 8;
        for i in 0..20u32 {
            for j in 0..20u32 {
                let a = base.wrapping_add(i);
                let b = base.wrapping_add(j);
                let expected = j > i;
                assert_eq!(seq_lt(SeqNum(a), SeqNum(b)), expected, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn seg_span_examples() {
        assert_eq!(seg_span(&seg(TcpFlags::ACK, b"")), 0);
        assert_eq!(seg_span(&seg(TcpFlags::SYN, b"")), 1);
        assert_eq!(seg_span(&seg(TcpFlags::PSH | TcpFlags::ACK, b"1234567")), 7);
        assert_eq!(seg_span(&seg(TcpFlags::FIN | TcpFlags::ACK, b"ab")), 3);
    }

    #[test]
    fn host_identity_requires_ip_and_mac() {
        let a = addr(1);
        let mut b = a;
        assert_eq!(a, b);
        b.mac = MacAddr::local(99);
        assert_ne!(a, b);
    }

    #[test]
    fn syn_fin_is_malformed() {
        let mut s = seg(TcpFlags::SYN, b"");
        assert!(s.is_well_formed());
        s.flags |= TcpFlags::FIN;
        assert!(!s.is_well_formed());
    }

    proptest! {
        #[test]
        fn seq_add_is_associative(s: u32, a: u32, b: u32) {
            let lhs = seq_add(seq_add(SeqNum(s), a), b);
            let rhs = seq_add(SeqNum(s), a.wrapping_add(b));
            prop_assert_eq!(lhs, rhs);
            prop_assert_eq!(lhs.0, add_oracle(add_oracle(s, a), b));
        }

        #[test]
        fn seq_lt_is_strict_order_in_window(base: u32, x in 0u32..(1 << 30), y in 0u32..(1 << 30), z in 0u32..(1 << 30)) {
            let (a, b, c) = (SeqNum(base.wrapping_add(x)), SeqNum(base.wrapping_add(y)), SeqNum(base.wrapping_add(z)));
            prop_assert!(!seq_lt(a, a));
            prop_assert!(!(seq_lt(a, b) && seq_lt(b, a)));
            if seq_lt(a, b) && seq_lt(b, c) {
                prop_assert!(seq_lt(a, c));
            }
            prop_assert_eq!(seq_lt(a, b), x < y);
        }
    }
}
