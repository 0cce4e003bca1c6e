use std::collections::HashMap;
use std::net::Ipv4Addr;

use crate::netcore::{HostAddr, Packet, PortId, Proto, TcpFlags};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cookie(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueueId(pub u32);

/// Match predicates. `None` matches anything.
///
/// `in_port` and `proto` go beyond a plain five-tuple: a honey server that
/// carries the victim's exact addresses is only distinguishable by the port
/// it hangs off.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct FlowMatch {
    pub in_port: Option<PortId>,
    pub proto: Option<Proto>,
    pub src_ip: Option<Ipv4Addr>,
    pub dst_ip: Option<Ipv4Addr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    /// Segment must carry at least these flags.
    pub flags: Option<TcpFlags>,
}

impl FlowMatch {
    pub fn any() -> Self {
        Self::default()
    }

    /// Exact match on one direction of a flow arriving on `in_port`.
    pub fn exact(in_port: PortId, pkt: &Packet) -> Self {
        FlowMatch {
            in_port: Some(in_port),
            proto: Some(pkt.proto()),
            src_ip: Some(pkt.src().ip),
            dst_ip: Some(pkt.dst().ip),
            src_port: Some(pkt.sport()),
            dst_port: Some(pkt.dport()),
            flags: None,
        }
    }

    pub fn matches(&self, pkt: &Packet, in_port: PortId) -> bool {
        fn ok<T: PartialEq>(p: &Option<T>, v: T) -> bool {
            p.as_ref().is_none_or(|x| *x == v)
        }
        if !(ok(&self.in_port, in_port)
            && ok(&self.proto, pkt.proto())
            && ok(&self.src_ip, pkt.src().ip)
            && ok(&self.dst_ip, pkt.dst().ip)
            && ok(&self.src_port, pkt.sport())
            && ok(&self.dst_port, pkt.dport()))
        {
            return false;
        }
        match (self.flags, pkt) {
            (None, _) => true,
            (Some(f), Packet::Tcp(seg)) => seg.flags.contains(f),
            (Some(_), Packet::Echo(_)) => false,
        }
    }

    fn index_key(&self) -> Option<ExactKey> {
        Some(ExactKey {
            in_port: self.in_port,
            proto: self.proto?,
            src_ip: self.src_ip?,
            dst_ip: self.dst_ip?,
            src_port: self.src_port?,
            dst_port: self.dst_port?,
        })
    }
}

/// Seq/ack deltas (applied modulo 2^32) and optional address substitution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Rewrite {
    pub seq_delta: u32,
    pub ack_delta: u32,
    pub new_dst: Option<HostAddr>,
    pub new_src: Option<HostAddr>,
}

impl Rewrite {
    pub fn is_identity(&self) -> bool {
        *self == Rewrite::default()
    }

    pub fn apply(&self, pkt: &mut Packet) {
        if let Packet::Tcp(seg) = pkt {
            seg.seq = seg.seq.add(self.seq_delta);
            seg.ack = seg.ack.add(self.ack_delta);
        }
        if let Some(a) = self.new_dst {
            pkt.set_dst(a);
        }
        if let Some(a) = self.new_src {
            pkt.set_src(a);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlowAction {
    Output(PortId),
    Rewrite(Rewrite),
    Buffer(QueueId),
    Drop,
    PacketIn,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowRule {
    pub priority: u16,
    pub matcher: FlowMatch,
    pub actions: Vec<FlowAction>,
    pub cookie: Cookie,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct ExactKey {
    in_port: Option<PortId>,
    proto: Proto,
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
}

struct Entry {
    rule: FlowRule,
    order: u64,
}

/// Priority-ordered rule table. Highest priority wins; equal priorities go
/// to the earliest installed rule.
///
/// Rules that pin the full five-tuple are indexed by hash so a table holding
/// thousands of reactive flow entries still looks up in constant time.
#[derive(Default)]
pub struct FlowTable {
    entries: HashMap<Cookie, Entry>,
    exact: HashMap<ExactKey, Vec<Cookie>>,
    wildcard: Vec<Cookie>,
    next_order: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, cookie: Cookie) -> bool {
        self.entries.contains_key(&cookie)
    }

    pub fn get(&self, cookie: Cookie) -> Option<&FlowRule> {
        self.entries.get(&cookie).map(|e| &e.rule)
    }

    /// Returns false (and leaves the table alone) if the cookie is taken.
    pub(crate) fn insert(&mut self, rule: FlowRule) -> bool {
        if self.entries.contains_key(&rule.cookie) {
            return false;
        }
        let cookie = rule.cookie;
        match rule.matcher.index_key() {
            Some(k) => self.exact.entry(k).or_default().push(cookie),
            None => self.wildcard.push(cookie),
        }
        self.entries.insert(
            cookie,
            Entry {
                rule,
                order: self.next_order,
            },
        );
        self.next_order += 1;
        true
    }

    pub(crate) fn remove(&mut self, cookie: Cookie) -> Option<FlowRule> {
        let entry = self.entries.remove(&cookie)?;
        match entry.rule.matcher.index_key() {
            Some(k) => {
                if let Some(v) = self.exact.get_mut(&k) {
                    v.retain(|c| *c != cookie);
                    if v.is_empty() {
                        self.exact.remove(&k);
                    }
                }
            }
            None => self.wildcard.retain(|c| *c != cookie),
        }
        Some(entry.rule)
    }

    /// Best matching rule for a packet arriving on `in_port`.
    pub fn lookup(&self, pkt: &Packet, in_port: PortId) -> Option<&FlowRule> {
        let base = ExactKey {
            in_port: Some(in_port),
            proto: pkt.proto(),
            src_ip: pkt.src().ip,
            dst_ip: pkt.dst().ip,
            src_port: pkt.sport(),
            dst_port: pkt.dport(),
        };
        let unpinned = ExactKey { in_port: None, ..base };
        let candidates = self
            .exact
            .get(&base)
            .into_iter()
            .chain(self.exact.get(&unpinned))
            .flatten()
            .chain(self.wildcard.iter());

        let mut best: Option<&Entry> = None;
        for cookie in candidates {
            let e = &self.entries[cookie];
            if !e.rule.matcher.matches(pkt, in_port) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    e.rule.priority > b.rule.priority || (e.rule.priority == b.rule.priority && e.order < b.order)
                }
            };
            if better {
                best = Some(e);
            }
        }
        best.map(|e| &e.rule)
    }
}
