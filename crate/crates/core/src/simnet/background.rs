use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netcore::Micros;
use crate::simnet::rng::{stream, RngStreams};

/// Periodic echo load used to keep the controller busy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundLoadSpec {
    pub n_hosts: u32,
    pub procs_per_host: u32,
    #[serde(default = "default_msg_interval")]
    pub msg_interval_us: Micros,
    /// First requests are spread uniformly over `[0, start_spread_us)`.
    #[serde(default = "default_spread")]
    pub start_spread_us: Micros,
}

fn default_msg_interval() -> Micros {
    1_000_000
}

fn default_spread() -> Micros {
    10_000
}

impl BackgroundLoadSpec {
    pub fn new(n_hosts: u32, procs_per_host: u32) -> Self {
        BackgroundLoadSpec {
            n_hosts,
            procs_per_host,
            msg_interval_us: default_msg_interval(),
            start_spread_us: default_spread(),
        }
    }

    pub fn total_flows(&self) -> usize {
        self.n_hosts as usize * self.procs_per_host as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowId(pub u32);

/// Who answers a background flow's echo requests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EchoTarget {
    /// Another background host, by index.
    Peer(usize),
    /// A single background host has no peer; it probes the protected server.
    Server,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackgroundFlow {
    pub id: FlowId,
    pub src_host: usize,
    pub target: EchoTarget,
    pub ident: u16,
    pub first_send: Micros,
    pub interval: Micros,
}

/// Lay out `n_hosts * procs_per_host` echo flows. Each flow is distinct by
/// (source, target, identifier), so each one misses the flow table once.
pub fn spawn_background_load(spec: &BackgroundLoadSpec, streams: &RngStreams) -> Vec<BackgroundFlow> {
    let mut rng = streams.stream(stream::BACKGROUND);
    let n = spec.n_hosts as usize;
    let mut flows = Vec::with_capacity(spec.total_flows());
    for host in 0..n {
        for proc_ in 0..spec.procs_per_host as usize {
            let target = if n > 1 {
                EchoTarget::Peer((host + 1 + proc_ % (n - 1)) % n)
            } else {
                EchoTarget::Server
            };
            let first_send = if spec.start_spread_us > 0 {
                rng.random_range(0..spec.start_spread_us)
            } else {
                0
            };
            flows.push(BackgroundFlow {
                id: FlowId(flows.len() as u32),
                src_host: host,
                target,
                ident: (proc_ as u16).wrapping_add(1),
                first_send,
                interval: spec.msg_interval_us.max(1),
            });
        }
    }
    flows
}
