//! Programmable software switch: flow table, mirror tap, packet-in on miss,
//! seq/ack rewriting and buffering queues.

mod flow;
mod switch;

pub use flow::{Cookie, FlowAction, FlowMatch, FlowRule, FlowTable, QueueId, Rewrite};
pub use switch::{BufferId, Ingress, PacketInReason, Switch, SwitchCommand, SwitchEffect, SwitchError, SwitchStats};
