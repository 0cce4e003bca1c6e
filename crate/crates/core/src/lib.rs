//! Deterministic simulation of IDS-triggered, stealthy mid-connection TCP
//! redirection to on-demand honey-server clones.

pub mod clonemgr;
pub mod controller;
pub mod endpoint;
pub mod harness;
pub mod ids;
pub mod netcore;
pub mod simnet;
pub mod vswitch;
