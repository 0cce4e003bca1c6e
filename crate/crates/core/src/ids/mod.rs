//! Detection rules in a small Snort dialect, threshold counting, and the
//! packet-count trigger used by the experiments.

mod engine;
mod rule;

pub use engine::{rule_matches, Alert, Detector, NthPacketTrigger, RuleEngine, NTH_PACKET_SID};
pub use rule::{parse_rule, parse_ruleset, AddrSpec, IdsRule, ParseError, PortSpec, RulesetError, Threshold};
