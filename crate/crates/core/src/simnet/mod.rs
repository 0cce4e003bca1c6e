//! Deterministic discrete-event machinery: engine, seeded streams, links and
//! background load layout.

mod background;
mod engine;
mod link;
mod rng;

pub use background::{spawn_background_load, BackgroundFlow, BackgroundLoadSpec, EchoTarget, FlowId};
pub use engine::{Engine, EventFn, EventId, LoggedEvent, SimError};
pub use link::{Jitter, Link, LinkModel};
pub use rng::{stream, RngStreams};
