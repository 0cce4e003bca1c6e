//! TCP-lite endpoints and the deterministic server application.

mod app;
mod conn;

pub use app::{respond, ServerApp};
pub use conn::{ConnectionState, EndpointError, IssPolicy, SegmentOutcome, TcpState};
