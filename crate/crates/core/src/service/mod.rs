//! Live control service: a render loop streaming to a sink, driven by
//! line-delimited JSON requests over TCP.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ErrorCode, Kind, Reply, Request, Role};
pub use server::{serve, spawn, ServeLimits, ServeSummary, ServerHandle};
pub use session::{RunState, ServiceConfig, ServiceCore, SessionState};
