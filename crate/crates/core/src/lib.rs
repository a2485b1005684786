//! Core of the accident-capture system: simulated sensors, the dual-segment
//! recorder, the RTVDC wire protocol, and the sans-IO state machines for the
//! vehicle agent, the ITS server and the user client.
//!
//! Nothing in this crate touches sockets or wall clocks. Parties consume
//! datagrams and a caller-supplied `now` (milliseconds on a logical clock) and
//! queue [`net::Transmit`]s for whoever owns the transport.

pub mod api;
pub mod container;
pub mod protocol;
pub mod recorder;
pub mod server;
pub mod registry;
pub mod sim;
pub mod net;
pub mod store;
pub mod user;
pub mod vehicle;

/// Milliseconds on the caller's clock.
pub type Millis = u64;
