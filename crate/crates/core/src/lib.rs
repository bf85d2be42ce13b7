//! Hybrid in-situ / in-transit analysis coupling.
//!
//! Simulation partitions hand mesh data to a [`gateway::Gateway`] through a
//! fixed three-call surface. Depending on configuration the gateway renders
//! locally, ships the full mesh, or reduces it in-line and ships only the
//! reduced mesh over a throttled [`transport`]. A receiver replays the
//! stream and renders with [`viz`]. [`bench`] drives whole experiments and
//! reports per-stage timings.

pub mod node;
pub mod minisim;
pub mod reduce;
pub mod transport;
pub mod viz;
pub mod gateway;
pub mod bench;
