//! Deterministic discrete-event core and the network run loop.

mod queue;
mod rng;
mod sim;
mod time;

pub use queue::{Event, EventHandle, EventQueue};
pub use rng::{RngFactory, StreamKey};
pub use sim::{run, run_traced, run_with_model, ConfigError, SimConfig, TraceEvent, TraceRecord};
pub use time::SimTime;
