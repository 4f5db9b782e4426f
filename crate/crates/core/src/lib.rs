//! Discrete-event simulator for multi-hop CSMA/CA ad hoc networks whose
//! nodes use MIMO link abstractions: Alamouti transmit diversity, V-BLAST
//! spatial multiplexing, and an SINR-driven three-mode switching MAC.
//!
//! The crate is organized bottom-up:
//!
//! - [`channel`]: two-ray path loss and per-frame Rayleigh power matrices.
//! - [`phy`]: per-scheme SINR, BER models, chunked PER, reception and CCA.
//! - [`mac`]: 802.11 DCF with MIMO-aware duration fields and mode selection.
//! - [`engine`]: the event loop wiring saturated sources, MAC, PHY and channel.
//! - [`topology`]: paired-node terrain layouts classified by sensing degree.
//! - [`metrics`]: throughput, delay, Jain fairness and confidence intervals.
//! - [`mc_oracle`]: symbol-level Monte Carlo for V-BLAST and Alamouti, used to
//!   validate the link abstraction and calibrate the V-BLAST BER coefficients.
//! - [`experiment`]: config-driven sweeps, presets and result directories.

use std::fmt;

pub mod channel;
pub mod engine;
pub mod experiment;
pub mod mac;
pub mod mc_oracle;
pub mod metrics;
pub mod phy;
pub mod topology;
pub mod units;

/// Node identifier; equals the node's index in its topology.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of one transmitted frame (one over-the-air transmission).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(pub u64);
