//! MIMO link abstraction.
//!
//! Each scheme is reduced to an effective SINR computed from received-power
//! matrices; a BER curve maps SINR to bit errors and receptions are scored
//! chunk by chunk, where a chunk is an interval of constant interference.

mod ber;
mod chunk;
mod rx;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::PowerMatrix;
use crate::units::dbm_to_watts;

pub use ber::{dbpsk_ber, first_step_ber, AtTable, BerModel, CalibrationError};
pub use chunk::{bits_in_interval, chunk_timeline, packet_error_rate, Chunk, ChunkSpan, Overlap, RateSegment};
pub use rx::{Arrival, DropCause, Receiver, RxOutcome};

/// Transmission scheme of one frame.
///
/// `n` is the receive antenna count the scheme was configured for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MimoMode {
    Siso,
    Alamouti { n: u8 },
    Vblast { m: u8, n: u8 },
}

impl MimoMode {
    pub fn tx_antennas(self) -> usize {
        match self {
            MimoMode::Siso => 1,
            MimoMode::Alamouti { .. } => 2,
            MimoMode::Vblast { m, .. } => m as usize,
        }
    }

    /// Parallel streams; scales the payload bit rate.
    pub fn streams(self) -> usize {
        match self {
            MimoMode::Vblast { m, .. } => m as usize,
            _ => 1,
        }
    }

    pub fn validate(self) -> Result<(), String> {
        match self {
            MimoMode::Siso => Ok(()),
            MimoMode::Alamouti { n } if n >= 1 => Ok(()),
            MimoMode::Vblast { m, n } if m >= 1 && m <= n => Ok(()),
            other => Err(format!("invalid MIMO mode {other}")),
        }
    }
}

impl fmt::Display for MimoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MimoMode::Siso => write!(f, "SISO"),
            MimoMode::Alamouti { n } => write!(f, "ALAMOUTI-2x{n}"),
            MimoMode::Vblast { m, n } => write!(f, "VBLAST-{m}x{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CcaMethod {
    Sum,
    Average,
}

impl fmt::Display for CcaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CcaMethod::Sum => "SUM",
            CcaMethod::Average => "AVERAGE",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcaState {
    Idle,
    Busy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhyParams {
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub bit_rate_bps: f64,
    pub ed_threshold_dbm: f64,
    pub cca_threshold_dbm: f64,
    pub cca_method: CcaMethod,
    /// Multiplies chunk SINR before the BER curve (DSSS despreading,
    /// bandwidth over bit rate). 1 disables it.
    pub despreading_gain: f64,
}

impl Default for PhyParams {
    fn default() -> Self {
        PhyParams {
            bandwidth_hz: 22e6,
            noise_figure_db: 7.0,
            bit_rate_bps: 1e6,
            ed_threshold_dbm: -73.8764,
            cca_threshold_dbm: -80.9201,
            cca_method: CcaMethod::Average,
            despreading_gain: 22.0,
        }
    }
}

impl PhyParams {
    pub const THERMAL_FLOOR_DBM_HZ: f64 = -174.0;

    pub fn noise_power_dbm(&self) -> f64 {
        Self::THERMAL_FLOOR_DBM_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm())
    }

    pub fn ed_threshold_w(&self) -> f64 {
        dbm_to_watts(self.ed_threshold_dbm)
    }

    pub fn cca_threshold_w(&self) -> f64 {
        dbm_to_watts(self.cca_threshold_dbm)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.bandwidth_hz > 0.0 && self.bit_rate_bps > 0.0) {
            return Err("bandwidth and bit rate must be positive".into());
        }
        if self.ed_threshold_dbm <= self.cca_threshold_dbm {
            return Err("ED threshold must exceed the CCA threshold".into());
        }
        if !(self.despreading_gain >= 1.0) {
            return Err("despreading gain must be >= 1".into());
        }
        Ok(())
    }
}

/// Alamouti post-combining SINR. The per-antenna power split inside each
/// matrix realizes the `E_s/2` factor on both signal and interference.
pub fn sinr_alamouti<'a>(
    signal: &PowerMatrix,
    interferers: impl IntoIterator<Item = &'a PowerMatrix>,
    noise_w: f64,
) -> f64 {
    let mai: f64 = interferers.into_iter().map(PowerMatrix::frobenius_power).sum();
    signal.frobenius_power() / (noise_w + mai)
}

/// Branch-averaged before-processing SINR, the input of the V-BLAST BER
/// model.
pub fn sinr_vblast<'a>(
    signal: &PowerMatrix,
    interferers: impl IntoIterator<Item = &'a PowerMatrix>,
    noise_w: f64,
    n_rx: usize,
) -> f64 {
    let n = n_rx as f64;
    let mai: f64 = interferers.into_iter().map(PowerMatrix::frobenius_power).sum();
    (signal.frobenius_power() / n) / (noise_w + mai / n)
}

pub fn sinr_siso(signal_w: f64, interferers_w: impl IntoIterator<Item = f64>, noise_w: f64) -> f64 {
    signal_w / (noise_w + interferers_w.into_iter().sum::<f64>())
}

/// Only the listed `ambient` arrivals contribute; `n_rx` is this node's
/// antenna count.
pub fn cca_state<'a>(
    ambient: impl IntoIterator<Item = &'a PowerMatrix>,
    n_rx: usize,
    params: &PhyParams,
) -> CcaState {
    let total: f64 = ambient.into_iter().map(PowerMatrix::frobenius_power).sum();
    let measured = match params.cca_method {
        CcaMethod::Sum => total,
        CcaMethod::Average => total / n_rx as f64,
    };
    // Relative slack so a transmitter placed exactly at the sensing range
    // reads busy despite rounding.
    if measured >= params.cca_threshold_w() * (1.0 - 1e-9) {
        CcaState::Busy
    } else {
        CcaState::Idle
    }
}
