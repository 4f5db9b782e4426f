//! 802.11 DCF with RTS/CTS, NAV and binary exponential backoff, extended
//! with MIMO-aware duration fields and receiver-driven mode selection.

mod dcf;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::phy::MimoMode;
use crate::NodeId;

pub use dcf::{Dcf, MacAction, MacDrop, MacInput, MacTrace, TimerKind};

/// DCF timing and frame sizes (802.11 DSSS at 1 Mb/s by default).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacParams {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub short_retry_limit: u32,
    pub long_retry_limit: u32,
    pub plcp_us: u64,
    pub bit_rate_bps: f64,
    pub rts_bytes: u64,
    /// Includes the mode byte.
    pub cts_bytes: u64,
    pub ack_bytes: u64,
    pub mac_header_bytes: u64,
    pub payload_bytes: u64,
    pub queue_capacity: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            slot_us: 20,
            sifs_us: 10,
            difs_us: 50,
            cw_min: 31,
            cw_max: 1023,
            short_retry_limit: 7,
            long_retry_limit: 4,
            plcp_us: 192,
            bit_rate_bps: 1e6,
            rts_bytes: 20,
            cts_bytes: 15,
            ack_bytes: 14,
            mac_header_bytes: 28,
            payload_bytes: 1412,
            queue_capacity: 400,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameKind {
    Rts,
    Cts,
    Data,
    Ack,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameKind::Rts => "RTS",
            FrameKind::Cts => "CTS",
            FrameKind::Data => "DATA",
            FrameKind::Ack => "ACK",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub source: NodeId,
    pub destination: NodeId,
    pub duration_us: u64,
    /// CTS only.
    pub mode_byte: Option<u8>,
    /// Scheme used on air; everything but DATA goes out as SISO.
    pub tx_mode: MimoMode,
    pub payload_bits: u64,
    /// Per-source DATA sequence number, echoed by CTS/ACK.
    pub seq: u64,
    /// When the packet entered the source's transmit queue.
    pub enqueued_at: SimTime,
}

impl MacParams {
    pub fn slot(&self) -> SimTime {
        SimTime::from_micros(self.slot_us)
    }

    pub fn sifs(&self) -> SimTime {
        SimTime::from_micros(self.sifs_us)
    }

    pub fn difs(&self) -> SimTime {
        SimTime::from_micros(self.difs_us)
    }

    pub fn payload_bits(&self) -> u64 {
        self.payload_bytes * 8
    }

    fn body_time(&self, bits: u64, streams: usize) -> SimTime {
        let ns = (bits as f64 * 1e9 / (self.bit_rate_bps * streams as f64)).ceil();
        SimTime::from_nanos(ns as u64)
    }

    /// PLCP preamble and header always go at the base rate; the MPDU at
    /// `streams` times the base rate.
    pub fn airtime(&self, kind: FrameKind, mode: MimoMode) -> SimTime {
        let plcp = SimTime::from_micros(self.plcp_us);
        let (bytes, streams) = match kind {
            FrameKind::Rts => (self.rts_bytes, 1),
            FrameKind::Cts => (self.cts_bytes, 1),
            FrameKind::Ack => (self.ack_bytes, 1),
            FrameKind::Data => (self.mac_header_bytes + self.payload_bytes, mode.streams()),
        };
        plcp + self.body_time(bytes * 8, streams)
    }

    /// Time left in the handshake after the frame of `kind` ends, in whole
    /// microseconds rounded up. `mode` is the DATA scheme; RTS always
    /// assumes SISO.
    pub fn duration_field(&self, kind: FrameKind, mode: MimoMode) -> u64 {
        let sifs = self.sifs();
        let ack = self.airtime(FrameKind::Ack, MimoMode::Siso);
        let span = match kind {
            FrameKind::Rts => {
                sifs.mul(3)
                    + self.airtime(FrameKind::Cts, MimoMode::Siso)
                    + self.airtime(FrameKind::Data, MimoMode::Siso)
                    + ack
            }
            FrameKind::Cts => sifs.mul(2) + self.airtime(FrameKind::Data, mode) + ack,
            FrameKind::Data => sifs + ack,
            FrameKind::Ack => SimTime::ZERO,
        };
        span.as_micros_ceil()
    }

    /// Contention window after `failures` consecutive failures.
    pub fn contention_window(&self, failures: u32) -> u32 {
        let cw = (self.cw_min as u64) << failures.min(20);
        cw.min(self.cw_max as u64) as u32
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cw_min == 0 || self.cw_min > self.cw_max {
            return Err("need 0 < cw_min <= cw_max".into());
        }
        if self.bit_rate_bps <= 0.0 {
            return Err("bit rate must be positive".into());
        }
        if self.queue_capacity == 0 {
            return Err("queue capacity must be positive".into());
        }
        if self.sifs_us >= self.difs_us {
            return Err("SIFS must be shorter than DIFS".into());
        }
        Ok(())
    }
}

/// How a network picks the DATA scheme of each handshake.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme")]
pub enum MimoPolicy {
    #[serde(rename = "SISO")]
    Siso,
    #[serde(rename = "ALAMOUTI")]
    Alamouti { n: u8 },
    #[serde(rename = "VBLAST")]
    Vblast { m: u8, n: u8 },
    /// Joint switching with `sinr_max = +inf`.
    #[serde(rename = "HYB-A")]
    HybA { n: u8, sinr_min_db: f64 },
    /// Joint switching with `sinr_min = -inf`.
    #[serde(rename = "HYB-B")]
    HybB { n: u8, sinr_max_db: f64 },
    #[serde(rename = "HYB-C")]
    HybC { n: u8, sinr_min_db: f64, sinr_max_db: f64 },
}

impl MimoPolicy {
    /// Antennas per node.
    pub fn antennas(&self) -> u8 {
        match *self {
            MimoPolicy::Siso => 1,
            MimoPolicy::Alamouti { n }
            | MimoPolicy::Vblast { n, .. }
            | MimoPolicy::HybA { n, .. }
            | MimoPolicy::HybB { n, .. }
            | MimoPolicy::HybC { n, .. } => n,
        }
    }

    /// `(sinr_min, sinr_max)` for the joint policies.
    pub fn thresholds(&self) -> Option<(f64, f64)> {
        match *self {
            MimoPolicy::HybA { sinr_min_db, .. } => Some((sinr_min_db, f64::INFINITY)),
            MimoPolicy::HybB { sinr_max_db, .. } => Some((f64::NEG_INFINITY, sinr_max_db)),
            MimoPolicy::HybC { sinr_min_db, sinr_max_db, .. } => Some((sinr_min_db, sinr_max_db)),
            _ => None,
        }
    }

    pub fn fixed_mode(&self) -> Option<MimoMode> {
        match *self {
            MimoPolicy::Siso => Some(MimoMode::Siso),
            MimoPolicy::Alamouti { n } => Some(MimoMode::Alamouti { n }),
            MimoPolicy::Vblast { m, n } => Some(MimoMode::Vblast { m, n }),
            _ => None,
        }
    }

    /// DATA scheme chosen by the receiver of an RTS.
    pub fn data_mode(&self, mean_sinr_db: f64) -> MimoMode {
        match (self.fixed_mode(), self.thresholds()) {
            (Some(mode), _) => mode,
            (None, Some((lo, hi))) => select_mimo_mode(mean_sinr_db, lo, hi, self.antennas()),
            (None, None) => unreachable!(),
        }
    }

    /// Every scheme a DATA frame may use under this policy.
    pub fn modes(&self) -> Vec<MimoMode> {
        match self.fixed_mode() {
            Some(m) => vec![m],
            None => {
                let n = self.antennas();
                vec![
                    MimoMode::Alamouti { n },
                    MimoMode::Vblast { m: n - 1, n },
                    MimoMode::Vblast { m: n, n },
                ]
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(mode) = self.fixed_mode() {
            return mode.validate();
        }
        if self.antennas() < 3 {
            return Err(format!("{self} needs at least 3 antennas"));
        }
        let (lo, hi) = self.thresholds().unwrap();
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(format!("{self}: need sinr_min < sinr_max"));
        }
        Ok(())
    }
}

impl fmt::Display for MimoPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MimoPolicy::Siso => write!(f, "SISO"),
            MimoPolicy::Alamouti { n } => write!(f, "ALAMOUTI-2x{n}"),
            MimoPolicy::Vblast { m, n } => write!(f, "VBLAST-{m}x{n}"),
            MimoPolicy::HybA { n, .. } => write!(f, "HYB-A-{n}"),
            MimoPolicy::HybB { n, .. } => write!(f, "HYB-B-{n}"),
            MimoPolicy::HybC { n, .. } => write!(f, "HYB-C-{n}"),
        }
    }
}

/// Three-mode switching on the RTS's mean SINR.
pub fn select_mimo_mode(mean_sinr_db: f64, sinr_min_db: f64, sinr_max_db: f64, n: u8) -> MimoMode {
    if mean_sinr_db < sinr_min_db {
        MimoMode::Alamouti { n }
    } else if mean_sinr_db < sinr_max_db {
        MimoMode::Vblast { m: n - 1, n }
    } else {
        MimoMode::Vblast { m: n, n }
    }
}

/// CTS mode byte for an `n`-antenna network, if the mode is one of the
/// three switchable ones.
pub fn encode_mode_byte(mode: MimoMode, n: u8) -> Option<u8> {
    match mode {
        MimoMode::Alamouti { n: k } if k == n => Some(0),
        MimoMode::Vblast { m, n: k } if k == n && m + 1 == n => Some(1),
        MimoMode::Vblast { m, n: k } if k == n && m == n => Some(2),
        _ => None,
    }
}

/// Reserved values decode to `None`.
pub fn decode_mode_byte(byte: u8, n: u8) -> Option<MimoMode> {
    match byte {
        0 => Some(MimoMode::Alamouti { n }),
        1 if n >= 2 => Some(MimoMode::Vblast { m: n - 1, n }),
        2 => Some(MimoMode::Vblast { m: n, n }),
        _ => None,
    }
}

/// Reserved byte sent when the negotiated mode is implied by the
/// single-scheme policy.
pub const MODE_BYTE_FIXED: u8 = 0xff;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn data_airtimes() {
        let p = MacParams::default();
        let siso = p.airtime(FrameKind::Data, MimoMode::Siso);
        assert_eq!(siso, SimTime::from_micros(192 + 224 + 11_296));
        let vb2 = p.airtime(FrameKind::Data, MimoMode::Vblast { m: 2, n: 2 });
        assert_eq!(vb2 - SimTime::from_micros(192), SimTime::from_micros((224 + 11_296) / 2));
        assert_eq!(p.airtime(FrameKind::Data, MimoMode::Alamouti { n: 4 }), siso);
        assert_eq!(p.airtime(FrameKind::Rts, MimoMode::Siso), SimTime::from_micros(352));
        assert_eq!(p.airtime(FrameKind::Cts, MimoMode::Siso), SimTime::from_micros(312));
        assert_eq!(p.airtime(FrameKind::Ack, MimoMode::Siso), SimTime::from_micros(304));
    }

    #[test]
    fn duration_fields_cover_the_rest_of_the_handshake() {
        let p = MacParams::default();
        let vb = MimoMode::Vblast { m: 3, n: 4 };
        assert_eq!(p.duration_field(FrameKind::Ack, vb), 0);
        assert_eq!(p.duration_field(FrameKind::Data, vb), 10 + 304);
        assert_eq!(p.duration_field(FrameKind::Cts, vb), 20 + 192 + 3_840 + 304);
        // RTS announces the SISO worst case whatever gets negotiated.
        let rts = 30 + 312 + 11_712 + 304;
        assert_eq!(p.duration_field(FrameKind::Rts, vb), rts);
        assert_eq!(p.duration_field(FrameKind::Rts, MimoMode::Siso), rts);
        assert!(p.duration_field(FrameKind::Cts, vb) < p.duration_field(FrameKind::Cts, MimoMode::Siso));
        // 11520 bits over 7 streams is not a whole number of microseconds.
        let odd = MimoMode::Vblast { m: 7, n: 7 };
        let exact: f64 = 20.0 + 192.0 + 11_520.0 / 7.0 + 304.0;
        assert_eq!(p.duration_field(FrameKind::Cts, odd), exact.ceil() as u64);
    }

    #[test]
    fn beb_sequence() {
        let p = MacParams::default();
        let seq: Vec<u32> = (0..8).map(|f| p.contention_window(f)).collect();
        assert_eq!(seq, vec![31, 62, 124, 248, 496, 992, 1023, 1023]);
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_mimo_mode(3.0, 5.0, 23.0, 4), MimoMode::Alamouti { n: 4 });
        assert_eq!(select_mimo_mode(10.0, 5.0, 23.0, 4), MimoMode::Vblast { m: 3, n: 4 });
        assert_eq!(select_mimo_mode(25.0, 5.0, 23.0, 4), MimoMode::Vblast { m: 4, n: 4 });
        assert_eq!(select_mimo_mode(5.0, 5.0, 23.0, 4), MimoMode::Vblast { m: 3, n: 4 });
        assert_eq!(select_mimo_mode(23.0, 5.0, 23.0, 4), MimoMode::Vblast { m: 4, n: 4 });
    }

    #[test]
    fn hyb_a_never_fully_multiplexes() {
        let p = MimoPolicy::HybA { n: 3, sinr_min_db: 8.0 };
        for k in -100..200 {
            assert_ne!(p.data_mode(k as f64), MimoMode::Vblast { m: 3, n: 3 });
        }
        let b = MimoPolicy::HybB { n: 3, sinr_max_db: 20.0 };
        for k in -100..200 {
            assert_ne!(b.data_mode(k as f64), MimoMode::Alamouti { n: 3 });
        }
        assert_eq!(MimoPolicy::Alamouti { n: 3 }.data_mode(40.0), MimoMode::Alamouti { n: 3 });
    }

    #[test]
    fn mode_byte_round_trip() {
        for n in 2..=6u8 {
            for mode in [MimoMode::Alamouti { n }, MimoMode::Vblast { m: n - 1, n }, MimoMode::Vblast { m: n, n }] {
                let b = encode_mode_byte(mode, n).unwrap();
                assert!(b <= 2);
                assert_eq!(decode_mode_byte(b, n), Some(mode));
            }
        }
        assert_eq!(encode_mode_byte(MimoMode::Siso, 1), None);
        assert_eq!(encode_mode_byte(MimoMode::Vblast { m: 2, n: 4 }, 4), None);
        for b in 3..=255u8 {
            assert_eq!(decode_mode_byte(b, 4), None);
        }
    }

    #[test]
    fn policy_validation() {
        assert!(MimoPolicy::HybC { n: 2, sinr_min_db: 5.0, sinr_max_db: 23.0 }.validate().is_err());
        assert!(MimoPolicy::HybC { n: 3, sinr_min_db: 23.0, sinr_max_db: 5.0 }.validate().is_err());
        assert!(MimoPolicy::HybC { n: 3, sinr_min_db: 5.0, sinr_max_db: 23.0 }.validate().is_ok());
        assert!(MimoPolicy::Vblast { m: 4, n: 3 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn selection_is_piecewise_constant_with_two_breakpoints(
            lo in -10.0f64..20.0, gap in 0.1f64..20.0, n in 3u8..8
        ) {
            let hi = lo + gap;
            let mut changes = 0;
            let mut prev = select_mimo_mode(-50.0, lo, hi, n);
            for k in 0..2000 {
                let s = -50.0 + k as f64 * 0.05;
                let m = select_mimo_mode(s, lo, hi, n);
                prop_assert_eq!(m, select_mimo_mode(s, lo, hi, n));
                if m != prev { changes += 1; prev = m; }
            }
            prop_assert_eq!(changes, 2);
        }
    }
}
