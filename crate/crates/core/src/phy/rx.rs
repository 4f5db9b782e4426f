use rand::Rng;

use crate::channel::PowerMatrix;
use crate::engine::SimTime;
use crate::units::linear_to_db;
use crate::{FrameId, NodeId};

use super::chunk::{bits_in_interval, chunk_timeline, packet_error_rate, Chunk, Overlap, RateSegment};
use super::{cca_state, sinr_alamouti, sinr_siso, sinr_vblast, BerModel, CcaState, MimoMode, PhyParams};

/// One frame as seen by one receiving node.
#[derive(Clone, Debug)]
pub struct Arrival {
    pub frame: FrameId,
    pub source: NodeId,
    pub matrix: PowerMatrix,
    /// Scheme used to decode the frame.
    pub mode: MimoMode,
    pub start: SimTime,
    pub end: SimTime,
    /// Preamble and body.
    pub segments: [RateSegment; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropCause {
    /// Arrived while the receiver was locked onto another frame.
    CollisionCapture,
    /// Lost the Bernoulli draw against the chunked PER.
    ChannelError,
    /// Too weak to trigger the energy-detection lock.
    BelowEd,
    /// The receiver was (or started) transmitting.
    HalfDuplex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RxOutcome {
    /// Decoded; `mean_sinr_db` is the duration-weighted branch-averaged SINR.
    Delivered {
        frame: FrameId,
        mean_sinr_db: f64,
        per: f64,
    },
    Dropped {
        frame: FrameId,
        cause: DropCause,
        per: Option<f64>,
    },
}

impl RxOutcome {
    pub fn frame(&self) -> FrameId {
        match self {
            RxOutcome::Delivered { frame, .. } | RxOutcome::Dropped { frame, .. } => *frame,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Fate {
    Locked,
    Missed(DropCause),
}

#[derive(Debug)]
struct OnAir {
    arrival: Arrival,
    fate: Fate,
}

/// Per-node reception state: active arrivals, the ED lock, and the
/// interference history of the locked frame.
#[derive(Debug)]
pub struct Receiver {
    n_rx: usize,
    on_air: Vec<OnAir>,
    locked: Option<FrameId>,
    lock_interference: Vec<(Overlap, PowerMatrix)>,
    transmitting: bool,
}

impl Receiver {
    pub fn new(n_rx: usize) -> Self {
        assert!(n_rx >= 1);
        Receiver {
            n_rx,
            on_air: Vec::new(),
            locked: None,
            lock_interference: Vec::new(),
            transmitting: false,
        }
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn locked(&self) -> Option<FrameId> {
        self.locked
    }

    pub fn cca(&self, params: &PhyParams) -> CcaState {
        cca_state(self.on_air.iter().map(|o| &o.arrival.matrix), self.n_rx, params)
    }

    fn record_interferer(&mut self, a: &Arrival) {
        self.lock_interference.push((
            Overlap {
                frame: a.frame,
                start: a.start,
                end: a.end,
            },
            a.matrix.clone(),
        ));
    }

    pub fn arrival_start(&mut self, arrival: Arrival, params: &PhyParams) {
        let fate = if self.transmitting {
            Fate::Missed(DropCause::HalfDuplex)
        } else if self.locked.is_some() {
            Fate::Missed(DropCause::CollisionCapture)
        } else if arrival.matrix.frobenius_power() / self.n_rx as f64 >= params.ed_threshold_w() {
            Fate::Locked
        } else {
            Fate::Missed(DropCause::BelowEd)
        };
        if self.locked.is_some() {
            self.record_interferer(&arrival);
        }
        if fate == Fate::Locked {
            self.locked = Some(arrival.frame);
            self.lock_interference.clear();
            let others: Vec<Arrival> = self.on_air.iter().map(|o| o.arrival.clone()).collect();
            for o in &others {
                self.record_interferer(o);
            }
        }
        self.on_air.push(OnAir { arrival, fate });
    }

    /// Half-duplex: starting a transmission aborts any locked reception.
    pub fn start_transmit(&mut self) {
        self.transmitting = true;
        if let Some(id) = self.locked.take() {
            if let Some(o) = self.on_air.iter_mut().find(|o| o.arrival.frame == id) {
                o.fate = Fate::Missed(DropCause::HalfDuplex);
            }
            self.lock_interference.clear();
        }
    }

    pub fn end_transmit(&mut self) {
        self.transmitting = false;
    }

    /// Removes the arrival; decodes it if it held the lock.
    ///
    /// Exactly one uniform draw is taken per decode attempt.
    pub fn arrival_end<R: Rng + ?Sized>(
        &mut self,
        frame: FrameId,
        params: &PhyParams,
        model: &BerModel,
        rng: &mut R,
    ) -> RxOutcome {
        let pos = self
            .on_air
            .iter()
            .position(|o| o.arrival.frame == frame)
            .expect("arrival end without start");
        let OnAir { arrival, fate } = self.on_air.swap_remove(pos);
        match fate {
            Fate::Missed(cause) => RxOutcome::Dropped {
                frame,
                cause,
                per: None,
            },
            Fate::Locked => {
                self.locked = None;
                let interference = std::mem::take(&mut self.lock_interference);
                let (chunks, mean_sinr) = self.score(&arrival, &interference, params);
                let per = packet_error_rate(&chunks, arrival.mode, model);
                let u: f64 = rng.random();
                if u < per {
                    RxOutcome::Dropped {
                        frame,
                        cause: DropCause::ChannelError,
                        per: Some(per),
                    }
                } else {
                    RxOutcome::Delivered {
                        frame,
                        mean_sinr_db: linear_to_db(mean_sinr),
                        per,
                    }
                }
            }
        }
    }

    /// Chunk timeline with per-chunk decoding SINR, plus the
    /// duration-weighted linear mean of the branch-averaged SINR.
    fn score(
        &self,
        a: &Arrival,
        interference: &[(Overlap, PowerMatrix)],
        params: &PhyParams,
    ) -> (Vec<Chunk>, f64) {
        let noise = params.noise_power_w();
        let overlaps: Vec<Overlap> = interference.iter().map(|(o, _)| *o).collect();
        let spans = chunk_timeline(a.start, a.end, &overlaps);
        let mut weighted = 0.0;
        let mut total = 0.0;
        let chunks = spans
            .into_iter()
            .map(|span| {
                let active: Vec<&PowerMatrix> = interference
                    .iter()
                    .filter(|(o, _)| span.interferers.contains(&o.frame))
                    .map(|(_, m)| m)
                    .collect();
                let decode = match a.mode {
                    MimoMode::Siso => sinr_siso(
                        a.matrix.get(0, 0),
                        active.iter().map(|m| m.row_power(0)),
                        noise,
                    ),
                    MimoMode::Alamouti { .. } => sinr_alamouti(&a.matrix, active.iter().copied(), noise),
                    MimoMode::Vblast { .. } => {
                        sinr_vblast(&a.matrix, active.iter().copied(), noise, self.n_rx)
                    }
                };
                let estimate = sinr_vblast(&a.matrix, active.iter().copied(), noise, self.n_rx);
                let dur = (span.end - span.start).as_nanos() as f64;
                weighted += estimate * dur;
                total += dur;
                Chunk {
                    n_bits: bits_in_interval(&a.segments, span.start, span.end),
                    start: span.start,
                    end: span.end,
                    interferers: span.interferers,
                    sinr: decode * params.despreading_gain,
                }
            })
            .collect();
        let mean = if total > 0.0 { weighted / total } else { 0.0 };
        (chunks, mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::db_to_linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn us(t: u64) -> SimTime {
        SimTime::from_micros(t)
    }

    fn arrival(id: u64, power_w: f64, start: u64, end: u64, mode: MimoMode, n_rx: usize) -> Arrival {
        let m = mode.tx_antennas();
        Arrival {
            frame: FrameId(id),
            source: NodeId(id as u32),
            matrix: PowerMatrix::new(n_rx, m, vec![power_w / m as f64; n_rx * m], NodeId(id as u32), FrameId(id)),
            mode,
            start: us(start),
            end: us(end),
            segments: [
                RateSegment { start: us(start), end: us(start + 192), bits_per_sec: 1e6 },
                RateSegment { start: us(start + 192), end: us(end), bits_per_sec: 1e6 * mode.streams() as f64 },
            ],
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn clean_frame_delivers_with_its_sinr() {
        let params = PhyParams::default();
        let model = BerModel::default();
        let p = params.noise_power_w() * db_to_linear(30.0);
        let mut rx = Receiver::new(1);
        rx.arrival_start(arrival(1, p, 0, 544, MimoMode::Siso, 1), &params);
        assert_eq!(rx.locked(), Some(FrameId(1)));
        match rx.arrival_end(FrameId(1), &params, &model, &mut rng()) {
            RxOutcome::Delivered { mean_sinr_db, per, .. } => {
                assert!((mean_sinr_db - 30.0).abs() < 1e-9);
                assert!(per < 1e-100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weak_frame_is_dropped_but_still_interferes() {
        let params = PhyParams::default();
        let model = BerModel::default();
        let mut rx = Receiver::new(1);
        let weak = params.cca_threshold_w() * 1.2; // sensed, below ED
        rx.arrival_start(arrival(1, weak, 0, 1000, MimoMode::Siso, 1), &params);
        assert_eq!(rx.cca(&params), CcaState::Busy);
        assert!(rx.locked().is_none());
        let strong = params.ed_threshold_w() * 10.0;
        rx.arrival_start(arrival(2, strong, 100, 600, MimoMode::Siso, 1), &params);
        assert_eq!(rx.locked(), Some(FrameId(2)));
        let out = rx.arrival_end(FrameId(2), &params, &model, &mut rng());
        let noise = params.noise_power_w();
        let expect = 10.0 * (strong / (noise + weak)).log10();
        match out {
            RxOutcome::Delivered { mean_sinr_db, .. } => assert!((mean_sinr_db - expect).abs() < 1e-9),
            RxOutcome::Dropped { cause, .. } => assert_eq!(cause, DropCause::ChannelError),
        }
        assert_eq!(
            rx.arrival_end(FrameId(1), &params, &model, &mut rng()),
            RxOutcome::Dropped { frame: FrameId(1), cause: DropCause::BelowEd, per: None }
        );
    }

    #[test]
    fn overlapping_equal_frames_first_locks_second_interferes() {
        let params = PhyParams { despreading_gain: 1.0, ..PhyParams::default() };
        let model = BerModel::default();
        let p = params.ed_threshold_w() * 4.0;
        let mut rx = Receiver::new(1);
        rx.arrival_start(arrival(1, p, 0, 1000, MimoMode::Siso, 1), &params);
        rx.arrival_start(arrival(2, p, 0, 1000, MimoMode::Siso, 1), &params);
        assert_eq!(rx.locked(), Some(FrameId(1)));
        let first = rx.arrival_end(FrameId(1), &params, &model, &mut rng());
        // SINR just under 0 dB over 1000 bits, no despreading: certain loss.
        let sinr = p / (params.noise_power_w() + p);
        let expect = 1.0 - (1.0 - 0.5 * (-sinr).exp()).powi(1000);
        match first {
            RxOutcome::Dropped { cause: DropCause::ChannelError, per: Some(per), .. } => {
                assert!((per - expect).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
        let second = rx.arrival_end(FrameId(2), &params, &model, &mut rng());
        assert!(matches!(second, RxOutcome::Dropped { cause: DropCause::CollisionCapture, .. }));
    }

    #[test]
    fn transmitting_aborts_lock() {
        let params = PhyParams::default();
        let model = BerModel::default();
        let mut rx = Receiver::new(2);
        rx.arrival_start(arrival(1, params.ed_threshold_w() * 8.0, 0, 1000, MimoMode::Siso, 2), &params);
        rx.start_transmit();
        rx.arrival_start(arrival(2, params.ed_threshold_w() * 8.0, 10, 900, MimoMode::Siso, 2), &params);
        rx.end_transmit();
        for id in [2, 1] {
            let out = rx.arrival_end(FrameId(id), &params, &model, &mut rng());
            assert!(matches!(out, RxOutcome::Dropped { cause: DropCause::HalfDuplex, .. }));
        }
    }

    #[test]
    fn mean_sinr_is_duration_weighted_linear_average() {
        let params = PhyParams::default();
        let model = BerModel::default();
        let noise = params.noise_power_w();
        let s = noise * 1000.0;
        let mut rx = Receiver::new(1);
        rx.arrival_start(arrival(1, s, 0, 1000, MimoMode::Siso, 1), &params);
        // Interferer over the second half only.
        rx.arrival_start(arrival(2, noise * 9.0, 500, 2000, MimoMode::Siso, 1), &params);
        let out = rx.arrival_end(FrameId(1), &params, &model, &mut rng());
        let expect = 10.0 * (0.5 * 1000.0 + 0.5 * 100.0f64).log10();
        match out {
            RxOutcome::Delivered { mean_sinr_db, .. } => assert!((mean_sinr_db - expect).abs() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }
}
