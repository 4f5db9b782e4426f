use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{draw_power_matrix, PathModel, SPEED_OF_LIGHT};
use crate::mac::{Dcf, Frame, FrameKind, MacAction, MacDrop, MacInput, MacParams, MacTrace, MimoPolicy, TimerKind};
use crate::metrics::{MetricsCollector, MetricsReport};
use crate::phy::{Arrival, BerModel, CalibrationError, CcaState, DropCause, MimoMode, PhyParams, RateSegment, Receiver, RxOutcome};
use crate::topology::Topology;
use crate::{FrameId, NodeId};

use super::{EventQueue, RngFactory, SimTime, StreamKey};

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub duration: SimTime,
    pub seed: u64,
    pub policy: MimoPolicy,
    pub phy: PhyParams,
    pub mac: MacParams,
    pub path: PathModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: SimTime::from_secs_f64(10.0),
            seed: 1,
            policy: MimoPolicy::Siso,
            phy: PhyParams::default(),
            mac: MacParams::default(),
            path: PathModel::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

impl SimConfig {
    pub fn validate(&self, model: &BerModel) -> Result<(), ConfigError> {
        if self.duration == SimTime::ZERO {
            return Err(ConfigError::Invalid("duration must be positive".into()));
        }
        self.policy.validate().map_err(ConfigError::Invalid)?;
        self.phy.validate().map_err(ConfigError::Invalid)?;
        self.mac.validate().map_err(ConfigError::Invalid)?;
        if !(self.path.tx_power_dbm.is_finite() && self.path.antenna_height_m > 0.0) {
            return Err(ConfigError::Invalid("path model needs finite power and positive height".into()));
        }
        for mode in self.policy.modes() {
            model.check(mode)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TraceEvent {
    TxStart {
        frame: FrameId,
        kind: FrameKind,
        destination: NodeId,
        duration_us: u64,
        mode: MimoMode,
        end: SimTime,
    },
    Rx {
        frame: FrameId,
        kind: FrameKind,
        source: NodeId,
        destination: NodeId,
        outcome: Result<f64, DropCause>,
    },
    Mac(MacTrace),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub node: NodeId,
    pub event: TraceEvent,
}

#[derive(Debug)]
enum Payload {
    ArrivalStart(Box<Arrival>),
    ArrivalEnd(FrameId),
    TxEnd,
    Timer { kind: TimerKind, token: u64 },
    AppPacketReady,
}

struct Node {
    dcf: Dcf,
    rx: Receiver,
    cca: CcaState,
    rng: ChaCha8Rng,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    topo: &'a Topology,
    model: &'a BerModel,
    queue: EventQueue<Payload>,
    nodes: Vec<Node>,
    fading: Vec<Option<ChaCha8Rng>>,
    factory: RngFactory,
    frames: HashMap<FrameId, (Frame, usize)>,
    next_frame: u64,
    metrics: MetricsCollector,
    trace: Option<Vec<TraceRecord>>,
    actions: Vec<MacAction>,
}

/// Runs with the shipped BER calibration.
pub fn run(config: &SimConfig, topology: &Topology) -> MetricsReport {
    run_with_model(config, topology, &BerModel::default())
}

/// Panics on a configuration rejected by [`SimConfig::validate`].
pub fn run_with_model(config: &SimConfig, topology: &Topology, model: &BerModel) -> MetricsReport {
    Sim::new(config, topology, model, false).run().0
}

/// Also returns every transmission, reception and MAC decision.
pub fn run_traced(config: &SimConfig, topology: &Topology, model: &BerModel) -> (MetricsReport, Vec<TraceRecord>) {
    let (report, trace) = Sim::new(config, topology, model, true).run();
    (report, trace.unwrap_or_default())
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, topo: &'a Topology, model: &'a BerModel, traced: bool) -> Self {
        if let Err(e) = cfg.validate(model) {
            panic!("invalid simulation config: {e}");
        }
        let factory = RngFactory::new(cfg.seed);
        let n_rx = cfg.policy.antennas() as usize;
        let n = topo.len();
        let nodes = (0..n as u32)
            .map(|i| {
                let id = NodeId(i);
                Node {
                    dcf: Dcf::new(
                        id,
                        topo.destination(id),
                        cfg.mac.clone(),
                        cfg.policy,
                        factory.stream(StreamKey::Backoff(id)),
                    ),
                    rx: Receiver::new(n_rx),
                    cca: CcaState::Idle,
                    rng: factory.stream(StreamKey::Reception(id)),
                }
            })
            .collect();
        let sources: Vec<NodeId> = topo.flows().iter().map(|(s, _)| *s).collect();
        Sim {
            cfg,
            topo,
            model,
            queue: EventQueue::new(),
            nodes,
            fading: (0..n * n).map(|_| None).collect(),
            factory,
            frames: HashMap::new(),
            next_frame: 0,
            metrics: MetricsCollector::new(n, sources),
            trace: traced.then(Vec::new),
            actions: Vec::new(),
        }
    }

    fn record(&mut self, node: NodeId, event: TraceEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord { time: self.queue.now(), node, event });
        }
    }

    fn run(mut self) -> (MetricsReport, Option<Vec<TraceRecord>>) {
        for &(s, _) in self.topo.flows() {
            self.queue.schedule(SimTime::ZERO, s, Payload::AppPacketReady);
        }
        let end = self.cfg.duration;
        while self.queue.peek_time().is_some_and(|t| t <= end) {
            let ev = self.queue.pop().unwrap();
            self.dispatch(ev.target, ev.payload);
        }
        let queued: Vec<(NodeId, SimTime)> = self
            .nodes
            .iter()
            .flat_map(|n| n.dcf.queued().map(move |t| (n.dcf.id(), t)))
            .collect();
        (self.metrics.finish(end, queued), self.trace)
    }

    fn dispatch(&mut self, id: NodeId, payload: Payload) {
        let now = self.queue.now();
        let mut out = std::mem::take(&mut self.actions);
        let i = id.index();
        match payload {
            Payload::AppPacketReady => {
                while self.nodes[i].dcf.has_room() {
                    self.nodes[i].dcf.enqueue(now, &mut out);
                }
            }
            Payload::Timer { kind, token } => {
                self.nodes[i].dcf.step(now, MacInput::Timer { kind, token }, &mut out);
            }
            Payload::TxEnd => {
                self.nodes[i].rx.end_transmit();
                self.nodes[i].dcf.step(now, MacInput::TxEnd, &mut out);
            }
            Payload::ArrivalStart(arrival) => {
                self.nodes[i].rx.arrival_start(*arrival, &self.cfg.phy);
                self.sense(i, now, &mut out);
            }
            Payload::ArrivalEnd(fid) => {
                let node = &mut self.nodes[i];
                let outcome = node.rx.arrival_end(fid, &self.cfg.phy, self.model, &mut node.rng);
                let entry = self.frames.get_mut(&fid).expect("arrival of unknown frame");
                entry.1 -= 1;
                let frame = if entry.1 == 0 {
                    self.frames.remove(&fid).unwrap().0
                } else {
                    entry.0.clone()
                };
                let result = match outcome {
                    RxOutcome::Delivered { mean_sinr_db, .. } => {
                        self.nodes[i]
                            .dcf
                            .step(now, MacInput::Received { frame: &frame, mean_sinr_db }, &mut out);
                        Ok(mean_sinr_db)
                    }
                    RxOutcome::Dropped { cause, .. } => {
                        self.metrics.record_phy_drop(drop_label(cause));
                        if frame.kind == FrameKind::Data && frame.destination == id && cause != DropCause::BelowEd {
                            self.metrics.record_channel_drop(frame.source);
                        }
                        Err(cause)
                    }
                };
                if self.trace.is_some() {
                    self.record(
                        id,
                        TraceEvent::Rx {
                            frame: fid,
                            kind: frame.kind,
                            source: frame.source,
                            destination: frame.destination,
                            outcome: result,
                        },
                    );
                }
                self.sense(i, now, &mut out);
            }
        }
        self.apply(id, now, &mut out);
        out.clear();
        self.actions = out;
    }

    fn sense(&mut self, i: usize, now: SimTime, out: &mut Vec<MacAction>) {
        let node = &mut self.nodes[i];
        let cca = node.rx.cca(&self.cfg.phy);
        if cca != node.cca {
            node.cca = cca;
            node.dcf.step(now, MacInput::Medium { busy: cca == CcaState::Busy }, out);
        }
    }

    fn apply(&mut self, id: NodeId, now: SimTime, out: &mut Vec<MacAction>) {
        // Transmitting can trigger no further MAC actions, so one pass suffices.
        for action in out.drain(..) {
            match action {
                MacAction::Transmit(frame) => self.transmit(id, frame, now),
                MacAction::SetTimer { kind, at, token } => {
                    self.queue.schedule(at, id, Payload::Timer { kind, token });
                }
                MacAction::Deliver { source, seq, enqueued_at, payload_bits } => {
                    self.metrics.record_delivery(source, seq, enqueued_at, now, payload_bits);
                }
                MacAction::Dequeued => {
                    self.queue.schedule(now, id, Payload::AppPacketReady);
                }
                MacAction::Drop { cause: MacDrop::RetryLimit, .. } => self.metrics.record_retry_drop(id),
                MacAction::Drop { cause: MacDrop::QueueFull, .. } => self.metrics.record_queue_drop(id),
                MacAction::Trace(t) => self.record(id, TraceEvent::Mac(t)),
            }
        }
    }

    fn transmit(&mut self, id: NodeId, frame: Frame, now: SimTime) {
        let i = id.index();
        self.nodes[i].rx.start_transmit();
        let airtime = self.cfg.mac.airtime(frame.kind, frame.tx_mode);
        let end = now + airtime;
        self.queue.schedule(end, id, Payload::TxEnd);
        let fid = FrameId(self.next_frame);
        self.next_frame += 1;
        if frame.kind == FrameKind::Data {
            self.metrics.record_mode(frame.tx_mode.to_string());
        }
        if self.trace.is_some() {
            self.record(
                id,
                TraceEvent::TxStart {
                    frame: fid,
                    kind: frame.kind,
                    destination: frame.destination,
                    duration_us: frame.duration_us,
                    mode: frame.tx_mode,
                    end,
                },
            );
        }
        let n = self.nodes.len();
        let n_tx = frame.tx_mode.tx_antennas();
        let streams = if frame.kind == FrameKind::Data { frame.tx_mode.streams() } else { 1 };
        let plcp = SimTime::from_micros(self.cfg.mac.plcp_us);
        let rate = self.cfg.mac.bit_rate_bps;
        // Control frames are decoded as SISO, DATA with its own scheme.
        let decode_mode = if frame.kind == FrameKind::Data { frame.tx_mode } else { MimoMode::Siso };
        for j in 0..n {
            if j == i {
                continue;
            }
            let to = NodeId(j as u32);
            let d = self.topo.distance(id, to);
            let start = now + SimTime::from_secs_f64(d / SPEED_OF_LIGHT);
            let factory = self.factory;
            let rng = self.fading[i * n + j].get_or_insert_with(|| factory.stream(StreamKey::Fading { from: id, to }));
            let matrix = draw_power_matrix(&self.cfg.path, id, d, n_tx, self.nodes[j].rx.n_rx(), fid, rng);
            let arrival = Arrival {
                frame: fid,
                source: id,
                matrix,
                mode: decode_mode,
                start,
                end: start + airtime,
                segments: [
                    RateSegment { start, end: start + plcp, bits_per_sec: rate },
                    RateSegment { start: start + plcp, end: start + airtime, bits_per_sec: rate * streams as f64 },
                ],
            };
            self.queue.schedule(start, to, Payload::ArrivalStart(Box::new(arrival)));
            self.queue.schedule(start + airtime, to, Payload::ArrivalEnd(fid));
        }
        if n > 1 {
            self.frames.insert(fid, (frame, n - 1));
        }
    }
}

fn drop_label(cause: DropCause) -> &'static str {
    match cause {
        DropCause::CollisionCapture => "collision_capture",
        DropCause::ChannelError => "channel_error",
        DropCause::BelowEd => "below_ed",
        DropCause::HalfDuplex => "half_duplex",
    }
}
