//! Two DCF instances joined by an ideal channel, with hooks to lose frames.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use mimonet::engine::SimTime;
use mimonet::mac::{Dcf, Frame, FrameKind, MacAction, MacInput, MacParams, MacTrace, MimoPolicy, TimerKind};
use mimonet::metrics::MetricsCollector;
use mimonet::NodeId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
enum Ev {
    Timer(TimerKind, u64),
    TxEnd,
    Busy(bool),
    Rx(Frame),
}

struct Link {
    nodes: [Dcf; 2],
    queue: BinaryHeap<Reverse<(SimTime, u64, usize)>>,
    events: Vec<Ev>,
    params: MacParams,
    /// Returns false to lose the frame at its receiver.
    keep: Box<dyn FnMut(&Frame) -> bool>,
    deliveries: Vec<(NodeId, u64)>,
    traces: Vec<(usize, MacTrace)>,
    metrics: MetricsCollector,
}

impl Link {
    fn new(keep: impl FnMut(&Frame) -> bool + 'static) -> Self {
        let params = MacParams::default();
        let mk = |i: u32| {
            Dcf::new(
                NodeId(i),
                Some(NodeId(1 - i)),
                params.clone(),
                MimoPolicy::Siso,
                ChaCha8Rng::seed_from_u64(i as u64 + 7),
            )
        };
        Link {
            nodes: [mk(0), mk(1)],
            queue: BinaryHeap::new(),
            events: Vec::new(),
            params,
            keep: Box::new(keep),
            deliveries: Vec::new(),
            traces: Vec::new(),
            metrics: MetricsCollector::new(2, [NodeId(0)]),
        }
    }

    fn push(&mut self, at: SimTime, node: usize, ev: Ev) {
        let id = self.events.len() as u64;
        self.events.push(ev);
        self.queue.push(Reverse((at, id, node)));
    }

    fn apply(&mut self, now: SimTime, node: usize, out: Vec<MacAction>) {
        for a in out {
            match a {
                MacAction::Transmit(f) => {
                    let end = now + self.params.airtime(f.kind, f.tx_mode);
                    self.push(end, node, Ev::TxEnd);
                    self.push(now, 1 - node, Ev::Busy(true));
                    self.push(end, 1 - node, Ev::Busy(false));
                    if (self.keep)(&f) {
                        self.push(end, 1 - node, Ev::Rx(f));
                    }
                }
                MacAction::SetTimer { kind, at, token } => self.push(at, node, Ev::Timer(kind, token)),
                MacAction::Deliver { source, seq, enqueued_at, payload_bits } => {
                    self.deliveries.push((source, seq));
                    self.metrics.record_delivery(source, seq, enqueued_at, now, payload_bits);
                }
                MacAction::Trace(t) => self.traces.push((node, t)),
                MacAction::Drop { .. } => self.metrics.record_retry_drop(NodeId(node as u32)),
                MacAction::Dequeued => {}
            }
        }
    }

    /// Node 0 sends `packets` frames to node 1.
    fn run(&mut self, packets: usize, until: SimTime) {
        let mut out = Vec::new();
        for _ in 0..packets {
            self.nodes[0].enqueue(SimTime::ZERO, &mut out);
        }
        self.apply(SimTime::ZERO, 0, std::mem::take(&mut out));
        while let Some(Reverse((now, id, node))) = self.queue.pop() {
            if now > until {
                break;
            }
            let ev = self.events[id as usize].clone();
            let mut out = Vec::new();
            let input = match &ev {
                Ev::Timer(kind, token) => MacInput::Timer { kind: *kind, token: *token },
                Ev::TxEnd => MacInput::TxEnd,
                Ev::Busy(b) => MacInput::Medium { busy: *b },
                Ev::Rx(f) => MacInput::Received { frame: f, mean_sinr_db: 30.0 },
            };
            self.nodes[node].step(now, input, &mut out);
            self.apply(now, node, out);
        }
    }

    fn successes(&self) -> usize {
        self.traces.iter().filter(|(n, t)| *n == 0 && matches!(t, MacTrace::Success { .. })).count()
    }
}

#[test]
fn clean_link_delivers_each_frame_once() {
    let mut l = Link::new(|_| true);
    l.run(3, SimTime::from_secs_f64(1.0));
    assert_eq!(l.deliveries, [(NodeId(0), 0), (NodeId(0), 1), (NodeId(0), 2)]);
    assert_eq!(l.successes(), 3);
}

#[test]
fn lost_ack_causes_duplicate_that_metrics_count_once() {
    let mut lost = false;
    let mut l = Link::new(move |f| {
        if f.kind == FrameKind::Ack && !lost {
            lost = true;
            return false;
        }
        true
    });
    l.run(1, SimTime::from_secs_f64(1.0));
    assert_eq!(l.deliveries, [(NodeId(0), 0), (NodeId(0), 0)]);
    assert_eq!(l.successes(), 1);
    let failed: Vec<FrameKind> = l
        .traces
        .iter()
        .filter_map(|(_, t)| match t {
            MacTrace::AttemptFailed { kind, .. } => Some(*kind),
            _ => None,
        })
        .collect();
    assert_eq!(failed, [FrameKind::Data]);
    let report = l.metrics.finish(SimTime::from_secs_f64(1.0), []);
    assert_eq!(report.nodes[0].frames_delivered(SimTime::ZERO), 1);
}

#[test]
fn every_lost_ack_exhausts_the_long_retry_limit() {
    let mut l = Link::new(|f| f.kind != FrameKind::Ack);
    l.run(1, SimTime::from_secs_f64(2.0));
    let p = MacParams::default();
    assert_eq!(l.deliveries.len(), p.long_retry_limit as usize);
    assert_eq!(l.successes(), 0);
    let report = l.metrics.finish(SimTime::from_secs_f64(2.0), []);
    assert_eq!(report.nodes[0].dropped_retry, 1);
    assert_eq!(report.nodes[0].frames_delivered(SimTime::ZERO), 1);
}

#[test]
fn lost_cts_retries_rts_until_short_limit() {
    let mut l = Link::new(|f| f.kind != FrameKind::Cts);
    l.run(1, SimTime::from_secs_f64(2.0));
    let p = MacParams::default();
    let rts_failures = l
        .traces
        .iter()
        .filter(|(_, t)| matches!(t, MacTrace::AttemptFailed { kind: FrameKind::Rts, .. }))
        .count();
    assert_eq!(rts_failures, p.short_retry_limit as usize);
    assert!(l.deliveries.is_empty());
}
