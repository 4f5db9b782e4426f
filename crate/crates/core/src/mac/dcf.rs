use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::SimTime;
use crate::phy::MimoMode;
use crate::NodeId;

use super::{decode_mode_byte, encode_mode_byte, Frame, FrameKind, MacParams, MimoPolicy, MODE_BYTE_FIXED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimerKind {
    Backoff,
    Timeout,
    /// A frame waiting out SIFS: a CTS/ACK response or our own DATA.
    Sifs,
}

impl TimerKind {
    fn slot(self) -> usize {
        match self {
            TimerKind::Backoff => 0,
            TimerKind::Timeout => 1,
            TimerKind::Sifs => 2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum MacInput<'a> {
    /// Physical carrier sense changed.
    Medium { busy: bool },
    Timer { kind: TimerKind, token: u64 },
    /// Our own transmission left the antenna.
    TxEnd,
    Received { frame: &'a Frame, mean_sinr_db: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MacDrop {
    QueueFull,
    RetryLimit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MacTrace {
    BackoffDrawn { cw: u32, slots: u32 },
    NavSet { until: SimTime },
    /// `failures` counts consecutive failed attempts of the head packet.
    AttemptFailed { kind: FrameKind, failures: u32 },
    Success { seq: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum MacAction {
    Transmit(Frame),
    SetTimer { kind: TimerKind, at: SimTime, token: u64 },
    /// DATA for the upper layer. Duplicates are possible when an ACK is lost.
    Deliver { source: NodeId, seq: u64, enqueued_at: SimTime, payload_bits: u64 },
    /// The head packet left the queue (acknowledged or dropped).
    Dequeued,
    Drop { seq: u64, cause: MacDrop },
    Trace(MacTrace),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    Contend,
    TxRts,
    WaitCts,
    /// Waiting SIFS to send DATA after a CTS.
    Sifs,
    TxData,
    WaitAck,
}

#[derive(Clone, Copy, Debug)]
struct Packet {
    seq: u64,
    enqueued_at: SimTime,
}

/// Per-node DCF state machine.
///
/// Inputs come from the engine; outputs are pushed as [`MacAction`]s. Timers
/// are never cancelled: each kind carries a token, and firings with a stale
/// token are ignored.
#[derive(Debug)]
pub struct Dcf {
    id: NodeId,
    peer: Option<NodeId>,
    params: MacParams,
    policy: MimoPolicy,
    rng: ChaCha8Rng,
    queue: VecDeque<Packet>,
    next_seq: u64,
    phase: Phase,
    cw: u32,
    short_retries: u32,
    long_retries: u32,
    slots: u32,
    counting_from: Option<SimTime>,
    nav_until: SimTime,
    cca_busy: bool,
    transmitting: Option<FrameKind>,
    last_busy_end: SimTime,
    pending: Option<Frame>,
    tokens: [u64; 3],
}

impl Dcf {
    /// `peer` is the destination of this node's flow; `None` makes it a
    /// pure responder.
    pub fn new(id: NodeId, peer: Option<NodeId>, params: MacParams, policy: MimoPolicy, rng: ChaCha8Rng) -> Self {
        let cw = params.cw_min;
        Dcf {
            id,
            peer,
            params,
            policy,
            rng,
            queue: VecDeque::new(),
            next_seq: 0,
            phase: Phase::Idle,
            cw,
            short_retries: 0,
            long_retries: 0,
            slots: 0,
            counting_from: None,
            nav_until: SimTime::ZERO,
            cca_busy: false,
            transmitting: None,
            last_busy_end: SimTime::ZERO,
            pending: None,
            tokens: [0; 3],
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn peer(&self) -> Option<NodeId> {
        self.peer
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn has_room(&self) -> bool {
        self.peer.is_some() && self.queue.len() < self.params.queue_capacity
    }

    pub fn nav_until(&self) -> SimTime {
        self.nav_until
    }

    pub fn contention_window(&self) -> u32 {
        self.cw
    }

    /// Enqueue times of packets still waiting, head first.
    pub fn queued(&self) -> impl Iterator<Item = SimTime> + '_ {
        self.queue.iter().map(|p| p.enqueued_at)
    }

    /// Appends a fresh packet stamped `now`; returns false on tail drop.
    pub fn enqueue(&mut self, now: SimTime, out: &mut Vec<MacAction>) -> bool {
        let seq = self.next_seq;
        self.next_seq += 1;
        if !self.has_room() {
            out.push(MacAction::Drop { seq, cause: MacDrop::QueueFull });
            return false;
        }
        self.queue.push_back(Packet { seq, enqueued_at: now });
        if self.phase == Phase::Idle {
            self.next_attempt(now, out);
        }
        true
    }

    pub fn step(&mut self, now: SimTime, input: MacInput<'_>, out: &mut Vec<MacAction>) {
        match input {
            MacInput::Medium { busy } => {
                if busy == self.cca_busy {
                    return;
                }
                self.cca_busy = busy;
                if !busy {
                    self.last_busy_end = self.last_busy_end.max(now);
                }
                self.update_backoff(now, out);
            }
            MacInput::Timer { kind, token } => {
                if self.tokens[kind.slot()] != token {
                    return;
                }
                match kind {
                    TimerKind::Backoff => self.backoff_expired(now, out),
                    TimerKind::Timeout => match self.phase {
                        Phase::WaitCts => self.fail(FrameKind::Rts, now, out),
                        Phase::WaitAck => self.fail(FrameKind::Data, now, out),
                        _ => {}
                    },
                    TimerKind::Sifs => self.sifs_expired(now, out),
                }
            }
            MacInput::TxEnd => self.tx_end(now, out),
            MacInput::Received { frame, mean_sinr_db } => self.received(frame, mean_sinr_db, now, out),
        }
    }

    fn set_timer(&mut self, kind: TimerKind, at: SimTime, out: &mut Vec<MacAction>) {
        let t = &mut self.tokens[kind.slot()];
        *t += 1;
        out.push(MacAction::SetTimer { kind, at, token: *t });
    }

    fn invalidate(&mut self, kind: TimerKind) {
        self.tokens[kind.slot()] += 1;
    }

    fn physically_idle(&self) -> bool {
        !self.cca_busy && self.transmitting.is_none() && self.pending.is_none()
    }

    /// Freezes a running countdown and, if the medium allows, restarts it
    /// DIFS after the later of the last busy period and the NAV.
    fn update_backoff(&mut self, now: SimTime, out: &mut Vec<MacAction>) {
        if self.phase != Phase::Contend {
            return;
        }
        if let Some(t0) = self.counting_from.take() {
            if now > t0 {
                let elapsed = (now - t0).as_nanos() / self.params.slot().as_nanos();
                self.slots -= (elapsed.min(self.slots as u64)) as u32;
            }
            self.invalidate(TimerKind::Backoff);
        }
        if self.physically_idle() {
            let idle_at = self.last_busy_end.max(self.nav_until);
            let t0 = (idle_at + self.params.difs()).max(now);
            self.counting_from = Some(t0);
            let fire = t0 + self.params.slot().mul(self.slots as u64);
            self.set_timer(TimerKind::Backoff, fire, out);
        }
    }

    fn next_attempt(&mut self, now: SimTime, out: &mut Vec<MacAction>) {
        self.counting_from = None;
        self.invalidate(TimerKind::Backoff);
        if self.queue.is_empty() {
            self.phase = Phase::Idle;
            return;
        }
        self.phase = Phase::Contend;
        self.slots = self.rng.random_range(0..=self.cw);
        out.push(MacAction::Trace(MacTrace::BackoffDrawn { cw: self.cw, slots: self.slots }));
        self.update_backoff(now, out);
    }

    fn backoff_expired(&mut self, now: SimTime, out: &mut Vec<MacAction>) {
        if self.phase != Phase::Contend || !self.physically_idle() || now < self.nav_until {
            return;
        }
        self.counting_from = None;
        self.slots = 0;
        let head = *self.queue.front().expect("contending with an empty queue");
        let rts = Frame {
            kind: FrameKind::Rts,
            source: self.id,
            destination: self.peer.expect("contending without a peer"),
            duration_us: self.params.duration_field(FrameKind::Rts, MimoMode::Siso),
            mode_byte: None,
            tx_mode: MimoMode::Siso,
            payload_bits: 0,
            seq: head.seq,
            enqueued_at: head.enqueued_at,
        };
        self.phase = Phase::TxRts;
        self.transmit(rts, out);
    }

    fn transmit(&mut self, frame: Frame, out: &mut Vec<MacAction>) {
        debug_assert!(self.transmitting.is_none());
        self.transmitting = Some(frame.kind);
        out.push(MacAction::Transmit(frame));
    }

    fn tx_end(&mut self, now: SimTime, out: &mut Vec<MacAction>) {
        let kind = self.transmitting.take().expect("tx end without transmission");
        self.last_busy_end = self.last_busy_end.max(now);
        // Slack of one slot covers round-trip propagation.
        let p = &self.params;
        match kind {
            FrameKind::Rts if self.phase == Phase::TxRts => {
                self.phase = Phase::WaitCts;
                let at = now + p.sifs() + p.airtime(FrameKind::Cts, MimoMode::Siso) + p.slot();
                self.set_timer(TimerKind::Timeout, at, out);
            }
            FrameKind::Data if self.phase == Phase::TxData => {
                self.phase = Phase::WaitAck;
                let at = now + p.sifs() + p.airtime(FrameKind::Ack, MimoMode::Siso) + p.slot();
                self.set_timer(TimerKind::Timeout, at, out);
            }
            _ => self.update_backoff(now, out),
        }
    }

    fn fail(&mut self, kind: FrameKind, now: SimTime, out: &mut Vec<MacAction>) {
        self.invalidate(TimerKind::Timeout);
        let limit_hit = if kind == FrameKind::Rts {
            self.short_retries += 1;
            self.short_retries >= self.params.short_retry_limit
        } else {
            self.long_retries += 1;
            self.long_retries >= self.params.long_retry_limit
        };
        let failures = self.short_retries + self.long_retries;
        out.push(MacAction::Trace(MacTrace::AttemptFailed { kind, failures }));
        if limit_hit {
            let head = self.queue.pop_front().expect("failed attempt without packet");
            out.push(MacAction::Drop { seq: head.seq, cause: MacDrop::RetryLimit });
            out.push(MacAction::Dequeued);
            self.reset_retries();
        } else {
            self.cw = self.params.contention_window(failures);
        }
        self.next_attempt(now, out);
    }

    fn reset_retries(&mut self) {
        self.short_retries = 0;
        self.long_retries = 0;
        self.cw = self.params.cw_min;
    }

    fn succeed(&mut self, now: SimTime, out: &mut Vec<MacAction>) {
        self.invalidate(TimerKind::Timeout);
        let head = self.queue.pop_front().expect("success without packet");
        out.push(MacAction::Trace(MacTrace::Success { seq: head.seq }));
        out.push(MacAction::Dequeued);
        self.reset_retries();
        self.next_attempt(now, out);
    }

    fn sifs_expired(&mut self, now: SimTime, out: &mut Vec<MacAction>) {
        let Some(frame) = self.pending.take() else {
            return;
        };
        let nav_busy = now < self.nav_until;
        match frame.kind {
            FrameKind::Data => {
                if nav_busy {
                    self.fail(FrameKind::Rts, now, out);
                } else {
                    self.phase = Phase::TxData;
                    self.transmit(frame, out);
                }
            }
            FrameKind::Cts if nav_busy => self.update_backoff(now, out),
            _ => self.transmit(frame, out),
        }
    }

    fn respond(&mut self, frame: Frame, now: SimTime, out: &mut Vec<MacAction>) {
        self.pending = Some(frame);
        self.set_timer(TimerKind::Sifs, now + self.params.sifs(), out);
        self.update_backoff(now, out);
    }

    fn can_respond(&self) -> bool {
        self.transmitting.is_none() && self.pending.is_none()
    }

    fn received(&mut self, frame: &Frame, mean_sinr_db: f64, now: SimTime, out: &mut Vec<MacAction>) {
        if frame.destination != self.id {
            let until = now + SimTime::from_micros(frame.duration_us);
            if until > self.nav_until {
                self.nav_until = until;
                out.push(MacAction::Trace(MacTrace::NavSet { until }));
                self.update_backoff(now, out);
            }
            return;
        }
        let n = self.policy.antennas();
        match frame.kind {
            FrameKind::Rts => {
                let free = matches!(self.phase, Phase::Idle | Phase::Contend);
                if free && self.can_respond() && now >= self.nav_until {
                    let mode = self.policy.data_mode(mean_sinr_db);
                    let cts = Frame {
                        kind: FrameKind::Cts,
                        source: self.id,
                        destination: frame.source,
                        duration_us: self.params.duration_field(FrameKind::Cts, mode),
                        mode_byte: Some(encode_mode_byte(mode, n).unwrap_or(MODE_BYTE_FIXED)),
                        tx_mode: MimoMode::Siso,
                        payload_bits: 0,
                        seq: frame.seq,
                        enqueued_at: frame.enqueued_at,
                    };
                    self.respond(cts, now, out);
                }
            }
            FrameKind::Cts => {
                let head = self.queue.front().copied();
                let expected = self.phase == Phase::WaitCts
                    && Some(frame.source) == self.peer
                    && head.map(|h| h.seq) == Some(frame.seq);
                if !expected {
                    return;
                }
                self.invalidate(TimerKind::Timeout);
                if now < self.nav_until {
                    self.fail(FrameKind::Rts, now, out);
                    return;
                }
                let head = head.unwrap();
                let mode = frame
                    .mode_byte
                    .and_then(|b| decode_mode_byte(b, n))
                    .or(self.policy.fixed_mode())
                    .unwrap_or(MimoMode::Alamouti { n });
                let data = Frame {
                    kind: FrameKind::Data,
                    source: self.id,
                    destination: frame.source,
                    duration_us: self.params.duration_field(FrameKind::Data, mode),
                    mode_byte: None,
                    tx_mode: mode,
                    payload_bits: self.params.payload_bits(),
                    seq: head.seq,
                    enqueued_at: head.enqueued_at,
                };
                self.phase = Phase::Sifs;
                self.pending = Some(data);
                self.set_timer(TimerKind::Sifs, now + self.params.sifs(), out);
            }
            FrameKind::Data => {
                out.push(MacAction::Deliver {
                    source: frame.source,
                    seq: frame.seq,
                    enqueued_at: frame.enqueued_at,
                    payload_bits: frame.payload_bits,
                });
                if self.can_respond() && self.phase != Phase::Sifs {
                    let ack = Frame {
                        kind: FrameKind::Ack,
                        source: self.id,
                        destination: frame.source,
                        duration_us: self.params.duration_field(FrameKind::Ack, frame.tx_mode),
                        mode_byte: None,
                        tx_mode: MimoMode::Siso,
                        payload_bits: 0,
                        seq: frame.seq,
                        enqueued_at: frame.enqueued_at,
                    };
                    self.respond(ack, now, out);
                }
            }
            FrameKind::Ack => {
                let expected = self.phase == Phase::WaitAck
                    && Some(frame.source) == self.peer
                    && self.queue.front().map(|h| h.seq) == Some(frame.seq);
                if expected {
                    self.succeed(now, out);
                }
            }
        }
    }
}
