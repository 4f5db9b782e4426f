//! Per-node throughput, per-frame delay, fairness, and pooled confidence
//! intervals.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::SimTime;
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub at: SimTime,
    pub delay: SimTime,
    pub bits: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeMetrics {
    /// Whether this node sources a flow.
    pub source: bool,
    pub deliveries: Vec<Delivery>,
    /// Age at run end of packets still waiting at this source.
    pub queued_ages: Vec<SimTime>,
    pub dropped_queue: u64,
    pub dropped_retry: u64,
    /// DATA frames for this flow lost at the destination's PHY.
    pub dropped_channel: u64,
}

impl NodeMetrics {
    fn after(&self, warmup: SimTime) -> impl Iterator<Item = &Delivery> {
        self.deliveries.iter().filter(move |d| d.at >= warmup)
    }

    pub fn delivered_bits(&self, warmup: SimTime) -> u64 {
        self.after(warmup).map(|d| d.bits).sum()
    }

    pub fn frames_delivered(&self, warmup: SimTime) -> u64 {
        self.after(warmup).count() as u64
    }

    /// Mean delay of delivered frames; with `include_queued`, packets still
    /// queued at the end count with their age.
    pub fn mean_delay_s(&self, warmup: SimTime, include_queued: bool) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for d in self.after(warmup) {
            sum += d.delay.as_secs_f64();
            n += 1;
        }
        if include_queued {
            for a in &self.queued_ages {
                sum += a.as_secs_f64();
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Outcome of one run. Throughput is credited to the flow's source.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub duration: SimTime,
    pub nodes: Vec<NodeMetrics>,
    /// DATA transmissions per scheme label.
    pub mode_usage: BTreeMap<String, u64>,
    /// PHY drops of any frame, by cause label.
    pub phy_drops: BTreeMap<String, u64>,
}

impl MetricsReport {
    pub fn throughput_bps(&self, node: NodeId, warmup: SimTime) -> f64 {
        let span = self.duration.saturating_sub(warmup).as_secs_f64();
        if span <= 0.0 {
            return 0.0;
        }
        self.nodes[node.index()].delivered_bits(warmup) as f64 / span
    }

    pub fn source_throughputs(&self, warmup: SimTime) -> Vec<f64> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].source)
            .map(|i| self.throughput_bps(NodeId(i as u32), warmup))
            .collect()
    }

    pub fn mean_throughput_bps(&self, warmup: SimTime) -> f64 {
        let t = self.source_throughputs(warmup);
        if t.is_empty() {
            0.0
        } else {
            t.iter().sum::<f64>() / t.len() as f64
        }
    }

    pub fn jain(&self, warmup: SimTime) -> Option<f64> {
        jain_index(&self.source_throughputs(warmup))
    }

    pub fn total_delivered_bits(&self) -> u64 {
        self.nodes.iter().map(|n| n.delivered_bits(SimTime::ZERO)).sum()
    }

    pub const CSV_HEADER: &'static str = "run_id,node_id,throughput_bps,mean_delay_s,frames_delivered,\
frames_dropped_queue,frames_dropped_retry,frames_dropped_channel,\
throughput_warm_bps,mean_delay_warm_s,mean_delay_with_queued_s";

    /// One row per source node. Empty delay cells mean no sample.
    pub fn to_csv_rows(&self, run_id: &str, warmup: SimTime) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.source {
                continue;
            }
            let id = NodeId(i as u32);
            let _ = writeln!(
                s,
                "{run_id},{i},{},{},{},{},{},{},{},{},{}",
                self.throughput_bps(id, SimTime::ZERO),
                opt(n.mean_delay_s(SimTime::ZERO, false)),
                n.frames_delivered(SimTime::ZERO),
                n.dropped_queue,
                n.dropped_retry,
                n.dropped_channel,
                self.throughput_bps(id, warmup),
                opt(n.mean_delay_s(warmup, false)),
                opt(n.mean_delay_s(SimTime::ZERO, true)),
            );
        }
        s
    }
}

/// Accumulates deliveries, discarding duplicates of the same (source, seq).
#[derive(Debug)]
pub struct MetricsCollector {
    nodes: Vec<NodeMetrics>,
    seen: HashSet<(NodeId, u64)>,
    mode_usage: BTreeMap<String, u64>,
    phy_drops: BTreeMap<String, u64>,
}

impl MetricsCollector {
    pub fn new(n_nodes: usize, sources: impl IntoIterator<Item = NodeId>) -> Self {
        let mut nodes = vec![NodeMetrics::default(); n_nodes];
        for s in sources {
            nodes[s.index()].source = true;
        }
        MetricsCollector {
            nodes,
            seen: HashSet::new(),
            mode_usage: BTreeMap::new(),
            phy_drops: BTreeMap::new(),
        }
    }

    /// Returns false for a duplicate.
    pub fn record_delivery(
        &mut self,
        source: NodeId,
        seq: u64,
        enqueued_at: SimTime,
        delivered_at: SimTime,
        bits: u64,
    ) -> bool {
        assert!(delivered_at >= enqueued_at, "delivery before enqueue");
        if !self.seen.insert((source, seq)) {
            return false;
        }
        self.nodes[source.index()].deliveries.push(Delivery {
            at: delivered_at,
            delay: delivered_at - enqueued_at,
            bits,
        });
        true
    }

    pub fn record_queue_drop(&mut self, source: NodeId) {
        self.nodes[source.index()].dropped_queue += 1;
    }

    pub fn record_retry_drop(&mut self, source: NodeId) {
        self.nodes[source.index()].dropped_retry += 1;
    }

    pub fn record_channel_drop(&mut self, source: NodeId) {
        self.nodes[source.index()].dropped_channel += 1;
    }

    pub fn record_phy_drop(&mut self, cause: &str) {
        *self.phy_drops.entry(cause.to_string()).or_default() += 1;
    }

    pub fn record_mode(&mut self, label: String) {
        *self.mode_usage.entry(label).or_default() += 1;
    }

    pub fn finish(
        mut self,
        duration: SimTime,
        queued: impl IntoIterator<Item = (NodeId, SimTime)>,
    ) -> MetricsReport {
        for (node, enqueued_at) in queued {
            self.nodes[node.index()].queued_ages.push(duration.saturating_sub(enqueued_at));
        }
        MetricsReport {
            duration,
            nodes: self.nodes,
            mode_usage: self.mode_usage,
            phy_drops: self.phy_drops,
        }
    }
}

/// `(Σx)² / (n·Σx²)`; `None` when every value is zero or the list is empty.
pub fn jain_index(values: &[f64]) -> Option<f64> {
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|x| x * x).sum();
    if values.is_empty() || sq <= 0.0 {
        return None;
    }
    Some((sum * sum / (values.len() as f64 * sq)).min(1.0))
}

/// Mean with a two-sided 95% t-interval half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// `None` with fewer than two samples.
    pub ci95: Option<f64>,
    pub n: usize,
}

fn t_quantile(p: f64, df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("valid t distribution").inverse_cdf(p)
}

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn estimate(samples: &[f64]) -> Option<Estimate> {
    if samples.is_empty() {
        return None;
    }
    let (mean, sd) = mean_sd(samples);
    let n = samples.len();
    let ci95 = (n >= 2).then(|| t_quantile(0.975, n - 1) * sd / (n as f64).sqrt());
    Some(Estimate { mean, ci95, n })
}

/// Lower one-sided 95% bound on the mean of `a[i] - b[i]`.
pub fn paired_lower_bound(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    if a.len() < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_sd(&d);
    Some(mean - t_quantile(0.95, d.len() - 1) * sd / (d.len() as f64).sqrt())
}

/// `a > b` at one-sided 95% confidence on paired samples.
pub fn significantly_greater(a: &[f64], b: &[f64]) -> bool {
    paired_lower_bound(a, b).is_some_and(|lb| lb > 0.0)
}

/// `a >= b` unless the data show `a < b` at one-sided 95% confidence.
pub fn not_significantly_less(a: &[f64], b: &[f64]) -> bool {
    !significantly_greater(b, a)
}

/// Aggregate rows pooled over every source node of every run.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub throughput_bps: Option<Estimate>,
    pub throughput_warm_bps: Option<Estimate>,
    pub delay_s: Option<Estimate>,
    pub delay_with_queued_s: Option<Estimate>,
    /// One value per run.
    pub jain: Option<Estimate>,
    pub runs: usize,
}

pub fn summarize(reports: &[MetricsReport], warmup: SimTime) -> Summary {
    let mut thr = Vec::new();
    let mut thr_w = Vec::new();
    let mut delay = Vec::new();
    let mut delay_q = Vec::new();
    let mut jain = Vec::new();
    for r in reports {
        thr.extend(r.source_throughputs(SimTime::ZERO));
        thr_w.extend(r.source_throughputs(warmup));
        for n in r.nodes.iter().filter(|n| n.source) {
            delay.extend(n.mean_delay_s(SimTime::ZERO, false));
            delay_q.extend(n.mean_delay_s(SimTime::ZERO, true));
        }
        jain.extend(r.jain(SimTime::ZERO));
    }
    Summary {
        throughput_bps: estimate(&thr),
        throughput_warm_bps: estimate(&thr_w),
        delay_s: estimate(&delay),
        delay_with_queued_s: estimate(&delay_q),
        jain: estimate(&jain),
        runs: reports.len(),
    }
}

impl Summary {
    pub const CSV_HEADER: &'static str = "metric,mean,ci95,n";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        let rows = [
            ("throughput_bps", self.throughput_bps),
            ("throughput_warm_bps", self.throughput_warm_bps),
            ("mean_delay_s", self.delay_s),
            ("mean_delay_with_queued_s", self.delay_with_queued_s),
            ("jain", self.jain),
        ];
        for (name, e) in rows {
            match e {
                Some(e) => {
                    let ci = e.ci95.map(|c| format!("{c}")).unwrap_or_default();
                    let _ = writeln!(s, "{name},{},{ci},{}", e.mean, e.n);
                }
                None => {
                    let _ = writeln!(s, "{name},,,0");
                }
            }
        }
        s
    }
}
