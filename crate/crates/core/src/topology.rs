//! Paired-node layouts on a rectangular terrain.
//!
//! Nodes come in mutual pairs (A sends to B and B sends to A). Layouts are
//! classified by their mean sensing degree: how many other nodes lie within
//! the SISO carrier-sensing range.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RngFactory, StreamKey};
use crate::NodeId;

/// Carrier-sensing range of a single-antenna node at the default
/// thresholds, in metres.
pub const SISO_SENSE_RANGE_M: f64 = 225.0;

/// Upper bound of the LOW class (exclusive) and lower bound of HIGH
/// (exclusive) in mean sensing degree.
pub const LOW_BELOW: f64 = 6.0;
pub const HIGH_ABOVE: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ContentionClass {
    Low,
    Medium,
    High,
}

impl ContentionClass {
    pub const ALL: [ContentionClass; 3] = [ContentionClass::Low, ContentionClass::Medium, ContentionClass::High];

    pub fn classify(mean_degree: f64) -> Self {
        if mean_degree < LOW_BELOW {
            ContentionClass::Low
        } else if mean_degree <= HIGH_ABOVE {
            ContentionClass::Medium
        } else {
            ContentionClass::High
        }
    }
}

impl fmt::Display for ContentionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContentionClass::Low => "LOW",
            ContentionClass::Medium => "MEDIUM",
            ContentionClass::High => "HIGH",
        })
    }
}

impl FromStr for ContentionClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LOW" => Ok(ContentionClass::Low),
            "MEDIUM" => Ok(ContentionClass::Medium),
            "HIGH" => Ok(ContentionClass::High),
            other => Err(format!("unknown contention class `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("could not reach mean sensing degree {target} (best {best:.2} after {attempts} attempts)")]
    Infeasible { target: f64, best: f64, attempts: u32 },
    #[error("{0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    width: f64,
    height: f64,
    positions: Vec<Position>,
    /// Directed flows `(source, destination)`.
    flows: Vec<(NodeId, NodeId)>,
    class: ContentionClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensingDegree {
    pub per_node: Vec<usize>,
    pub mean: f64,
}

impl Topology {
    /// Any flow set where each node sources at most one flow. Used for
    /// hand-built scenarios such as hidden terminals.
    pub fn with_flows(
        width: f64,
        height: f64,
        positions: Vec<Position>,
        flows: Vec<(NodeId, NodeId)>,
    ) -> Result<Self, TopologyError> {
        let bad = |m: String| Err(TopologyError::Invalid(m));
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return bad(format!("terrain {width} x {height} must be positive"));
        }
        for (i, p) in positions.iter().enumerate() {
            if !(p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height) {
                return bad(format!("node {i} at ({}, {}) outside terrain", p.x, p.y));
            }
        }
        let n = positions.len();
        let mut sources = vec![false; n];
        for &(s, d) in &flows {
            if s.index() >= n || d.index() >= n {
                return bad(format!("pair {s} -> {d} names an unknown node"));
            }
            if s == d {
                return bad(format!("node {s} paired with itself"));
            }
            if std::mem::replace(&mut sources[s.index()], true) {
                return bad(format!("node {s} sources two flows"));
            }
        }
        let mut t = Topology {
            width,
            height,
            positions,
            flows,
            class: ContentionClass::Low,
        };
        t.class = ContentionClass::classify(t.sensing_degree(SISO_SENSE_RANGE_M).mean);
        Ok(t)
    }

    /// Mutual pairs only: every node sends to and receives from exactly one
    /// partner.
    pub fn paired(
        width: f64,
        height: f64,
        positions: Vec<Position>,
        flows: Vec<(NodeId, NodeId)>,
    ) -> Result<Self, TopologyError> {
        let t = Self::with_flows(width, height, positions, flows)?;
        let n = t.positions.len();
        let mut partner: Vec<Option<NodeId>> = vec![None; n];
        for &(s, d) in &t.flows {
            partner[s.index()] = Some(d);
        }
        for (i, p) in partner.iter().enumerate() {
            match p {
                None => return Err(TopologyError::Invalid(format!("node {i} is in no pair"))),
                Some(d) if partner[d.index()] != Some(NodeId(i as u32)) => {
                    return Err(TopologyError::Invalid(format!(
                        "node {i} sends to {d} but {d} does not send back (node in two pairs)"
                    )))
                }
                _ => {}
            }
        }
        Ok(t)
    }

    pub fn empty(width: f64, height: f64) -> Self {
        Self::with_flows(width, height, Vec::new(), Vec::new()).expect("empty topology is valid")
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn position(&self, id: NodeId) -> Position {
        self.positions[id.index()]
    }

    pub fn flows(&self) -> &[(NodeId, NodeId)] {
        &self.flows
    }

    /// Destination of the flow sourced by `id`.
    pub fn destination(&self, id: NodeId) -> Option<NodeId> {
        self.flows.iter().find(|(s, _)| *s == id).map(|(_, d)| *d)
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.position(a).distance(self.position(b))
    }

    pub fn contention_class(&self) -> ContentionClass {
        self.class
    }

    pub fn max_pair_distance(&self) -> f64 {
        self.flows.iter().map(|&(s, d)| self.distance(s, d)).fold(0.0, f64::max)
    }

    /// Other nodes within `range` metres of each node.
    pub fn sensing_degree(&self, range: f64) -> SensingDegree {
        assert!(range > 0.0, "sense range must be positive");
        let n = self.positions.len();
        let mut per_node = vec![0usize; n];
        for i in 0..n {
            for j in i + 1..n {
                if self.positions[i].distance(self.positions[j]) <= range {
                    per_node[i] += 1;
                    per_node[j] += 1;
                }
            }
        }
        let mean = if n == 0 { 0.0 } else { per_node.iter().sum::<usize>() as f64 / n as f64 };
        SensingDegree { per_node, mean }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# class {} mean_degree {:.3}\n", self.class, self.sensing_degree(SISO_SENSE_RANGE_M).mean);
        s += &format!("terrain {} {}\n", self.width, self.height);
        for (i, p) in self.positions.iter().enumerate() {
            s += &format!("node {i} {} {}\n", p.x, p.y);
        }
        for (a, b) in &self.flows {
            s += &format!("pair {a} {b}\n");
        }
        s
    }

    /// Parses the line format and enforces the mutual-pair layout.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut terrain = None;
        let mut positions: Vec<Option<Position>> = Vec::new();
        let mut flows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("");
            let f: Vec<&str> = body.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let err = |message: String| TopologyError::Parse { line, message };
            let num = |i: usize, what: &str| -> Result<f64, TopologyError> {
                let v: f64 = f
                    .get(i)
                    .ok_or_else(|| err(format!("missing {what}")))?
                    .parse()
                    .map_err(|e| err(format!("{what}: {e}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(format!("{what} must be finite")))
                }
            };
            let id = |i: usize, what: &str| -> Result<u32, TopologyError> {
                f.get(i)
                    .ok_or_else(|| err(format!("missing {what}")))?
                    .parse()
                    .map_err(|e| err(format!("{what}: {e}")))
            };
            let arity = |k: usize| {
                if f.len() == k {
                    Ok(())
                } else {
                    Err(err(format!("`{}` takes {} fields, got {}", f[0], k - 1, f.len() - 1)))
                }
            };
            match f[0] {
                "terrain" => {
                    arity(3)?;
                    if terrain.is_some() {
                        return Err(err("duplicate terrain line".into()));
                    }
                    terrain = Some((num(1, "width")?, num(2, "height")?));
                }
                "node" => {
                    arity(4)?;
                    let i = id(1, "node id")? as usize;
                    if i >= positions.len() {
                        positions.resize(i + 1, None);
                    }
                    if positions[i].is_some() {
                        return Err(err(format!("duplicate node {i}")));
                    }
                    let p = Position { x: num(2, "x")?, y: num(3, "y")? };
                    if let Some((w, h)) = terrain {
                        if !(p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h) {
                            return Err(err(format!("node {i} at ({}, {}) outside terrain", p.x, p.y)));
                        }
                    }
                    positions[i] = Some(p);
                }
                "pair" => {
                    arity(3)?;
                    flows.push((NodeId(id(1, "source")?), NodeId(id(2, "destination")?)));
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        let (w, h) = terrain.ok_or_else(|| TopologyError::Invalid("missing terrain line".into()))?;
        let positions = positions
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| TopologyError::Invalid(format!("node ids skip {i}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::paired(w, h, positions, flows)
    }

    pub fn save(&self, path: &Path) -> Result<(), TopologyError> {
        fs::write(path, self.to_text()).map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = fs::read_to_string(path).map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateParams {
    pub n_nodes: usize,
    pub width: f64,
    pub height: f64,
    pub max_pair_distance: f64,
    pub target_degree: f64,
    pub sense_range: f64,
    /// Candidate placements scored per pair.
    pub candidates: usize,
    pub attempts: u32,
    /// Accepted relative error on the mean degree.
    pub tolerance: f64,
}

impl Default for GenerateParams {
    fn default() -> Self {
        GenerateParams {
            n_nodes: 40,
            width: 1000.0,
            height: 1000.0,
            max_pair_distance: 150.0,
            target_degree: 9.0,
            sense_range: SISO_SENSE_RANGE_M,
            candidates: 48,
            attempts: 8,
            tolerance: 0.2,
        }
    }
}

/// Desk-scale target degree for each class.
pub fn class_target(class: ContentionClass) -> f64 {
    match class {
        ContentionClass::Low => 4.0,
        ContentionClass::Medium => 9.0,
        ContentionClass::High => 16.0,
    }
}

fn place_attempt<R: Rng>(p: &GenerateParams, rng: &mut R) -> Vec<Position> {
    let n = p.n_nodes;
    let mut pos: Vec<Position> = Vec::with_capacity(n);
    let mut edges = 0usize;
    let total = p.target_degree * n as f64 / 2.0;
    let denom = (n * (n - 1)).max(1) as f64;
    let linked = |pos: &[Position], q: Position| pos.iter().filter(|o| o.distance(q) <= p.sense_range).count();
    while pos.len() < n {
        let m = (pos.len() + 2) as f64;
        let goal = total * m * (m - 1.0) / denom;
        let mut best: Option<(f64, Position, Position, usize)> = None;
        for _ in 0..p.candidates.max(1) {
            let a = Position { x: rng.random_range(0.0..=p.width), y: rng.random_range(0.0..=p.height) };
            let r = p.max_pair_distance * rng.random::<f64>().sqrt();
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            // Clamping towards the terrain never lengthens the pair.
            let b = Position {
                x: (a.x + r * th.cos()).clamp(0.0, p.width),
                y: (a.y + r * th.sin()).clamp(0.0, p.height),
            };
            let gained = linked(&pos, a) + linked(&pos, b) + usize::from(a.distance(b) <= p.sense_range);
            let miss = ((edges + gained) as f64 - goal).abs();
            if best.as_ref().is_none_or(|(bm, ..)| miss < *bm) {
                best = Some((miss, a, b, gained));
            }
        }
        let (_, a, b, gained) = best.unwrap();
        edges += gained;
        pos.push(a);
        pos.push(b);
    }
    pos
}

/// Greedy placement of mutual pairs steering the mean sensing degree to
/// `target_degree`. Falls back to the best attempt when it lands in the
/// target's class; fails otherwise.
pub fn generate(p: &GenerateParams, seed: u64) -> Result<Topology, TopologyError> {
    if p.n_nodes % 2 != 0 {
        return Err(TopologyError::Invalid(format!("node count {} must be even", p.n_nodes)));
    }
    if !(p.max_pair_distance > 0.0) {
        return Err(TopologyError::Invalid("max pair distance must be positive".into()));
    }
    let factory = RngFactory::new(seed);
    let flows: Vec<(NodeId, NodeId)> = (0..p.n_nodes as u32 / 2)
        .flat_map(|k| [(NodeId(2 * k), NodeId(2 * k + 1)), (NodeId(2 * k + 1), NodeId(2 * k))])
        .collect();
    let mut best: Option<(f64, Topology)> = None;
    for attempt in 0..p.attempts.max(1) {
        let mut rng = factory.stream(StreamKey::Topology { attempt });
        let pos = place_attempt(p, &mut rng);
        let t = Topology::paired(p.width, p.height, pos, flows.clone())?;
        let mean = t.sensing_degree(p.sense_range).mean;
        let err = if p.target_degree > 0.0 { (mean / p.target_degree - 1.0).abs() } else { mean };
        if err <= p.tolerance {
            return Ok(t);
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, t));
        }
    }
    let (_, t) = best.expect("at least one attempt");
    let mean = t.sensing_degree(p.sense_range).mean;
    if ContentionClass::classify(mean) == ContentionClass::classify(p.target_degree) {
        log::warn!("mean sensing degree {mean:.2} misses target {} by more than the tolerance", p.target_degree);
        Ok(t)
    } else {
        Err(TopologyError::Infeasible { target: p.target_degree, best: mean, attempts: p.attempts.max(1) })
    }
}
