//! Config-driven sweeps.
//!
//! An experiment file names a base configuration plus sweep axes. The
//! cartesian product of the axes gives the points; every point runs on
//! every topology with every seed. Results land in one directory per point
//! and a `manifest.toml` binds each directory to the hash of the resolved
//! point configuration, so an interrupted sweep resumes where it stopped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::PathModel;
use crate::engine::{run_with_model, ConfigError, SimConfig, SimTime};
use crate::mac::{MacParams, MimoPolicy};
use crate::metrics::{estimate, summarize, MetricsReport, Summary};
use crate::phy::{BerModel, CcaMethod, PhyParams};
use crate::topology::{class_target, generate, ContentionClass, GenerateParams, Topology, TopologyError};

pub const MANIFEST: &str = "manifest.toml";
pub const RESULTS_CSV: &str = "results.csv";
pub const POINTS_CSV: &str = "points.csv";

const PRESETS: [(&str, &str); 6] = [
    ("cca-study", include_str!("../presets/cca-study.toml")),
    ("alamouti", include_str!("../presets/alamouti.toml")),
    ("vblast", include_str!("../presets/vblast.toml")),
    ("hyb-a-sweep", include_str!("../presets/hyb-a-sweep.toml")),
    ("hyb-b-sweep", include_str!("../presets/hyb-b-sweep.toml")),
    ("hyb-c", include_str!("../presets/hyb-c.toml")),
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Where the topologies of an experiment come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySet {
    /// Explicit topology files; when non-empty the generator is not used.
    pub files: Vec<PathBuf>,
    pub classes: Vec<ContentionClass>,
    pub per_class: usize,
    pub seed: u64,
    pub nodes: usize,
    pub width: f64,
    pub height: f64,
    pub max_pair_distance: f64,
}

impl Default for TopologySet {
    fn default() -> Self {
        let g = GenerateParams::default();
        TopologySet {
            files: Vec::new(),
            classes: vec![ContentionClass::Medium],
            per_class: 5,
            seed: 0,
            nodes: g.n_nodes,
            width: g.width,
            height: g.height,
            max_pair_distance: g.max_pair_distance,
        }
    }
}

impl TopologySet {
    /// Generator parameters for one class.
    pub fn generate_params(&self, class: ContentionClass) -> GenerateParams {
        GenerateParams {
            n_nodes: self.nodes,
            width: self.width,
            height: self.height,
            max_pair_distance: self.max_pair_distance,
            target_degree: class_target(class),
            ..GenerateParams::default()
        }
    }

    /// Loads or generates every topology, labelled.
    pub fn resolve(&self, base_dir: &Path) -> Result<Vec<(String, Topology)>, ExperimentError> {
        if !self.files.is_empty() {
            return self
                .files
                .iter()
                .map(|f| {
                    let path = if f.is_absolute() { f.clone() } else { base_dir.join(f) };
                    let label = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok((label, Topology::load(&path)?))
                })
                .collect();
        }
        let mut out = Vec::new();
        for &class in &self.classes {
            let params = self.generate_params(class);
            for i in 0..self.per_class {
                let seed = topology_seed(self.seed, class, i);
                out.push((format!("{}-{i}", class.to_string().to_ascii_lowercase()), generate(&params, seed)?));
            }
        }
        Ok(out)
    }
}

/// Seed of the `index`-th generated topology of a class.
pub fn topology_seed(base: u64, class: ContentionClass, index: usize) -> u64 {
    let c = match class {
        ContentionClass::Low => 0,
        ContentionClass::Medium => 1,
        ContentionClass::High => 2,
    };
    base.wrapping_mul(1_000).wrapping_add(c * 100 + index as u64)
}

/// Sweep axes. Threshold axes override the matching threshold of every
/// joint policy and leave fixed policies alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub policy: Vec<MimoPolicy>,
    pub cca: Vec<CcaMethod>,
    pub sinr_min_db: Vec<f64>,
    pub sinr_max_db: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep { policy: vec![MimoPolicy::Siso], cca: Vec::new(), sinr_min_db: Vec::new(), sinr_max_db: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub duration_s: f64,
    /// Deliveries before this instant are excluded from the summary.
    pub warmup_s: f64,
    pub seeds: Vec<u64>,
    pub topologies: TopologySet,
    pub phy: PhyParams,
    pub mac: MacParams,
    pub path: PathModel,
    pub sweep: Sweep,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            duration_s: 10.0,
            warmup_s: 0.0,
            seeds: (1..=5).collect(),
            topologies: TopologySet::default(),
            phy: PhyParams::default(),
            mac: MacParams::default(),
            path: PathModel::default(),
            sweep: Sweep::default(),
        }
    }
}

/// One resolved sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub label: String,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub seeds: Vec<u64>,
    pub policy: MimoPolicy,
    pub phy: PhyParams,
    pub mac: MacParams,
    pub path: PathModel,
}

impl Point {
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            duration: SimTime::from_secs_f64(self.duration_s),
            seed,
            policy: self.policy,
            phy: self.phy.clone(),
            mac: self.mac.clone(),
            path: self.path.clone(),
        }
    }

    pub fn warmup(&self) -> SimTime {
        SimTime::from_secs_f64(self.warmup_s)
    }

    /// Hex SHA-256 over the point snapshot and the topology files it runs on.
    pub fn hash(&self, topologies: &[(String, Topology)]) -> String {
        let mut h = Sha256::new();
        h.update(self.snapshot().as_bytes());
        for (label, t) in topologies {
            h.update(label.as_bytes());
            h.update(t.to_text().as_bytes());
        }
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("point serializes")
    }
}

/// Directory-safe label naming the policy and its thresholds.
pub fn policy_label(policy: &MimoPolicy) -> String {
    match *policy {
        MimoPolicy::HybA { sinr_min_db, .. } => format!("{policy}-min{sinr_min_db}"),
        MimoPolicy::HybB { sinr_max_db, .. } => format!("{policy}-max{sinr_max_db}"),
        MimoPolicy::HybC { sinr_min_db, sinr_max_db, .. } => format!("{policy}-min{sinr_min_db}-max{sinr_max_db}"),
        _ => policy.to_string(),
    }
}

fn with_min(p: MimoPolicy, v: f64) -> MimoPolicy {
    match p {
        MimoPolicy::HybA { n, .. } => MimoPolicy::HybA { n, sinr_min_db: v },
        MimoPolicy::HybC { n, sinr_max_db, .. } => MimoPolicy::HybC { n, sinr_min_db: v, sinr_max_db },
        other => other,
    }
}

fn with_max(p: MimoPolicy, v: f64) -> MimoPolicy {
    match p {
        MimoPolicy::HybB { n, .. } => MimoPolicy::HybB { n, sinr_max_db: v },
        MimoPolicy::HybC { n, sinr_min_db, .. } => MimoPolicy::HybC { n, sinr_min_db, sinr_max_db: v },
        other => other,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::parse(text).expect("bundled preset parses"))
    }

    pub fn preset_text(name: &str) -> Option<&'static str> {
        PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name `{}` is not a directory name", self.name));
        }
        if !(self.duration_s > 0.0) || !(self.warmup_s >= 0.0) || self.warmup_s >= self.duration_s {
            return bad("need 0 <= warmup_s < duration_s".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if self.sweep.policy.is_empty() {
            return bad("sweep.policy is empty".into());
        }
        let t = &self.topologies;
        if t.files.is_empty() && (t.classes.is_empty() || t.per_class == 0) {
            return bad("topologies: give files or at least one class with per_class >= 1".into());
        }
        for p in self.points() {
            p.sim_config(0).validate(&BerModel::default()).or_else(|e| match e {
                // The calibration table is checked again when the points run.
                ConfigError::Calibration(_) => Ok(()),
                e => Err(ExperimentError::Invalid(format!("{}: {e}", p.label))),
            })?;
        }
        Ok(())
    }

    /// Cartesian product of the axes, duplicates removed, in axis order.
    pub fn points(&self) -> Vec<Point> {
        let cca: Vec<Option<CcaMethod>> = if self.sweep.cca.is_empty() {
            vec![None]
        } else {
            self.sweep.cca.iter().copied().map(Some).collect()
        };
        let mins: Vec<Option<f64>> = axis(&self.sweep.sinr_min_db);
        let maxs: Vec<Option<f64>> = axis(&self.sweep.sinr_max_db);
        let mut out: Vec<Point> = Vec::new();
        for &c in &cca {
            for &base in &self.sweep.policy {
                for &lo in &mins {
                    for &hi in &maxs {
                        let mut policy = base;
                        if let Some(v) = lo {
                            policy = with_min(policy, v);
                        }
                        if let Some(v) = hi {
                            policy = with_max(policy, v);
                        }
                        let mut phy = self.phy.clone();
                        let mut label = policy_label(&policy);
                        if let Some(c) = c {
                            phy.cca_method = c;
                            label = format!("{c}-{label}");
                        }
                        if out.iter().any(|p| p.label == label) {
                            continue;
                        }
                        out.push(Point {
                            label,
                            duration_s: self.duration_s,
                            warmup_s: self.warmup_s,
                            seeds: self.seeds.clone(),
                            policy,
                            phy,
                            mac: self.mac.clone(),
                            path: self.path.clone(),
                        });
                    }
                }
            }
        }
        out
    }
}

fn axis(v: &[f64]) -> Vec<Option<f64>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().copied().map(Some).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub topology: String,
    pub seed: u64,
    pub report: MetricsReport,
}

impl RunResult {
    pub fn run_id(&self) -> String {
        format!("{}-s{}", self.topology, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub point: Point,
    /// Ordered topology-major, then by seed.
    pub runs: Vec<RunResult>,
}

impl PointResult {
    /// Mean per-source throughput of each run, in run order.
    pub fn throughputs(&self) -> Vec<f64> {
        let w = self.point.warmup();
        self.runs.iter().map(|r| r.report.mean_throughput_bps(w)).collect()
    }

    pub fn jains(&self) -> Vec<f64> {
        let w = self.point.warmup();
        self.runs.iter().filter_map(|r| r.report.jain(w)).collect()
    }

    pub fn mean_throughput(&self) -> f64 {
        let t = self.throughputs();
        t.iter().sum::<f64>() / t.len().max(1) as f64
    }

    pub fn summary(&self) -> Summary {
        let reports: Vec<MetricsReport> = self.runs.iter().map(|r| r.report.clone()).collect();
        summarize(&reports, self.point.warmup())
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = format!("{}\n", MetricsReport::CSV_HEADER);
        for r in &self.runs {
            s.push_str(&r.report.to_csv_rows(&r.run_id(), self.point.warmup()));
        }
        s
    }
}

/// Runs every (topology, seed) pair of a point on the current rayon pool.
pub fn run_point(
    point: &Point,
    topologies: &[(String, Topology)],
    model: &BerModel,
) -> Result<PointResult, ExperimentError> {
    point.sim_config(0).validate(model)?;
    let jobs: Vec<(&String, &Topology, u64)> = topologies
        .iter()
        .flat_map(|(l, t)| point.seeds.iter().map(move |&s| (l, t, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(label, topo, seed)| RunResult {
            topology: label.clone(),
            seed,
            report: run_with_model(&point.sim_config(seed), topo, model),
        })
        .collect();
    Ok(PointResult { point: point.clone(), runs })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    #[serde(default)]
    pub points: BTreeMap<String, ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hash: String,
    pub dir: String,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(toml::from_str(&text)?)
    }

    fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        fs::write(path, toml::to_string(self).expect("manifest serializes")).map_err(io_err(path))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutcome {
    pub root: PathBuf,
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
}

/// Runs the sweep into `out_root/<name>`, skipping points the manifest
/// already records under the same hash.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    out_root: &Path,
    model: &BerModel,
) -> Result<ExperimentOutcome, ExperimentError> {
    let root = out_root.join(&cfg.name);
    fs::create_dir_all(&root).map_err(io_err(&root))?;
    let topologies = cfg.topologies.resolve(base_dir)?;
    let topo_dir = root.join("topologies");
    fs::create_dir_all(&topo_dir).map_err(io_err(&topo_dir))?;
    for (label, t) in &topologies {
        let p = topo_dir.join(format!("{label}.txt"));
        t.save(&p)?;
    }

    let manifest_path = root.join(MANIFEST);
    let mut manifest = if manifest_path.exists() {
        Manifest::load(&manifest_path)?
    } else {
        Manifest { experiment: cfg.name.clone(), points: BTreeMap::new() }
    };

    let mut outcome = ExperimentOutcome { root: root.clone(), ..Default::default() };
    let mut results: Vec<PointResult> = Vec::new();
    for point in cfg.points() {
        let hash = point.hash(&topologies);
        let dir = root.join(&point.label);
        let done = manifest.points.get(&point.label).is_some_and(|e| e.hash == hash)
            && dir.join("metrics.csv").exists();
        if done {
            log::info!("{}: up to date, skipped", point.label);
            outcome.skipped.push(point.label.clone());
            continue;
        }
        log::info!("{}: {} runs", point.label, topologies.len() * point.seeds.len());
        let res = run_point(&point, &topologies, model)?;
        write_point(&dir, &res)?;
        manifest.points.insert(point.label.clone(), ManifestEntry { hash, dir: point.label.clone() });
        manifest.save(&manifest_path)?;
        outcome.completed.push(point.label.clone());
        results.push(res);
    }
    if !results.is_empty() || !root.join(RESULTS_CSV).exists() {
        write_tables(&root, cfg)?;
    }
    Ok(outcome)
}

fn write_point(dir: &Path, res: &PointResult) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = [
        ("config.toml", res.point.snapshot()),
        ("seeds.txt", res.point.seeds.iter().map(|s| format!("{s}\n")).collect()),
        ("metrics.csv", res.metrics_csv()),
        ("summary.csv", res.summary().to_csv()),
        ("runs.csv", runs_csv(res)),
    ];
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
    }
    Ok(())
}

pub const RUNS_HEADER: &str = "point,policy,cca,topology,seed,mean_throughput_bps,jain,mean_delay_s";

fn runs_csv(res: &PointResult) -> String {
    let w = res.point.warmup();
    let mut s = format!("{RUNS_HEADER}\n");
    for r in &res.runs {
        let delays: Vec<f64> = r.report.nodes.iter().filter_map(|n| n.mean_delay_s(w, false)).collect();
        let delay = estimate(&delays).map(|e| e.mean.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            res.point.label,
            res.point.policy,
            res.point.phy.cca_method,
            r.topology,
            r.seed,
            r.report.mean_throughput_bps(w),
            r.report.jain(w).map(|j| j.to_string()).unwrap_or_default(),
            delay
        );
    }
    s
}

pub const POINTS_HEADER: &str = "point,policy,cca,throughput_bps,throughput_ci95,jain,jain_ci95,runs";

/// Rebuilds the experiment-wide tables from the per-point `runs.csv` files.
fn write_tables(root: &Path, cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let mut all = format!("{RUNS_HEADER}\n");
    let mut points = format!("{POINTS_HEADER}\n");
    for point in cfg.points() {
        let p = root.join(&point.label).join("runs.csv");
        let Ok(text) = fs::read_to_string(&p) else { continue };
        let mut thr = Vec::new();
        let mut jain = Vec::new();
        for line in text.lines().skip(1) {
            all.push_str(line);
            all.push('\n');
            let cols: Vec<&str> = line.split(',').collect();
            if let Ok(v) = cols[5].parse::<f64>() {
                thr.push(v);
            }
            if let Ok(v) = cols[6].parse::<f64>() {
                jain.push(v);
            }
        }
        let fmt = |v: &[f64]| match estimate(v) {
            Some(e) => (e.mean.to_string(), e.ci95.map(|c| c.to_string()).unwrap_or_default()),
            None => (String::new(), String::new()),
        };
        let (tm, tc) = fmt(&thr);
        let (jm, jc) = fmt(&jain);
        let _ = writeln!(
            points,
            "{},{},{},{tm},{tc},{jm},{jc},{}",
            point.label,
            point.policy,
            point.phy.cca_method,
            thr.len()
        );
    }
    for (name, body) in [(RESULTS_CSV, all), (POINTS_CSV, points)] {
        let p = root.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
    }
    Ok(())
}
