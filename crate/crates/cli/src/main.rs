use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mimonet::experiment::{run_experiment, topology_seed, ExperimentConfig, TopologySet};
use mimonet::mc_oracle::{calibrate_table, curve_csv, CalibrationParams};
use mimonet::phy::{AtTable, BerModel};
use mimonet::topology::{generate, ContentionClass};

#[derive(Parser)]
#[command(name = "mimonet", version, about = "MIMO ad hoc network simulator")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root.
    #[arg(long, global = true, env = "MIMONET_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep from a config file or a bundled preset name.
    Run(RunArgs),
    /// Write LOW, MEDIUM and HIGH contention topologies.
    GenTopologies(GenArgs),
    /// Estimate V-BLAST a_t coefficients by Monte Carlo.
    Calibrate(CalibrateArgs),
    /// List bundled presets, or print one.
    Preset { name: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    config: String,
    /// Replaces the seed list with `seed, seed+1, ...` of the same length
    /// and reseeds topology generation.
    #[arg(long)]
    seed: Option<u64>,
    /// a_t table to use instead of the bundled one.
    #[arg(long)]
    at_table: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    per_class: usize,
    #[arg(long, default_value_t = 100)]
    nodes: usize,
    #[arg(long, default_value_t = 1600.0)]
    width: f64,
    #[arg(long, default_value_t = 1600.0)]
    height: f64,
    #[arg(long, default_value_t = 150.0)]
    max_pair_distance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Modes as MxN, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1x1,1x2,2x2,2x3,3x3,3x4,4x4,4x5,5x5")]
    modes: Vec<String>,
    #[arg(long)]
    trials: Option<u64>,
    /// Table output file (defaults to `<out-dir>/at_table.txt`).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    match cli.command {
        Command::Run(a) => run(a, &cli.out_dir),
        Command::GenTopologies(a) => gen_topologies(a, &cli.out_dir),
        Command::Calibrate(a) => calibrate(a, &cli.out_dir),
        Command::Preset { name: None } => {
            for n in ExperimentConfig::preset_names() {
                println!("{n}");
            }
            Ok(())
        }
        Command::Preset { name: Some(n) } => match ExperimentConfig::preset_text(&n) {
            Some(t) => {
                print!("{t}");
                Ok(())
            }
            None => bail!("no preset named `{n}`"),
        },
    }
}

fn run(a: RunArgs, out_dir: &Path) -> Result<()> {
    let path = Path::new(&a.config);
    let (mut cfg, base) = if path.exists() {
        let cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        (cfg, path.parent().unwrap_or(Path::new(".")).to_path_buf())
    } else if let Some(cfg) = ExperimentConfig::preset(&a.config) {
        (cfg, PathBuf::from("."))
    } else {
        bail!("`{}` is neither a file nor a preset", a.config);
    };
    if let Some(s) = a.seed {
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (s..s + n).collect();
        cfg.topologies.seed = s;
    }
    let model = match &a.at_table {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            BerModel::new(AtTable::parse(&text)?)
        }
        None => BerModel::default(),
    };
    let out = run_experiment(&cfg, &base, out_dir, &model)?;
    log::info!(
        "{}: {} points run, {} up to date",
        out.root.display(),
        out.completed.len(),
        out.skipped.len()
    );
    Ok(())
}

fn gen_topologies(a: GenArgs, out_dir: &Path) -> Result<()> {
    let set = TopologySet {
        nodes: a.nodes,
        width: a.width,
        height: a.height,
        max_pair_distance: a.max_pair_distance,
        ..TopologySet::default()
    };
    fs::create_dir_all(out_dir)?;
    for class in ContentionClass::ALL {
        let params = set.generate_params(class);
        for i in 0..a.per_class {
            let t = generate(&params, topology_seed(a.seed, class, i))
                .with_context(|| format!("{class} topology {i}"))?;
            let p = out_dir.join(format!("{}-{i}.txt", class.to_string().to_ascii_lowercase()));
            t.save(&p)?;
            let deg = t.sensing_degree(params.sense_range).mean;
            println!("{} mean degree {deg:.2} class {}", p.display(), t.contention_class());
        }
    }
    Ok(())
}

fn parse_mode(s: &str) -> Result<(u8, u8)> {
    let (m, n) = s.split_once(['x', 'X']).with_context(|| format!("mode `{s}` is not MxN"))?;
    Ok((m.trim().parse()?, n.trim().parse()?))
}

fn calibrate(a: CalibrateArgs, out_dir: &Path) -> Result<()> {
    let modes = a.modes.iter().map(|s| parse_mode(s)).collect::<Result<Vec<_>>>()?;
    let mut p = CalibrationParams::default();
    if let Some(t) = a.trials {
        p.trials = t;
        p.max_trials = p.max_trials.max(t);
    }
    let (table, cals) = calibrate_table(&modes, a.seed, &p);
    let output = a.output.unwrap_or_else(|| out_dir.join("at_table.txt"));
    if let Some(dir) = output.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&output, table.to_text())?;
    let samples: Vec<_> = cals.iter().flat_map(|c| c.samples.iter().cloned()).collect();
    let curve = output.with_extension("csv");
    fs::write(&curve, curve_csv(&samples))?;
    for c in &cals {
        println!("{}x{} a_t {:.4} spread {:.3}", c.m, c.n, c.a_t, c.spread());
    }
    println!("wrote {} and {}", output.display(), curve.display());
    Ok(())
}
