use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lmapf_core::grid::Location;
use lmapf_core::heuristics::{CrisscrossProfile, GuidanceMode};
use lmapf_core::sim::SolverKind;
use lmapf_core::wlns::NeighborhoodMode;

#[derive(Debug, Parser)]
#[command(name = "lmapf", version, about = "Lifelong multi-agent path finding engine")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads for multi-seed sweeps (overridden by SILLM_THREADS).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes and print one metrics record per seed.
    Simulate(SimulateArgs),
    /// Run one data-collection episode and write an imitation dataset.
    Collect(CollectArgs),
    /// Normalize throughputs per (map, seed) group and print mean scores per solver.
    Score(ScoreArgs),
    /// Print a heuristic field as a text grid.
    DumpHeuristic(DumpArgs),
    /// Load a weights file and report its shape.
    VerifyWeights(VerifyArgs),
}

#[derive(Debug, Args, Clone)]
pub struct EpisodeArgs {
    /// Key=value file merged under the command-line flags.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// MovingAI .map file.
    #[arg(long)]
    pub map: PathBuf,

    /// Number of agents (defaults to every start in --scenario).
    #[arg(long)]
    pub agents: Option<usize>,

    /// Start locations file (`seed <u64>` then `id row col` lines).
    #[arg(long)]
    pub scenario: Option<PathBuf>,

    #[arg(long)]
    pub steps: u64,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, default_value = "pibt")]
    pub solver: SolverKind,

    #[arg(long, default_value = "bd")]
    pub guidance: GuidanceMode,

    #[arg(long, default_value = "strict")]
    pub crisscross: CrisscrossProfile,

    /// Dynamic guidance penalty per registered visit of a cell.
    #[arg(long, default_value_t = 1.0)]
    pub c_vertex: f64,

    /// Dynamic guidance penalty per registered opposite traversal of an edge.
    #[arg(long, default_value_t = 2.0)]
    pub c_edge: f64,

    /// Policy weights, required by the learned solvers.
    #[arg(long)]
    pub weights: Option<PathBuf>,

    /// LNS window length.
    #[arg(long, default_value_t = 15)]
    pub window: usize,

    /// LNS iterations per step.
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,

    #[arg(long, default_value_t = 8)]
    pub neighborhood: usize,

    #[arg(long, default_value = "collision")]
    pub neighborhood_mode: NeighborhoodMode,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,

    /// Several seeds, as `a,b,c` or `a..b` (half-open); overrides --seed.
    #[arg(long)]
    pub seeds: Option<String>,

    /// Per-step joint actions, one line per step.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Add plan-time statistics to the metrics record.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,

    #[arg(long)]
    pub out: PathBuf,

    /// Observation window (taken from the weights when given).
    #[arg(long, default_value_t = 11)]
    pub fov: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub map: PathBuf,

    /// Goal cell as `row,col`.
    #[arg(long)]
    pub goal: Location,

    /// Start cell for dynamic guidance, as `row,col`.
    #[arg(long)]
    pub start: Option<Location>,

    #[arg(long, default_value = "bd")]
    pub guidance: GuidanceMode,

    #[arg(long, default_value = "strict")]
    pub crisscross: CrisscrossProfile,

    /// Dynamic guidance penalty per registered visit of a cell.
    #[arg(long, default_value_t = 1.0)]
    pub c_vertex: f64,

    /// Dynamic guidance penalty per registered opposite traversal of an edge.
    #[arg(long, default_value_t = 2.0)]
    pub c_edge: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub weights: PathBuf,
}

/// Expands `--config PATH` into flags placed right after the subcommand, so flags given
/// on the command line override the file.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    let mut i = 0;
    while i < argv.len() {
        if argv[i] == "--config" {
            path = argv.get(i + 1).cloned();
            if path.is_none() {
                return Err("--config needs a path".into());
            }
        } else if let Some(p) = argv[i].strip_prefix("--config=") {
            path = Some(p.to_string());
        }
        i += 1;
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let flags = config_flags(&text)?;
    let Some(sub) = argv.iter().skip(1).position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let at = sub + 2;
    let mut out = argv[..at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

const SUBCOMMANDS: [&str; 5] = ["simulate", "collect", "score", "dump-heuristic", "verify-weights"];

fn config_flags(text: &str) -> Result<Vec<String>, String> {
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", n + 1))?;
        let key = match key.trim() {
            "guidance.mode" => "guidance".to_string(),
            "guidance.crisscross_profile" => "crisscross".to_string(),
            k => k.trim_start_matches("guidance.").replace('_', "-"),
        };
        let value = value.trim();
        if key == "config" {
            return Err(format!("config line {}: nested config files are not supported", n + 1));
        }
        match value {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => {
                flags.push(format!("--{key}"));
                flags.push(value.to_string());
            }
        }
    }
    Ok(flags)
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let bad = || format!("invalid seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}
