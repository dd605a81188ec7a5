mod args;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::Parser;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use args::{parse_seeds, Cli, Command, CollectArgs, DumpArgs, EpisodeArgs, ScoreArgs, SimulateArgs, VerifyArgs};
use lmapf_core::grid::{parse_map, GridMap, Location, Scenario};
use lmapf_core::heuristics::{
    backward_dijkstra, dynamic_guidance_field, plan_guide_path, CostMode, CrisscrossProfile, EdgeCostModel,
    GuidanceMode, TrafficCounts, TrafficWeights,
};
use lmapf_core::observe::{DatasetWriter, ObservationConfig};
use lmapf_core::policy::{NeuralPolicy, PolicyWeights};
use lmapf_core::sim::{
    compute_score, random_starts, run_episode, Episode, EpisodeOutputs, GuidanceConfig, Metrics, SimError, SolverKind,
};
use lmapf_core::wlns::LnsConfig;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Input(anyhow::Error),
    Safety(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
            Failure::Safety(_) => 4,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Collision { .. } => Failure::Safety(e.into()),
            SimError::Io(_) => Failure::Runtime(e.into()),
            _ => Failure::Input(e.into()),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetricsRecord {
    map: String,
    solver: String,
    guidance: String,
    seed: u64,
    steps: u64,
    agents: usize,
    goals_reached: u64,
    throughput: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_plan_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_plan_ms: Option<f64>,
}

fn read_map(path: &Path) -> Outcome<GridMap> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read map {}", path.display()))
        .map_err(input)?;
    parse_map(&text)
        .with_context(|| format!("map {}", path.display()))
        .map_err(input)
}

fn map_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_weights(path: &Path) -> Outcome<PolicyWeights> {
    let file = File::open(path)
        .with_context(|| format!("cannot open weights {}", path.display()))
        .map_err(input)?;
    PolicyWeights::load(BufReader::new(file))
        .with_context(|| format!("weights {}", path.display()))
        .map_err(input)
}

fn guidance_config(mode: GuidanceMode, crisscross: CrisscrossProfile, c_vertex: f64, c_edge: f64) -> Outcome<GuidanceConfig> {
    let traffic = TrafficWeights { c_vertex, c_edge };
    let g = GuidanceConfig {
        crisscross,
        traffic,
        ..GuidanceConfig::new(mode)
    };
    EdgeCostModel::traffic(traffic)
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(g)
}

struct Prepared {
    map: GridMap,
    scenario: Option<Scenario>,
    policy: Option<NeuralPolicy>,
}

fn prepare(a: &EpisodeArgs) -> Outcome<Prepared> {
    if a.solver.needs_policy() && a.weights.is_none() {
        return Err(Failure::Usage(format!("--solver {} requires --weights", a.solver.as_str())));
    }
    if a.agents.is_none() && a.scenario.is_none() {
        return Err(Failure::Usage("either --agents or --scenario is required".into()));
    }
    if a.window == 0 {
        return Err(Failure::Usage("--window must be at least 1".into()));
    }
    if a.steps == 0 {
        return Err(Failure::Usage("--steps must be at least 1".into()));
    }
    let map = read_map(&a.map)?;
    let scenario = match &a.scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read scenario {}", p.display()))
                .map_err(input)?;
            let s = Scenario::parse(&text).map_err(input)?;
            s.validate(&map).map_err(input)?;
            Some(s)
        }
        None => None,
    };
    let policy = match &a.weights {
        Some(p) => Some(NeuralPolicy::new(read_weights(p)?)),
        None => None,
    };
    Ok(Prepared { map, scenario, policy })
}

fn starts_for(a: &EpisodeArgs, p: &Prepared, seed: u64) -> Outcome<Vec<Location>> {
    match &p.scenario {
        Some(s) => {
            let n = a.agents.unwrap_or(s.starts.len());
            if n > s.starts.len() {
                return Err(input(anyhow!(
                    "scenario has {} starts but {n} agents were requested",
                    s.starts.len()
                )));
            }
            Ok(s.starts[..n].to_vec())
        }
        None => Ok(random_starts(&p.map, a.agents.unwrap_or(0), seed)?),
    }
}

fn default_seed(a: &EpisodeArgs, p: &Prepared) -> u64 {
    a.seed.or(p.scenario.as_ref().map(|s| s.seed)).unwrap_or(0)
}

fn episode<'a>(a: &EpisodeArgs, p: &'a Prepared, seed: u64, solver: SolverKind) -> Outcome<Episode<'a>> {
    let mut ep = Episode::new(&p.map, starts_for(a, p, seed)?, a.steps, seed);
    ep.solver = solver;
    ep.guidance = guidance_config(a.guidance, a.crisscross, a.c_vertex, a.c_edge)?;
    ep.policy = p.policy.as_ref();
    ep.lns = LnsConfig {
        window: a.window,
        iterations: a.iters,
        neighborhood_size: a.neighborhood,
        selection_mode: a.neighborhood_mode,
        seed,
    };
    Ok(ep)
}

fn record(a: &EpisodeArgs, seed: u64, m: &Metrics, timing: bool) -> MetricsRecord {
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    MetricsRecord {
        map: map_name(&a.map),
        solver: a.solver.as_str().to_string(),
        guidance: a.guidance.as_str().to_string(),
        seed,
        steps: m.steps,
        agents: m.agents,
        goals_reached: m.goals_reached,
        throughput: m.throughput,
        mean_plan_ms: timing.then(|| ms(m.mean_plan_time())),
        max_plan_ms: timing.then(|| ms(m.max_plan_time())),
    }
}

fn simulate(args: SimulateArgs) -> Outcome<()> {
    let a = &args.episode;
    let prepared = prepare(a)?;
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s).map_err(Failure::Usage)?,
        None => vec![default_seed(a, &prepared)],
    };
    if args.trace.is_some() && seeds.len() > 1 {
        return Err(Failure::Usage("--trace takes a single seed".into()));
    }
    let run = |seed: u64| -> Outcome<MetricsRecord> {
        let ep = episode(a, &prepared, seed, a.solver)?;
        let metrics = match &args.trace {
            Some(path) => {
                let file = File::create(path)
                    .with_context(|| format!("cannot create trace {}", path.display()))
                    .map_err(runtime)?;
                let mut w = BufWriter::new(file);
                let m = run_episode(
                    &ep,
                    EpisodeOutputs {
                        trace: Some(&mut w),
                        dataset: None,
                    },
                )?;
                w.flush().map_err(runtime)?;
                m
            }
            None => run_episode(&ep, EpisodeOutputs::default())?,
        };
        Ok(record(a, seed, &metrics, args.timing))
    };
    let results: Vec<Outcome<MetricsRecord>> = if seeds.len() > 1 {
        seeds.par_iter().map(|&s| run(s)).collect()
    } else {
        seeds.iter().map(|&s| run(s)).collect()
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for r in results {
        let line = serde_json::to_string(&r?).map_err(runtime)?;
        writeln!(out, "{line}").map_err(runtime)?;
    }
    Ok(())
}

fn collect(args: CollectArgs) -> Outcome<()> {
    let mut a = args.episode.clone();
    a.solver = if a.weights.is_some() {
        SolverKind::LpibtWlns
    } else {
        SolverKind::Wlns
    };
    let prepared = prepare(&a)?;
    let config = match &prepared.policy {
        Some(p) => p.config(),
        None => ObservationConfig::new(args.fov, args.fov).map_err(|e| Failure::Usage(e.to_string()))?,
    };
    let seed = default_seed(&a, &prepared);
    let ep = episode(&a, &prepared, seed, a.solver)?;

    let dir = match args.out.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("cannot write into {}", dir.display()))
        .map_err(runtime)?;
    let mut writer = DatasetWriter::new(BufWriter::new(tmp), config).map_err(runtime)?;
    run_episode(
        &ep,
        EpisodeOutputs {
            trace: None,
            dataset: Some(&mut writer),
        },
    )?;
    let count = writer.records_written();
    let tmp = writer
        .finish()
        .map_err(runtime)?
        .into_inner()
        .map_err(|e| runtime(e.into_error()))?;
    tmp.persist(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))
        .map_err(runtime)?;
    println!("records {count}");
    Ok(())
}

fn score(args: ScoreArgs) -> Outcome<()> {
    // (map, seed) -> solver -> throughput
    let mut groups: BTreeMap<(String, u64), BTreeMap<String, f64>> = BTreeMap::new();
    let mut solvers = BTreeSet::new();
    for path in &args.metrics {
        let file = File::open(path)
            .with_context(|| format!("cannot open {}", path.display()))
            .map_err(input)?;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(input)?;
            if line.trim().is_empty() {
                continue;
            }
            let r: MetricsRecord = serde_json::from_str(&line)
                .with_context(|| format!("{}:{}", path.display(), n + 1))
                .map_err(input)?;
            let name = format!("{}+{}", r.solver, r.guidance);
            solvers.insert(name.clone());
            let group = groups.entry((r.map.clone(), r.seed)).or_default();
            if group.insert(name.clone(), r.throughput).is_some() {
                return Err(input(anyhow!("duplicate record for {name} on {} seed {}", r.map, r.seed)));
            }
        }
    }
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut used = 0usize;
    for group in groups.values() {
        if group.len() != solvers.len() {
            continue;
        }
        let entries: Vec<(String, f64)> = group.iter().map(|(k, v)| (k.clone(), *v)).collect();
        for (name, s) in compute_score(&entries).map_err(input)? {
            *sums.entry(name).or_default() += s;
        }
        used += 1;
    }
    if used == 0 {
        return Err(input(anyhow!("no (map, seed) group has records for every solver")));
    }
    for (name, total) in sums {
        println!("{name}\t{:.6}\t{used}", total / used as f64);
    }
    Ok(())
}

fn dump_heuristic(args: DumpArgs) -> Outcome<()> {
    let map = read_map(&args.map)?;
    let g = guidance_config(args.guidance, args.crisscross, args.c_vertex, args.c_edge)?;
    let costs = g.edge_costs();
    let field = match args.guidance {
        GuidanceMode::Bd | GuidanceMode::Sg => backward_dijkstra(&map, args.goal, &costs).map_err(input)?,
        GuidanceMode::Dg => {
            let start = args
                .start
                .ok_or_else(|| Failure::Usage("--guidance dg requires --start".into()))?;
            let traffic_costs = EdgeCostModel {
                mode: CostMode::Traffic,
                traffic_weights: g.traffic,
                ..costs.clone()
            };
            let guide = plan_guide_path(&map, 0, start, args.goal, &TrafficCounts::new(&map), &traffic_costs)
                .map_err(input)?;
            dynamic_guidance_field(&map, &guide, &costs).map_err(input)?
        }
    };
    print!("{}", field.dump());
    Ok(())
}

fn verify_weights(args: VerifyArgs) -> Outcome<()> {
    let w = read_weights(&args.weights)?;
    let params: usize = w.tensors().map(|(_, _, t)| t.len()).sum();
    println!(
        "ok fov {}x{} tensors {} parameters {params}",
        w.config.fov_h,
        w.config.fov_w,
        w.tensors().count()
    );
    Ok(())
}

fn threads(jobs: Option<usize>) -> Result<Option<usize>, String> {
    match std::env::var("SILLM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| format!("SILLM_THREADS must be a positive integer, got `{v}`")),
        Err(_) => match jobs {
            Some(0) => Err("--jobs must be positive".into()),
            j => Ok(j),
        },
    }
}

fn run() -> Outcome<()> {
    let argv = args::expand_config(std::env::args().collect()).map_err(Failure::Usage)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(n) = threads(cli.jobs).map_err(Failure::Usage)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Collect(a) => collect(a),
        Command::Score(a) => score(a),
        Command::DumpHeuristic(a) => dump_heuristic(a),
        Command::VerifyWeights(a) => verify_weights(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Input(e) | Failure::Safety(e) | Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lmapf_core::pibt::CollisionError;

    #[test]
    fn exit_codes_by_failure_class() {
        let collision = SimError::Collision {
            step: 3,
            source: CollisionError::Vertex { first: 0, second: 1, at: Location::new(0, 0) },
        };
        assert_eq!(Failure::from(collision).code(), 4);
        assert_eq!(Failure::from(SimError::EmptyHorizon).code(), 3);
        assert_eq!(Failure::Usage(String::new()).code(), 2);
        assert_eq!(runtime(anyhow!("disk")).code(), 1);
    }
}
