//! Lifelong execution loop: goal assignment, guidance refresh, planning, validation and
//! metrics.

use std::io::{self, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{apply_action, Action, GridMap, Location};
use crate::heuristics::{
    crisscross_costs, dynamic_guidance_field, plan_guide_path, update_traffic, CostMode, CrisscrossProfile,
    EdgeCostModel, FieldCache, GuidanceField, GuidanceMode, GuidePath, HeuristicError, TrafficCounts, TrafficWeights,
    DEFAULT_CACHE_CAPACITY,
};
use crate::observe::{encode_all, DatasetRecord, DatasetWriter, ObservationConfig, ObserveError};
use crate::pibt::{
    check_joint_action, cs_pibt_step, rank_by_heuristic, update_priorities, AgentState, CollisionError, PibtError,
    PibtPlanner,
};
use crate::policy::{LearnedPolicy, NeuralPolicy, PolicyError};
use crate::wlns::{extract_labels, refine, rollout_initial, LnsConfig, WlnsError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("map needs at least two free cells in every start's component")]
    TooFewCells,
    #[error("horizon must be at least one step")]
    EmptyHorizon,
    #[error("start {0} is blocked or outside the map")]
    BlockedStart(Location),
    #[error("agents {0} and {1} share start cell {2}")]
    SharedStart(usize, usize, Location),
    #[error("cannot place {agents} agents on {free} free cells")]
    TooManyAgents { agents: usize, free: usize },
    #[error("solver {0} needs policy weights")]
    MissingPolicy(&'static str),
    #[error("collision at step {step}: {source}")]
    Collision {
        step: u64,
        #[source]
        source: CollisionError,
    },
    #[error("scores need at least one positive throughput")]
    NoPositiveThroughput,
    #[error("negative throughput for `{0}`")]
    NegativeThroughput(String),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Pibt(#[from] PibtError),
    #[error(transparent)]
    Wlns(#[from] WlnsError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    #[error("trace output: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Pibt,
    Lpibt,
    Wlns,
    LpibtWlns,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Pibt => "pibt",
            SolverKind::Lpibt => "lpibt",
            SolverKind::Wlns => "wlns",
            SolverKind::LpibtWlns => "lpibt-wlns",
        }
    }

    pub fn needs_policy(self) -> bool {
        matches!(self, SolverKind::Lpibt | SolverKind::LpibtWlns)
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pibt" => Ok(SolverKind::Pibt),
            "lpibt" => Ok(SolverKind::Lpibt),
            "wlns" | "pibt-wlns" => Ok(SolverKind::Wlns),
            "lpibt-wlns" => Ok(SolverKind::LpibtWlns),
            _ => Err(format!("unknown solver `{s}` (expected pibt|lpibt|wlns|lpibt-wlns)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub crisscross: CrisscrossProfile,
    pub traffic: TrafficWeights,
}

impl GuidanceConfig {
    pub fn new(mode: GuidanceMode) -> Self {
        Self {
            mode,
            crisscross: CrisscrossProfile::Strict,
            traffic: TrafficWeights::default(),
        }
    }

    /// Edge costs used for moves, heuristic fields and the windowed objective.
    pub fn edge_costs(&self) -> EdgeCostModel {
        match self.mode {
            GuidanceMode::Sg => crisscross_costs(self.crisscross),
            GuidanceMode::Bd | GuidanceMode::Dg => EdgeCostModel::uniform(),
        }
    }
}

#[derive(Clone)]
pub struct Episode<'a> {
    pub map: &'a GridMap,
    pub starts: Vec<Location>,
    pub steps: u64,
    pub seed: u64,
    pub solver: SolverKind,
    pub guidance: GuidanceConfig,
    pub policy: Option<&'a NeuralPolicy>,
    pub lns: LnsConfig,
    pub cache_capacity: usize,
}

impl<'a> Episode<'a> {
    pub fn new(map: &'a GridMap, starts: Vec<Location>, steps: u64, seed: u64) -> Self {
        Self {
            map,
            starts,
            steps,
            seed,
            solver: SolverKind::Pibt,
            guidance: GuidanceConfig::new(GuidanceMode::Bd),
            policy: None,
            lns: LnsConfig::default(),
            cache_capacity: DEFAULT_CACHE_CAPACITY,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps == 0 {
            return Err(SimError::EmptyHorizon);
        }
        let mut seen = std::collections::HashMap::new();
        for (i, s) in self.starts.iter().enumerate() {
            if !self.map.is_free(*s) {
                return Err(SimError::BlockedStart(*s));
            }
            if let Some(j) = seen.insert(*s, i) {
                return Err(SimError::SharedStart(j, i, *s));
            }
        }
        if self.solver.needs_policy() && self.policy.is_none() {
            return Err(SimError::MissingPolicy(self.solver.as_str()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: u64,
    pub agents: usize,
    pub goals_reached: u64,
    pub throughput: f64,
    /// Wall time of each step's solver call.
    #[serde(skip)]
    pub plan_times: Vec<Duration>,
    /// Wall time of each whole step: planning, validation, moves and guidance refresh.
    #[serde(skip)]
    pub step_times: Vec<Duration>,
}

impl Metrics {
    pub fn mean_plan_time(&self) -> Duration {
        if self.plan_times.is_empty() {
            return Duration::ZERO;
        }
        self.plan_times.iter().sum::<Duration>() / self.plan_times.len() as u32
    }

    pub fn max_plan_time(&self) -> Duration {
        self.plan_times.iter().copied().max().unwrap_or_default()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Goal stream of one agent: depends only on `(seed, agent)`.
pub fn goal_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + agent as u64);
    rng
}

/// Tie-break stream of one timestep.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    rng.set_stream(step);
    rng
}

/// Random distinct free start cells, drawn from components with at least two cells.
pub fn random_starts(map: &GridMap, n: usize, seed: u64) -> Result<Vec<Location>, SimError> {
    let comps = map.components();
    let mut sizes = std::collections::HashMap::new();
    for &c in &comps {
        if c != u32::MAX {
            *sizes.entry(c).or_insert(0usize) += 1;
        }
    }
    let cells: Vec<usize> = (0..map.num_cells())
        .filter(|&i| comps[i] != u32::MAX && sizes[&comps[i]] >= 2)
        .collect();
    if n > cells.len() {
        return Err(SimError::TooManyAgents {
            agents: n,
            free: cells.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, cells.len(), n);
    Ok(picked.into_iter().map(|k| map.location(cells[k])).collect())
}

/// Uniform goal sampling over the free cells reachable from the agent, excluding the
/// agent's own cell.
#[derive(Debug, Clone)]
pub struct GoalSampler {
    components: Vec<u32>,
    members: Vec<Vec<usize>>,
}

impl GoalSampler {
    pub fn new(map: &GridMap) -> Self {
        let components = map.components();
        let count = components.iter().filter(|&&c| c != u32::MAX).max().map_or(0, |&c| c as usize + 1);
        let mut members = vec![Vec::new(); count];
        for (i, &c) in components.iter().enumerate() {
            if c != u32::MAX {
                members[c as usize].push(i);
            }
        }
        Self { components, members }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, map: &GridMap, current: Location) -> Result<Location, SimError> {
        let idx = map.free_index(current).ok_or(SimError::BlockedStart(current))?;
        let cells = &self.members[self.components[idx] as usize];
        if cells.len() < 2 {
            return Err(SimError::TooFewCells);
        }
        let own = cells.binary_search(&idx).expect("cell in its component");
        let mut k = rng.gen_range(0..cells.len() - 1);
        if k >= own {
            k += 1;
        }
        Ok(map.location(cells[k]))
    }
}

/// One goal draw; see [`GoalSampler`].
pub fn assign_goal<R: Rng + ?Sized>(rng: &mut R, map: &GridMap, current: Location) -> Result<Location, SimError> {
    GoalSampler::new(map).draw(rng, map, current)
}

/// Where dataset records go during collection.
pub trait RecordSink {
    fn config(&self) -> ObservationConfig;
    fn record(&mut self, records: &[DatasetRecord]) -> Result<(), ObserveError>;
}

impl<W: Write> RecordSink for DatasetWriter<W> {
    fn config(&self) -> ObservationConfig {
        DatasetWriter::config(self)
    }

    fn record(&mut self, records: &[DatasetRecord]) -> Result<(), ObserveError> {
        DatasetWriter::record(self, records)
    }
}

/// Optional per-episode outputs.
#[derive(Default)]
pub struct EpisodeOutputs<'b> {
    pub trace: Option<&'b mut dyn Write>,
    pub dataset: Option<&'b mut dyn RecordSink>,
}

/// Per-step planner. Receives the state after goals and fields are refreshed.
pub trait StepSolver {
    fn plan(&mut self, map: &GridMap, agents: &[AgentState], step: u64, rng: &mut ChaCha8Rng) -> Result<Vec<Action>, SimError>;
}

/// The built-in solvers.
pub struct BuiltinSolver<'a> {
    kind: SolverKind,
    policy: Option<&'a NeuralPolicy>,
    lns: LnsConfig,
    costs: EdgeCostModel,
    seed: u64,
    planner: PibtPlanner,
}

impl<'a> BuiltinSolver<'a> {
    pub fn new(ep: &Episode<'a>) -> Self {
        Self {
            kind: ep.solver,
            policy: ep.policy,
            lns: ep.lns.clone(),
            costs: ep.guidance.edge_costs(),
            seed: ep.seed,
            planner: PibtPlanner::new(ep.map),
        }
    }
}

impl StepSolver for BuiltinSolver<'_> {
    fn plan(&mut self, map: &GridMap, agents: &[AgentState], step: u64, rng: &mut ChaCha8Rng) -> Result<Vec<Action>, SimError> {
        let policy: Option<&dyn LearnedPolicy> = self.policy.map(|p| p as &dyn LearnedPolicy);
        match self.kind {
            SolverKind::Pibt => {
                let prefs: Vec<_> = agents.iter().map(|a| rank_by_heuristic(a, map, rng)).collect();
                Ok(self.planner.step(map, agents, &prefs)?.0)
            }
            SolverKind::Lpibt => {
                let learned = policy.ok_or(SimError::MissingPolicy("lpibt"))?.learned_actions(map, agents)?;
                Ok(cs_pibt_step(map, agents, &learned, rng)?.0)
            }
            SolverKind::Wlns | SolverKind::LpibtWlns => {
                let policy = if self.kind == SolverKind::LpibtWlns {
                    Some(policy.ok_or(SimError::MissingPolicy("lpibt-wlns"))?)
                } else {
                    None
                };
                let initial = rollout_initial(map, agents, policy, self.lns.window, step, rng)?;
                let cfg = LnsConfig {
                    seed: splitmix(self.seed ^ splitmix(step)),
                    ..self.lns.clone()
                };
                let refined = refine(map, initial, agents, &self.costs, &cfg)?;
                Ok(extract_labels(&refined)?)
            }
        }
    }
}

/// Refreshes the heuristic field of every agent flagged in `stale`.
struct Guidance {
    config: GuidanceConfig,
    costs: EdgeCostModel,
    cache: FieldCache,
    traffic: TrafficCounts,
    guides: Vec<Option<GuidePath>>,
}

impl Guidance {
    fn new(map: &GridMap, config: GuidanceConfig, capacity: usize, n: usize) -> Self {
        let costs = config.edge_costs();
        Self {
            config,
            cache: FieldCache::new(costs.clone(), capacity),
            costs,
            traffic: TrafficCounts::new(map),
            guides: vec![None; n],
        }
    }

    fn fields(
        &mut self,
        map: &GridMap,
        ids: &[usize],
        starts: &[Location],
        goals: &[Location],
    ) -> Result<Vec<Arc<GuidanceField>>, SimError> {
        match self.config.mode {
            GuidanceMode::Bd | GuidanceMode::Sg => Ok(self.cache.get_many(map, goals)?),
            GuidanceMode::Dg => {
                let traffic_costs = EdgeCostModel {
                    mode: CostMode::Traffic,
                    traffic_weights: self.config.traffic,
                    ..self.costs.clone()
                };
                let mut guides = Vec::with_capacity(ids.len());
                for ((&id, &s), &g) in ids.iter().zip(starts).zip(goals) {
                    let path = plan_guide_path(map, id, s, g, &self.traffic, &traffic_costs)?;
                    update_traffic(&mut self.traffic, self.guides[id].as_ref(), &path)?;
                    self.guides[id] = Some(path.clone());
                    guides.push(path);
                }
                let costs = &self.costs;
                let fields: Result<Vec<_>, HeuristicError> = guides
                    .par_iter()
                    .map(|p| dynamic_guidance_field(map, p, costs).map(Arc::new))
                    .collect();
                Ok(fields?)
            }
        }
    }
}

fn write_trace(out: &mut dyn Write, step: u64, actions: &[Action]) -> io::Result<()> {
    let mut line = format!("{step};");
    for (i, a) in actions.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&format!("{i}:{}", a.symbol()));
    }
    line.push('\n');
    out.write_all(line.as_bytes())
}

pub fn run_episode(ep: &Episode, outputs: EpisodeOutputs) -> Result<Metrics, SimError> {
    let mut solver = BuiltinSolver::new(ep);
    run_episode_with(ep, &mut solver, outputs)
}

/// Runs an episode with a caller-supplied solver. Every joint action is checked; a
/// collision aborts the run.
pub fn run_episode_with(ep: &Episode, solver: &mut dyn StepSolver, mut outputs: EpisodeOutputs) -> Result<Metrics, SimError> {
    ep.validate()?;
    let map = ep.map;
    let n = ep.starts.len();
    let sampler = GoalSampler::new(map);
    let mut goal_streams: Vec<ChaCha8Rng> = (0..n).map(|i| goal_rng(ep.seed, i)).collect();
    let mut goals = Vec::with_capacity(n);
    for (i, s) in ep.starts.iter().enumerate() {
        goals.push(sampler.draw(&mut goal_streams[i], map, *s)?);
    }
    let mut guidance = Guidance::new(map, ep.guidance, ep.cache_capacity, n);
    let ids: Vec<usize> = (0..n).collect();
    let fields = guidance.fields(map, &ids, &ep.starts, &goals)?;
    let mut agents: Vec<AgentState> = fields
        .into_iter()
        .enumerate()
        .map(|(i, f)| AgentState::new(i, n, ep.starts[i], goals[i], f))
        .collect();

    let mut goals_reached = 0u64;
    let mut plan_times = Vec::with_capacity(ep.steps as usize);
    let mut step_times = Vec::with_capacity(ep.steps as usize);
    let mut from = Vec::with_capacity(n);
    for step in 0..ep.steps {
        let mut rng = step_rng(ep.seed, step);
        let started = Instant::now();
        let actions = solver.plan(map, &agents, step, &mut rng)?;
        plan_times.push(started.elapsed());

        from.clear();
        from.extend(agents.iter().map(|a| a.location));
        check_joint_action(map, &from, &actions).map_err(|source| SimError::Collision { step, source })?;

        if let Some(sink) = outputs.dataset.as_deref_mut() {
            let obs = encode_all(map, &agents, &sink.config())?;
            let records: Vec<DatasetRecord> = obs
                .into_iter()
                .zip(&actions)
                .enumerate()
                .map(|(i, (o, &label))| DatasetRecord {
                    step: step as u32,
                    agent_id: i as u32,
                    label,
                    observation: o,
                })
                .collect();
            sink.record(&records)?;
        }
        if let Some(trace) = outputs.trace.as_deref_mut() {
            write_trace(trace, step, &actions)?;
        }

        let mut arrived = vec![false; n];
        let mut stale = Vec::new();
        for (i, (agent, &a)) in agents.iter_mut().zip(&actions).enumerate() {
            agent.location = apply_action(agent.location, a);
            if agent.location == agent.goal {
                arrived[i] = true;
                goals_reached += 1;
                agent.goal = sampler.draw(&mut goal_streams[i], map, agent.location)?;
                stale.push(i);
            }
        }
        if !stale.is_empty() {
            let starts: Vec<Location> = stale.iter().map(|&i| agents[i].location).collect();
            let new_goals: Vec<Location> = stale.iter().map(|&i| agents[i].goal).collect();
            let fields = guidance.fields(map, &stale, &starts, &new_goals)?;
            for (&i, f) in stale.iter().zip(fields) {
                agents[i].field = f;
            }
        }
        update_priorities(&mut agents, &arrived);
        step_times.push(started.elapsed());
    }
    if let Some(trace) = outputs.trace.as_deref_mut() {
        trace.flush()?;
    }
    Ok(Metrics {
        steps: ep.steps,
        agents: n,
        goals_reached,
        throughput: goals_reached as f64 / ep.steps as f64,
        plan_times,
        step_times,
    })
}

/// Each throughput divided by the best one.
pub fn compute_score(throughputs: &[(String, f64)]) -> Result<Vec<(String, f64)>, SimError> {
    for (name, t) in throughputs {
        if *t < 0.0 || t.is_nan() {
            return Err(SimError::NegativeThroughput(name.clone()));
        }
    }
    let best = throughputs.iter().map(|(_, t)| *t).fold(0.0, f64::max);
    if best <= 0.0 {
        return Err(SimError::NoPositiveThroughput);
    }
    Ok(throughputs.iter().map(|(n, t)| (n.clone(), t / best)).collect())
}
