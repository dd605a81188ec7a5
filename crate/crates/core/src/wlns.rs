//! Windowed MAPF-LNS.
//!
//! An initial `w`-step plan is rolled out with (learnable) PIBT and then improved by
//! large neighborhood search: each iteration destroys the windowed paths of a few agents,
//! re-plans them one by one with a space-time search against everyone else's paths, and
//! keeps the result only if the windowed objective
//!
//! ```text
//! Obj = sum_i ( sum_{t=T}^{T+w-1} Cost(v_t^i, v_{t+1}^i) + h_i(v_{T+w}^i) )
//! ```
//!
//! strictly decreases. The first actions of the refined plan are the imitation labels.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Action, GridMap, Location};
use crate::heuristics::{CostMode, EdgeCostModel, GuidanceField, GuidanceMode, INF};
use crate::pibt::{
    check_transition, cs_pibt_step, rank_by_heuristic, update_priorities, AgentState, CollisionError,
    PibtError, PibtPlanner,
};
use crate::policy::{LearnedPolicy, PolicyError};

#[derive(Debug, Error)]
pub enum WlnsError {
    #[error("agent {agent}: guidance field does not match its goal or the active cost model")]
    FieldMismatch { agent: usize },
    #[error("plan has {paths} paths for {agents} agents")]
    Arity { paths: usize, agents: usize },
    #[error("agent {agent}: path length {len} does not match window {window}")]
    PathLength { agent: usize, len: usize, window: usize },
    #[error("agent {agent}: path does not start at its current location")]
    StartMismatch { agent: usize },
    #[error("plan collides at step {step}: {source}")]
    Collision {
        step: usize,
        #[source]
        source: CollisionError,
    },
    #[error("labels need a window of at least one step")]
    EmptyWindow,
    #[error(transparent)]
    Pibt(#[from] PibtError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// `w + 1` locations per agent, starting at timestep `start_step`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowedPlan {
    pub start_step: u64,
    pub window: usize,
    pub paths: Vec<Vec<Location>>,
}

impl WindowedPlan {
    /// Checks path lengths, adjacency and collision-freedom at every step.
    pub fn validate(&self, map: &GridMap) -> Result<(), WlnsError> {
        for (i, p) in self.paths.iter().enumerate() {
            if p.len() != self.window + 1 {
                return Err(WlnsError::PathLength {
                    agent: i,
                    len: p.len(),
                    window: self.window,
                });
            }
        }
        let mut from: Vec<Location> = self.paths.iter().map(|p| p[0]).collect();
        let mut seen = HashSet::new();
        for (i, v) in from.iter().enumerate() {
            if !map.is_free(*v) {
                return Err(WlnsError::Collision {
                    step: 0,
                    source: CollisionError::InvalidMove {
                        agent: i,
                        from: *v,
                        to: *v,
                    },
                });
            }
            if !seen.insert(*v) {
                return Err(WlnsError::Collision {
                    step: 0,
                    source: CollisionError::Vertex {
                        first: i,
                        second: i,
                        at: *v,
                    },
                });
            }
        }
        for t in 0..self.window {
            let to: Vec<Location> = self.paths.iter().map(|p| p[t + 1]).collect();
            check_transition(map, &from, &to).map_err(|source| WlnsError::Collision { step: t, source })?;
            from = to;
        }
        Ok(())
    }

    /// Also checks that paths start at the agents' current locations.
    pub fn validate_for(&self, map: &GridMap, agents: &[AgentState]) -> Result<(), WlnsError> {
        if self.paths.len() != agents.len() {
            return Err(WlnsError::Arity {
                paths: self.paths.len(),
                agents: agents.len(),
            });
        }
        self.validate(map)?;
        for (i, (p, a)) in self.paths.iter().zip(agents).enumerate() {
            if p[0] != a.location {
                return Err(WlnsError::StartMismatch { agent: i });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborhoodMode {
    Random,
    CollisionBased,
    IntersectionBased,
}

impl std::str::FromStr for NeighborhoodMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(NeighborhoodMode::Random),
            "collision" | "collision-based" => Ok(NeighborhoodMode::CollisionBased),
            "intersection" | "intersection-based" => Ok(NeighborhoodMode::IntersectionBased),
            _ => Err(format!(
                "unknown neighborhood mode `{s}` (expected random|collision|intersection)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LnsConfig {
    pub window: usize,
    pub iterations: usize,
    pub neighborhood_size: usize,
    pub selection_mode: NeighborhoodMode,
    pub seed: u64,
}

impl Default for LnsConfig {
    fn default() -> Self {
        Self {
            window: 15,
            iterations: 5000,
            neighborhood_size: 8,
            selection_mode: NeighborhoodMode::CollisionBased,
            seed: 0,
        }
    }
}

impl LnsConfig {
    /// Neighborhood size clamped to the agent count.
    pub fn effective_size(&self, n: usize) -> usize {
        self.neighborhood_size.max(2).min(n)
    }
}

/// Rolls `window` steps forward on a copy of the agents, with CS-PIBT over the policy's
/// actions when a policy is supplied and plain PIBT otherwise. Goals stay fixed.
pub fn rollout_initial<R: Rng + ?Sized>(
    map: &GridMap,
    agents: &[AgentState],
    policy: Option<&dyn LearnedPolicy>,
    window: usize,
    start_step: u64,
    rng: &mut R,
) -> Result<WindowedPlan, WlnsError> {
    let mut sim: Vec<AgentState> = agents.to_vec();
    let mut paths: Vec<Vec<Location>> = agents
        .iter()
        .map(|a| {
            let mut p = Vec::with_capacity(window + 1);
            p.push(a.location);
            p
        })
        .collect();
    let mut planner = PibtPlanner::new(map);
    for _ in 0..window {
        let joint = match policy {
            Some(p) => {
                let learned = p.learned_actions(map, &sim)?;
                cs_pibt_step(map, &sim, &learned, rng)?
            }
            None => {
                let prefs: Vec<_> = sim.iter().map(|a| rank_by_heuristic(a, map, rng)).collect();
                planner.step(map, &sim, &prefs)?
            }
        };
        let mut arrived = vec![false; sim.len()];
        for (i, (agent, &a)) in sim.iter_mut().zip(joint.actions()).enumerate() {
            agent.location = crate::grid::apply_action(agent.location, a);
            arrived[i] = agent.location == agent.goal;
            paths[i].push(agent.location);
        }
        update_priorities(&mut sim, &arrived);
    }
    Ok(WindowedPlan {
        start_step,
        window,
        paths,
    })
}

fn field_matches(agent: &AgentState, costs: &EdgeCostModel) -> bool {
    let sg = agent.field.mode == GuidanceMode::Sg;
    agent.field.goal == agent.goal && sg == (costs.mode == CostMode::Crisscross)
}

/// Windowed cost of one path: edge costs (waits cost 1) plus `h` at the horizon.
pub fn path_cost(map: &GridMap, path: &[Location], costs: &EdgeCostModel, field: &GuidanceField) -> u64 {
    let mut total: u64 = 0;
    for w in path.windows(2) {
        let c = costs.edge_cost(map, w[0], w[1]).unwrap_or(INF);
        total = total.saturating_add(c as u64);
    }
    let h = field.value(*path.last().expect("non-empty path"));
    total.saturating_add(h as u64)
}

/// The windowed objective summed over agents.
pub fn objective(
    map: &GridMap,
    plan: &WindowedPlan,
    costs: &EdgeCostModel,
    agents: &[AgentState],
) -> Result<u64, WlnsError> {
    if plan.paths.len() != agents.len() {
        return Err(WlnsError::Arity {
            paths: plan.paths.len(),
            agents: agents.len(),
        });
    }
    let mut total: u64 = 0;
    for (i, (path, agent)) in plan.paths.iter().zip(agents).enumerate() {
        if !field_matches(agent, costs) {
            return Err(WlnsError::FieldMismatch { agent: i });
        }
        total = total.saturating_add(path_cost(map, path, costs, &agent.field));
    }
    Ok(total)
}

/// Windowed cost above the agent's lower bound `h(v_T)`.
fn delay(map: &GridMap, path: &[Location], costs: &EdgeCostModel, field: &GuidanceField) -> u64 {
    let lb = field.value(path[0]);
    if lb == INF {
        return 0;
    }
    path_cost(map, path, costs, field).saturating_sub(lb as u64)
}

fn visits_by_cell(map: &GridMap, plan: &WindowedPlan) -> HashMap<usize, Vec<usize>> {
    let mut visits: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, p) in plan.paths.iter().enumerate() {
        for v in p {
            let list = visits.entry(map.index(*v).unwrap()).or_default();
            if list.last() != Some(&i) {
                list.push(i);
            }
        }
    }
    visits
}

fn fill_random<R: Rng + ?Sized>(chosen: &mut Vec<usize>, n: usize, size: usize, rng: &mut R) {
    if chosen.len() >= size {
        chosen.truncate(size);
        return;
    }
    let taken: HashSet<usize> = chosen.iter().copied().collect();
    let mut rest: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
    rest.shuffle(rng);
    chosen.extend(rest.into_iter().take(size - chosen.len()));
}

fn push_unique(chosen: &mut Vec<usize>, seen: &mut HashSet<usize>, candidates: &mut [usize], size: usize, rng: &mut (impl Rng + ?Sized)) {
    candidates.shuffle(rng);
    for &c in candidates.iter() {
        if chosen.len() >= size {
            return;
        }
        if seen.insert(c) {
            chosen.push(c);
        }
    }
}

/// Picks the agents whose paths one LNS iteration destroys. Always returns
/// `min(size, n)` distinct ids in ascending order.
pub fn select_neighborhood<R: Rng + ?Sized>(
    map: &GridMap,
    plan: &WindowedPlan,
    agents: &[AgentState],
    costs: &EdgeCostModel,
    mode: NeighborhoodMode,
    size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = plan.paths.len();
    let size = size.min(n);
    let mut chosen = match mode {
        _ if size == n => (0..n).collect(),
        NeighborhoodMode::Random => rand::seq::index::sample(rng, n, size).into_vec(),
        NeighborhoodMode::CollisionBased => collision_neighborhood(map, plan, agents, costs, size, rng),
        NeighborhoodMode::IntersectionBased => intersection_neighborhood(map, plan, size, rng),
    };
    fill_random(&mut chosen, n, size, rng);
    chosen.sort_unstable();
    chosen
}

/// Seeds with a delayed agent (chosen with probability proportional to its delay), then
/// adds agents whose windowed paths touch the seed's path or its unobstructed descent.
fn collision_neighborhood<R: Rng + ?Sized>(
    map: &GridMap,
    plan: &WindowedPlan,
    agents: &[AgentState],
    costs: &EdgeCostModel,
    size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = plan.paths.len();
    let delays: Vec<u64> = plan
        .paths
        .iter()
        .zip(agents)
        .map(|(p, a)| delay(map, p, costs, &a.field))
        .collect();
    let seed = match WeightedIndex::new(delays.iter().map(|&d| d as f64)) {
        Ok(dist) => dist.sample(rng),
        Err(_) => rng.gen_range(0..n),
    };
    let visits = visits_by_cell(map, plan);
    let mut chosen = vec![seed];
    let mut seen: HashSet<usize> = chosen.iter().copied().collect();

    // cells the seed occupies or would like to pass through
    let mut cells: Vec<usize> = plan.paths[seed].iter().map(|v| map.index(*v).unwrap()).collect();
    let field = &agents[seed].field;
    let mut cur = map.index(plan.paths[seed][0]).unwrap();
    for _ in 0..plan.window {
        let best = map.moves_from(cur).min_by_key(|&(_, u)| field.at(u));
        match best {
            Some((_, u)) if field.at(u) < field.at(cur) => {
                cells.push(u);
                cur = u;
            }
            _ => break,
        }
    }
    let mut queue: VecDeque<usize> = VecDeque::new();
    let touch = |cells: &[usize], chosen: &mut Vec<usize>, seen: &mut HashSet<usize>, queue: &mut VecDeque<usize>, rng: &mut R| {
        let mut cand: Vec<usize> = cells
            .iter()
            .filter_map(|c| visits.get(c))
            .flatten()
            .copied()
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        cand.sort_unstable();
        let before = chosen.len();
        push_unique(chosen, seen, &mut cand, size, rng);
        queue.extend(chosen[before..].iter().copied());
    };
    touch(&cells, &mut chosen, &mut seen, &mut queue, rng);
    while chosen.len() < size {
        let Some(a) = queue.pop_front() else { break };
        let cells: Vec<usize> = plan.paths[a].iter().map(|v| map.index(*v).unwrap()).collect();
        touch(&cells, &mut chosen, &mut seen, &mut queue, rng);
    }
    chosen
}

/// Agents whose windowed paths pass a random intersection (degree >= 3) cell, growing
/// outward from it breadth-first.
fn intersection_neighborhood<R: Rng + ?Sized>(map: &GridMap, plan: &WindowedPlan, size: usize, rng: &mut R) -> Vec<usize> {
    let visits = visits_by_cell(map, plan);
    let mut hubs: Vec<usize> = visits.keys().copied().filter(|&c| map.degree(c) >= 3).collect();
    if hubs.is_empty() {
        return Vec::new();
    }
    hubs.sort_unstable();
    let start = hubs[rng.gen_range(0..hubs.len())];
    let mut chosen = Vec::new();
    let mut seen = HashSet::new();
    let mut visited = HashSet::from([start]);
    let mut frontier = VecDeque::from([start]);
    while let Some(c) = frontier.pop_front() {
        if chosen.len() >= size {
            break;
        }
        if let Some(list) = visits.get(&c) {
            let mut cand = list.clone();
            push_unique(&mut chosen, &mut seen, &mut cand, size, rng);
        }
        for (_, u) in map.moves_from(c) {
            if visited.insert(u) {
                frontier.push_back(u);
            }
        }
    }
    chosen
}

const NONE: u32 = u32::MAX;

/// Space-time reservation table over a window, plus search scratch buffers.
struct Reservations {
    cells: usize,
    window: usize,
    occ: Vec<u32>,
    stamp: Vec<u32>,
    slot: Vec<u32>,
    generation: u32,
}

#[derive(Clone, Copy)]
struct Node {
    cell: u32,
    g: u64,
    parent: u32,
}

impl Reservations {
    fn new(map: &GridMap, window: usize) -> Self {
        Self {
            cells: map.num_cells(),
            window,
            occ: vec![NONE; map.num_cells() * (window + 1)],
            stamp: vec![0; map.num_cells()],
            slot: vec![0; map.num_cells()],
            generation: 0,
        }
    }

    fn set_path(&mut self, map: &GridMap, agent: usize, path: &[Location], on: bool) {
        for (t, v) in path.iter().enumerate() {
            let i = t * self.cells + map.index(*v).unwrap();
            self.occ[i] = if on { agent as u32 } else { NONE };
        }
    }

    #[inline]
    fn at(&self, t: usize, cell: usize) -> u32 {
        self.occ[t * self.cells + cell]
    }

    /// Cheapest windowed path for one agent that avoids every reserved vertex and swap.
    fn search<R: Rng + ?Sized>(
        &mut self,
        map: &GridMap,
        costs: &EdgeCostModel,
        field: &GuidanceField,
        start: Location,
        rng: &mut R,
    ) -> Option<(Vec<Location>, u64)> {
        let width = map.width();
        let s = map.index(start)?;
        let mut order = Action::ALL;
        order.shuffle(rng);
        let mut layers: Vec<Vec<Node>> = Vec::with_capacity(self.window + 1);
        layers.push(vec![Node {
            cell: s as u32,
            g: 0,
            parent: NONE,
        }]);
        for t in 0..self.window {
            self.generation = self.generation.wrapping_add(1);
            if self.generation == 0 {
                self.stamp.fill(0);
                self.generation = 1;
            }
            let mut next: Vec<Node> = Vec::new();
            for (pi, node) in layers[t].iter().enumerate() {
                let v = node.cell as usize;
                for &a in &order {
                    let Some(u) = map.step_index(v, a) else { continue };
                    if self.at(t + 1, u) != NONE {
                        continue;
                    }
                    if u != v {
                        let j = self.at(t, u);
                        if j != NONE && self.at(t + 1, v) == j {
                            continue;
                        }
                    }
                    let g = node.g + costs.step_cost(width, v, a) as u64;
                    if self.stamp[u] == self.generation {
                        let slot = &mut next[self.slot[u] as usize];
                        if g < slot.g {
                            slot.g = g;
                            slot.parent = pi as u32;
                        }
                    } else {
                        self.stamp[u] = self.generation;
                        self.slot[u] = next.len() as u32;
                        next.push(Node {
                            cell: u as u32,
                            g,
                            parent: pi as u32,
                        });
                    }
                }
            }
            if next.is_empty() {
                return None;
            }
            layers.push(next);
        }
        let last = layers.last().unwrap();
        let (best, total) = last
            .iter()
            .enumerate()
            .filter(|(_, nd)| field.at(nd.cell as usize) != INF)
            .map(|(i, nd)| (i, nd.g + field.at(nd.cell as usize) as u64))
            .min_by_key(|&(_, c)| c)?;
        let mut path = vec![Location::new(0, 0); self.window + 1];
        let mut idx = best;
        for t in (0..=self.window).rev() {
            let nd = layers[t][idx];
            path[t] = map.location(nd.cell as usize);
            idx = nd.parent as usize;
        }
        Some((path, total))
    }
}

/// Incremental LNS state: the incumbent plan, its per-agent costs, and reservations.
struct LnsState<'a> {
    map: &'a GridMap,
    costs: &'a EdgeCostModel,
    agents: &'a [AgentState],
    plan: WindowedPlan,
    agent_costs: Vec<u64>,
    table: Reservations,
}

impl<'a> LnsState<'a> {
    fn new(map: &'a GridMap, costs: &'a EdgeCostModel, agents: &'a [AgentState], plan: WindowedPlan) -> Self {
        let mut table = Reservations::new(map, plan.window);
        let mut agent_costs = Vec::with_capacity(agents.len());
        for (i, (p, a)) in plan.paths.iter().zip(agents).enumerate() {
            table.set_path(map, i, p, true);
            agent_costs.push(path_cost(map, p, costs, &a.field));
        }
        Self {
            map,
            costs,
            agents,
            plan,
            agent_costs,
            table,
        }
    }

    fn total(&self) -> u64 {
        self.agent_costs.iter().fold(0u64, |acc, &c| acc.saturating_add(c))
    }

    /// Replans `subset` in random order. On success returns the new paths and costs with
    /// the reservation table holding them; on failure the table is restored.
    fn try_replan<R: Rng + ?Sized>(&mut self, subset: &[usize], rng: &mut R) -> Option<Vec<(usize, Vec<Location>, u64)>> {
        for &i in subset {
            self.table.set_path(self.map, i, &self.plan.paths[i], false);
        }
        let mut order = subset.to_vec();
        order.shuffle(rng);
        let mut fresh: Vec<(usize, Vec<Location>, u64)> = Vec::with_capacity(order.len());
        for &i in &order {
            let found = self.table.search(
                self.map,
                self.costs,
                &self.agents[i].field,
                self.plan.paths[i][0],
                rng,
            );
            match found {
                Some((path, cost)) => {
                    self.table.set_path(self.map, i, &path, true);
                    fresh.push((i, path, cost));
                }
                None => {
                    for (j, p, _) in &fresh {
                        self.table.set_path(self.map, *j, p, false);
                    }
                    for &j in subset {
                        self.table.set_path(self.map, j, &self.plan.paths[j], true);
                    }
                    return None;
                }
            }
        }
        Some(fresh)
    }

    fn revert(&mut self, fresh: &[(usize, Vec<Location>, u64)]) {
        for (j, p, _) in fresh {
            self.table.set_path(self.map, *j, p, false);
        }
        for (j, _, _) in fresh {
            self.table.set_path(self.map, *j, &self.plan.paths[*j], true);
        }
    }

    fn commit(&mut self, fresh: Vec<(usize, Vec<Location>, u64)>) {
        for (j, p, c) in fresh {
            self.plan.paths[j] = p;
            self.agent_costs[j] = c;
        }
    }
}

/// Re-plans the subset against everyone else. Returns `None` if any subset agent has no
/// feasible windowed path.
pub fn replan_neighborhood<R: Rng + ?Sized>(
    map: &GridMap,
    plan: &WindowedPlan,
    subset: &[usize],
    costs: &EdgeCostModel,
    agents: &[AgentState],
    rng: &mut R,
) -> Option<WindowedPlan> {
    let mut state = LnsState::new(map, costs, agents, plan.clone());
    let fresh = state.try_replan(subset, rng)?;
    state.commit(fresh);
    Some(state.plan)
}

/// Outcome of [`refine_traced`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub plan: WindowedPlan,
    /// Objective of the input followed by every accepted improvement.
    pub accepted_objectives: Vec<u64>,
    pub iterations: usize,
}

/// Runs `config.iterations` LNS iterations, accepting only strict improvements.
pub fn refine(
    map: &GridMap,
    plan: WindowedPlan,
    agents: &[AgentState],
    costs: &EdgeCostModel,
    config: &LnsConfig,
) -> Result<WindowedPlan, WlnsError> {
    Ok(refine_traced(map, plan, agents, costs, config)?.plan)
}

pub fn refine_traced(
    map: &GridMap,
    plan: WindowedPlan,
    agents: &[AgentState],
    costs: &EdgeCostModel,
    config: &LnsConfig,
) -> Result<Refinement, WlnsError> {
    objective(map, &plan, costs, agents)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = LnsState::new(map, costs, agents, plan);
    let mut accepted = vec![state.total()];
    let size = config.effective_size(agents.len());
    if size == 0 {
        return Ok(Refinement {
            plan: state.plan,
            accepted_objectives: accepted,
            iterations: 0,
        });
    }
    for _ in 0..config.iterations {
        let subset = select_neighborhood(map, &state.plan, agents, costs, config.selection_mode, size, &mut rng);
        let old: u64 = subset.iter().map(|&i| state.agent_costs[i]).sum();
        let Some(fresh) = state.try_replan(&subset, &mut rng) else {
            continue;
        };
        let new: u64 = fresh.iter().map(|(_, _, c)| *c).sum();
        if new < old {
            state.commit(fresh);
            accepted.push(state.total());
        } else {
            state.revert(&fresh);
        }
    }
    Ok(Refinement {
        plan: state.plan,
        accepted_objectives: accepted,
        iterations: config.iterations,
    })
}

/// The first action of every agent's windowed path.
pub fn extract_labels(plan: &WindowedPlan) -> Result<Vec<Action>, WlnsError> {
    if plan.window == 0 {
        return Err(WlnsError::EmptyWindow);
    }
    plan.paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.len() < 2 {
                return Err(WlnsError::PathLength {
                    agent: i,
                    len: p.len(),
                    window: plan.window,
                });
            }
            Action::between(p[0], p[1]).ok_or(WlnsError::Collision {
                step: 0,
                source: CollisionError::InvalidMove {
                    agent: i,
                    from: p[0],
                    to: p[1],
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristics::backward_dijkstra;
    use std::sync::Arc;

    fn agent(map: &GridMap, id: usize, n: usize, at: (i32, i32), goal: (i32, i32)) -> AgentState {
        let goal = Location::new(goal.0, goal.1);
        let f = Arc::new(backward_dijkstra(map, goal, &EdgeCostModel::uniform()).unwrap());
        AgentState::new(id, n, Location::new(at.0, at.1), goal, f)
    }

    fn loc(r: i32, c: i32) -> Location {
        Location::new(r, c)
    }

    #[test]
    fn objective_examples() {
        let m = GridMap::empty(1, 8);
        let agents = vec![agent(&m, 0, 1, (0, 0), (0, 7))];
        let costs = EdgeCostModel::uniform();
        let moving = WindowedPlan {
            start_step: 0,
            window: 3,
            paths: vec![vec![loc(0, 0), loc(0, 1), loc(0, 2), loc(0, 3)]],
        };
        assert_eq!(objective(&m, &moving, &costs, &agents).unwrap(), 3 + 4);

        let idle = WindowedPlan {
            start_step: 0,
            window: 0,
            paths: vec![vec![loc(0, 0)]],
        };
        assert_eq!(objective(&m, &idle, &costs, &agents).unwrap(), 7);

        let m2 = GridMap::empty(1, 6);
        let a2 = vec![agent(&m2, 0, 1, (0, 0), (0, 5))];
        let waiting = WindowedPlan {
            start_step: 0,
            window: 2,
            paths: vec![vec![loc(0, 0); 3]],
        };
        assert_eq!(objective(&m2, &waiting, &costs, &a2).unwrap(), 2 + 5);
    }

    #[test]
    fn objective_rejects_mismatched_field() {
        let m = GridMap::empty(2, 2);
        let mut a = agent(&m, 0, 1, (0, 0), (1, 1));
        a.goal = loc(0, 1);
        let plan = WindowedPlan {
            start_step: 0,
            window: 0,
            paths: vec![vec![loc(0, 0)]],
        };
        assert!(matches!(
            objective(&m, &plan, &EdgeCostModel::uniform(), &[a]),
            Err(WlnsError::FieldMismatch { agent: 0 })
        ));
    }

    #[test]
    fn rollout_single_agent_corridor() {
        let m = GridMap::empty(1, 6);
        let agents = vec![agent(&m, 0, 1, (0, 0), (0, 5))];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = rollout_initial(&m, &agents, None, 3, 0, &mut rng).unwrap();
        assert_eq!(plan.paths[0], vec![loc(0, 0), loc(0, 1), loc(0, 2), loc(0, 3)]);
        plan.validate_for(&m, &agents).unwrap();
        assert_eq!(extract_labels(&plan).unwrap(), vec![Action::Right]);
    }

    #[test]
    fn labels_from_paths() {
        let plan = WindowedPlan {
            start_step: 0,
            window: 1,
            paths: vec![vec![loc(2, 2), loc(2, 2)], vec![loc(2, 3), loc(1, 3)]],
        };
        assert_eq!(extract_labels(&plan).unwrap(), vec![Action::Wait, Action::Up]);
        let bad = WindowedPlan {
            start_step: 0,
            window: 1,
            paths: vec![vec![loc(0, 0), loc(2, 2)]],
        };
        assert!(extract_labels(&bad).is_err());
    }

    #[test]
    fn replan_boxed_in_agent_fails() {
        // agent 0 at the dead end (0,0), agent 1 parks in front of it for the whole window
        let m = GridMap::from_rows(&["..", "@."]).unwrap();
        let agents = vec![agent(&m, 0, 2, (0, 0), (1, 1)), agent(&m, 1, 2, (0, 1), (0, 1))];
        let plan = WindowedPlan {
            start_step: 0,
            window: 2,
            paths: vec![vec![loc(0, 0); 3], vec![loc(0, 1); 3]],
        };
        plan.validate(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // agent 0 can still wait in place, so replanning it alone succeeds
        let re = replan_neighborhood(&m, &plan, &[0], &EdgeCostModel::uniform(), &agents, &mut rng).unwrap();
        assert_eq!(re.paths[0], vec![loc(0, 0); 3]);
        // reservations that take agent 0's cell at t=1 and block the only exit by a swap
        let mut table = Reservations::new(&m, 2);
        table.set_path(&m, 1, &[loc(0, 1), loc(0, 0), loc(0, 0)], true);
        let field = agents[0].field.clone();
        assert!(table
            .search(&m, &EdgeCostModel::uniform(), &field, loc(0, 0), &mut rng)
            .is_none());
    }

    #[test]
    fn refine_zero_iterations_is_identity() {
        let m = GridMap::empty(3, 3);
        let agents = vec![agent(&m, 0, 2, (0, 0), (2, 2)), agent(&m, 1, 2, (2, 2), (0, 0))];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = rollout_initial(&m, &agents, None, 2, 0, &mut rng).unwrap();
        let cfg = LnsConfig {
            window: 2,
            iterations: 0,
            ..LnsConfig::default()
        };
        let out = refine(&m, plan.clone(), &agents, &EdgeCostModel::uniform(), &cfg).unwrap();
        assert_eq!(out, plan);
    }

    #[test]
    fn selection_sizes_and_determinism() {
        let m = GridMap::empty(4, 4);
        let agents: Vec<_> = (0..5).map(|i| agent(&m, i, 5, (i as i32 % 4, i as i32 / 4), (3, 3))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = rollout_initial(&m, &agents, None, 2, 0, &mut rng).unwrap();
        let costs = EdgeCostModel::uniform();
        for mode in [
            NeighborhoodMode::Random,
            NeighborhoodMode::CollisionBased,
            NeighborhoodMode::IntersectionBased,
        ] {
            let all = select_neighborhood(&m, &plan, &agents, &costs, mode, 5, &mut rng);
            assert_eq!(all, vec![0, 1, 2, 3, 4]);
            let s = select_neighborhood(&m, &plan, &agents, &costs, mode, 3, &mut rng);
            assert_eq!(s.len(), 3);
            let pick = |seed| select_neighborhood(&m, &plan, &agents, &costs, mode, 3, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(pick(11), pick(11));
        }
    }

    #[test]
    fn collision_selection_includes_delayed_agent() {
        let m = GridMap::empty(4, 4);
        let agents: Vec<_> = (0..4)
            .map(|i| agent(&m, i, 4, (i as i32, 0), (i as i32, 3)))
            .collect();
        // agents 0-2 move straight right; agent 3 waits twice first
        let mut paths: Vec<Vec<Location>> = (0..3)
            .map(|i| vec![loc(i, 0), loc(i, 1), loc(i, 2), loc(i, 3)])
            .collect();
        paths.push(vec![loc(3, 0), loc(3, 0), loc(3, 0), loc(3, 1)]);
        let plan = WindowedPlan {
            start_step: 0,
            window: 3,
            paths,
        };
        plan.validate(&m).unwrap();
        for seed in 0..20 {
            let s = select_neighborhood(
                &m,
                &plan,
                &agents,
                &EdgeCostModel::uniform(),
                NeighborhoodMode::CollisionBased,
                2,
                &mut ChaCha8Rng::seed_from_u64(seed),
            );
            assert!(s.contains(&3), "seed {seed}: {s:?}");
        }
    }
}
