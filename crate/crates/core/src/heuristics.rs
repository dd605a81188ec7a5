//! Global guidance: per-goal heuristic fields and the edge-cost models that induce them.
//!
//! Three guidance modes share one representation, a [`GuidanceField`] holding `h(v)` for
//! every cell:
//!
//! * **BD**: backward Dijkstra under uniform costs, i.e. plain shortest distance.
//! * **SG**: backward Dijkstra under crisscross highway costs, where every row and column
//!   has an encouraged direction alternating with its parity.
//! * **DG**: each agent follows a congestion-aware guide path; `h(v)` is the shortest
//!   distance back onto the path plus the remaining path cost from the joining vertex.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Action, GridMap, Location};

/// Heuristic and edge-cost scalar. All cost models in this crate are integral.
pub type Cost = u32;

/// Sentinel for unreachable cells.
pub const INF: Cost = Cost::MAX;

/// Cost charged for a wait action: one time unit.
pub const WAIT_COST: Cost = 1;

#[derive(Debug, Error, PartialEq)]
pub enum HeuristicError {
    #[error("goal {0} is blocked or outside the map")]
    BlockedGoal(Location),
    #[error("location {0} is blocked or outside the map")]
    NotFree(Location),
    #[error("no path from {start} to {goal}")]
    Unreachable { start: Location, goal: Location },
    #[error("traffic count would drop below zero at {0}")]
    TrafficUnderflow(Location),
    #[error("guide path is empty")]
    EmptyGuidePath,
    #[error("guide path has non-adjacent vertices {0} -> {1}")]
    BrokenGuidePath(Location, Location),
    #[error("invalid cost model: {0}")]
    InvalidCosts(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    Bd,
    Sg,
    Dg,
}

impl GuidanceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GuidanceMode::Bd => "bd",
            GuidanceMode::Sg => "sg",
            GuidanceMode::Dg => "dg",
        }
    }
}

impl std::str::FromStr for GuidanceMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bd" => Ok(GuidanceMode::Bd),
            "sg" => Ok(GuidanceMode::Sg),
            "dg" => Ok(GuidanceMode::Dg),
            _ => Err(format!("unknown guidance mode `{s}` (expected bd|sg|dg)")),
        }
    }
}

/// Discouraged-direction cost of the crisscross highways.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrisscrossProfile {
    /// 100000: effectively one-way lanes (warehouse / sortation layouts).
    Strict,
    /// 3: a mild preference (open and city maps).
    Soft,
}

impl std::str::FromStr for CrisscrossProfile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(CrisscrossProfile::Strict),
            "soft" => Ok(CrisscrossProfile::Soft),
            _ => Err(format!("unknown crisscross profile `{s}` (expected strict|soft)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    Uniform,
    Crisscross,
    Traffic,
}

/// Penalty weights of the traffic-aware guide path planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficWeights {
    /// Per registered visit of the entered cell.
    pub c_vertex: f64,
    /// Per registered traversal of the reverse edge.
    pub c_edge: f64,
}

impl Default for TrafficWeights {
    fn default() -> Self {
        Self {
            c_vertex: 1.0,
            c_edge: 2.0,
        }
    }
}

/// Directed edge costs `Cost(u, v)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCostModel {
    pub mode: CostMode,
    pub base_cost: Cost,
    pub encouraged_cost: Cost,
    pub discouraged_cost: Cost,
    pub traffic_weights: TrafficWeights,
}

impl EdgeCostModel {
    /// Every move costs 1.
    pub fn uniform() -> Self {
        Self {
            mode: CostMode::Uniform,
            base_cost: 1,
            encouraged_cost: 1,
            discouraged_cost: 1,
            traffic_weights: TrafficWeights::default(),
        }
    }

    /// Unit base costs plus congestion penalties for guide path planning.
    pub fn traffic(weights: TrafficWeights) -> Self {
        Self {
            mode: CostMode::Traffic,
            traffic_weights: weights,
            ..Self::uniform()
        }
    }

    pub fn validate(&self) -> Result<(), HeuristicError> {
        if self.encouraged_cost == 0 || self.base_cost == 0 || self.discouraged_cost == 0 {
            return Err(HeuristicError::InvalidCosts("costs must be positive".into()));
        }
        if !(self.encouraged_cost <= self.base_cost && self.base_cost <= self.discouraged_cost) {
            return Err(HeuristicError::InvalidCosts(
                "need encouraged <= base <= discouraged".into(),
            ));
        }
        let w = self.traffic_weights;
        if !(w.c_vertex >= 0.0 && w.c_edge >= 0.0 && w.c_vertex.is_finite() && w.c_edge.is_finite()) {
            return Err(HeuristicError::InvalidCosts(
                "traffic weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// True when every move has the same cost.
    pub fn is_uniform(&self) -> bool {
        self.mode != CostMode::Crisscross
            || (self.encouraged_cost == self.base_cost && self.base_cost == self.discouraged_cost)
    }

    /// Cost of taking `a` from cell `from` on a map of the given width. Waits cost
    /// [`WAIT_COST`]. The cost does not depend on the target being free.
    #[inline]
    pub fn step_cost(&self, width: usize, from: usize, a: Action) -> Cost {
        match (self.mode, a) {
            (_, Action::Wait) => WAIT_COST,
            (CostMode::Crisscross, _) => {
                let row = from / width;
                let col = from % width;
                let encouraged = match a {
                    Action::Right => row % 2 == 0,
                    Action::Left => row % 2 == 1,
                    Action::Down => col % 2 == 0,
                    Action::Up => col % 2 == 1,
                    Action::Wait => unreachable!(),
                };
                if encouraged {
                    self.encouraged_cost
                } else {
                    self.discouraged_cost
                }
            }
            _ => self.base_cost,
        }
    }

    /// Cost of moving between two equal or 4-adjacent locations.
    pub fn edge_cost(&self, map: &GridMap, from: Location, to: Location) -> Option<Cost> {
        let a = Action::between(from, to)?;
        let idx = map.index(from)?;
        Some(self.step_cost(map.width(), idx, a))
    }
}

/// Crisscross highway costs: even rows encourage Right, odd rows Left; even columns
/// encourage Down, odd columns Up. Encouraged moves cost 1, the default is 2, and the
/// opposite direction costs 100000 (strict) or 3 (soft).
pub fn crisscross_costs(profile: CrisscrossProfile) -> EdgeCostModel {
    EdgeCostModel {
        mode: CostMode::Crisscross,
        base_cost: 2,
        encouraged_cost: 1,
        discouraged_cost: match profile {
            CrisscrossProfile::Strict => 100_000,
            CrisscrossProfile::Soft => 3,
        },
        traffic_weights: TrafficWeights::default(),
    }
}

/// `h(v)` for one goal over every cell of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceField {
    pub goal: Location,
    pub mode: GuidanceMode,
    width: usize,
    values: Vec<Cost>,
}

impl GuidanceField {
    /// Heuristic value at a location; [`INF`] for blocked or out-of-map cells.
    pub fn value(&self, v: Location) -> Cost {
        if v.row < 0 || v.col < 0 || v.col as usize >= self.width {
            return INF;
        }
        let idx = v.row as usize * self.width + v.col as usize;
        self.values.get(idx).copied().unwrap_or(INF)
    }

    #[inline]
    pub fn at(&self, index: usize) -> Cost {
        self.values[index]
    }

    pub fn values(&self) -> &[Cost] {
        &self.values
    }

    /// Text grid, one value per cell, `inf` for unreachable cells.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                if *v == INF {
                    out.push_str("inf");
                } else {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn field_mode(costs: &EdgeCostModel) -> GuidanceMode {
    match costs.mode {
        CostMode::Crisscross => GuidanceMode::Sg,
        _ => GuidanceMode::Bd,
    }
}

/// Shortest cost from every cell to `goal`, searched backwards from the goal. Moving
/// `v -> u` is charged the forward cost of that move.
pub fn backward_dijkstra(
    map: &GridMap,
    goal: Location,
    costs: &EdgeCostModel,
) -> Result<GuidanceField, HeuristicError> {
    let g = map.free_index(goal).ok_or(HeuristicError::BlockedGoal(goal))?;
    let values = if costs.is_uniform() {
        backward_bfs(map, g, costs.base_cost)
    } else {
        multi_source_dijkstra(map, costs, &[(g, 0)])
    };
    Ok(GuidanceField {
        goal,
        mode: field_mode(costs),
        width: map.width(),
        values,
    })
}

fn backward_bfs(map: &GridMap, goal: usize, unit: Cost) -> Vec<Cost> {
    let mut dist = vec![INF; map.num_cells()];
    let mut queue = VecDeque::with_capacity(map.free_count());
    dist[goal] = 0;
    queue.push_back(goal);
    while let Some(u) = queue.pop_front() {
        let next = dist[u].saturating_add(unit);
        for (_, v) in map.moves_from(u) {
            if dist[v] == INF {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Reverse-edge Dijkstra seeded with `(cell, initial value)` pairs.
fn multi_source_dijkstra(map: &GridMap, costs: &EdgeCostModel, seeds: &[(usize, Cost)]) -> Vec<Cost> {
    let width = map.width();
    let mut dist = vec![INF; map.num_cells()];
    let mut heap = BinaryHeap::new();
    for &(cell, value) in seeds {
        if value < dist[cell] {
            dist[cell] = value;
            heap.push(Reverse((value, cell as u32)));
        }
    }
    while let Some(Reverse((d, u))) = heap.pop() {
        let u = u as usize;
        if d > dist[u] {
            continue;
        }
        // `v` reaches `u` by the action opposite to `u -> v`.
        for (a, v) in map.moves_from(u) {
            let nd = d.saturating_add(costs.step_cost(width, v, a.opposite()));
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd, v as u32)));
            }
        }
    }
    dist
}

/// A congestion-aware path for one agent, with the remaining path cost at every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidePath {
    pub agent_id: usize,
    pub path: Vec<Location>,
    pub remaining_cost: Vec<Cost>,
}

impl GuidePath {
    pub fn goal(&self) -> Option<Location> {
        self.path.last().copied()
    }
}

/// Registered guide-path traffic: visits per cell and traversals per directed edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficCounts {
    width: usize,
    vertex_visits: Vec<u32>,
    /// Indexed by `[from cell][move action]`.
    edge_traversals: Vec<[u32; 4]>,
}

impl TrafficCounts {
    pub fn new(map: &GridMap) -> Self {
        Self {
            width: map.width(),
            vertex_visits: vec![0; map.num_cells()],
            edge_traversals: vec![[0; 4]; map.num_cells()],
        }
    }

    pub fn vertex_visits(&self, index: usize) -> u32 {
        self.vertex_visits[index]
    }

    /// Registered traversals of `from -> from + a`.
    pub fn edge_traversals(&self, from: usize, a: Action) -> u32 {
        match a {
            Action::Wait => 0,
            _ => self.edge_traversals[from][a.index()],
        }
    }

    pub fn total_vertex_visits(&self) -> u64 {
        self.vertex_visits.iter().map(|&v| v as u64).sum()
    }

    fn index(&self, v: Location) -> usize {
        v.row as usize * self.width + v.col as usize
    }

    fn path_edges(path: &GuidePath) -> impl Iterator<Item = (Location, Action)> + '_ {
        path.path.windows(2).filter_map(|w| {
            let a = Action::between(w[0], w[1])?;
            (a != Action::Wait).then_some((w[0], a))
        })
    }

    /// Registers a guide path.
    pub fn add(&mut self, path: &GuidePath) {
        for &v in &path.path {
            let i = self.index(v);
            self.vertex_visits[i] += 1;
        }
        for (from, a) in Self::path_edges(path) {
            let i = self.index(from);
            self.edge_traversals[i][a.index()] += 1;
        }
    }

    /// Unregisters a guide path; fails without modifying anything if any count would
    /// go negative.
    pub fn remove(&mut self, path: &GuidePath) -> Result<(), HeuristicError> {
        let mut probe = self.clone();
        for &v in &path.path {
            let i = probe.index(v);
            probe.vertex_visits[i] = probe.vertex_visits[i]
                .checked_sub(1)
                .ok_or(HeuristicError::TrafficUnderflow(v))?;
        }
        for (from, a) in Self::path_edges(path) {
            let i = probe.index(from);
            let slot = &mut probe.edge_traversals[i][a.index()];
            *slot = slot
                .checked_sub(1)
                .ok_or(HeuristicError::TrafficUnderflow(from))?;
        }
        *self = probe;
        Ok(())
    }
}

/// Swaps `old` (if any) for `new` in the registered traffic.
pub fn update_traffic(
    traffic: &mut TrafficCounts,
    old: Option<&GuidePath>,
    new: &GuidePath,
) -> Result<(), HeuristicError> {
    if let Some(old) = old {
        traffic.remove(old)?;
    }
    traffic.add(new);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapCost(f64);

impl Eq for HeapCost {}

impl PartialOrd for HeapCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapCost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Minimum-cost path from `start` to `goal` under congestion-penalized costs
///
/// `cost(u -> v) = base(u -> v) + c_vertex * visits[v] + c_edge * traversals[v -> u]`,
///
/// so entering busy cells and moving against the registered flow are both discouraged.
/// The returned remaining costs are measured under the base model.
pub fn plan_guide_path(
    map: &GridMap,
    agent_id: usize,
    start: Location,
    goal: Location,
    traffic: &TrafficCounts,
    costs: &EdgeCostModel,
) -> Result<GuidePath, HeuristicError> {
    let s = map.free_index(start).ok_or(HeuristicError::NotFree(start))?;
    let g = map.free_index(goal).ok_or(HeuristicError::BlockedGoal(goal))?;
    let width = map.width();
    let w = costs.traffic_weights;

    let mut dist = vec![f64::INFINITY; map.num_cells()];
    let mut parent = vec![usize::MAX; map.num_cells()];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(Reverse((HeapCost(0.0), s)));
    while let Some(Reverse((HeapCost(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == g {
            break;
        }
        for (a, v) in map.moves_from(u) {
            let penalty = w.c_vertex * traffic.vertex_visits(v) as f64
                + w.c_edge * traffic.edge_traversals(v, a.opposite()) as f64;
            let nd = d + costs.step_cost(width, u, a) as f64 + penalty;
            if nd < dist[v] {
                dist[v] = nd;
                parent[v] = u;
                heap.push(Reverse((HeapCost(nd), v)));
            }
        }
    }
    if dist[g].is_infinite() {
        return Err(HeuristicError::Unreachable { start, goal });
    }

    let mut cells = vec![g];
    while *cells.last().unwrap() != s {
        cells.push(parent[*cells.last().unwrap()]);
    }
    cells.reverse();
    let path: Vec<Location> = cells.iter().map(|&c| map.location(c)).collect();
    let remaining_cost = remaining_costs(map, &path, costs)?;
    Ok(GuidePath {
        agent_id,
        path,
        remaining_cost,
    })
}

fn remaining_costs(map: &GridMap, path: &[Location], costs: &EdgeCostModel) -> Result<Vec<Cost>, HeuristicError> {
    let mut rem: Vec<Cost> = vec![0; path.len()];
    for i in (0..path.len().saturating_sub(1)).rev() {
        let step = costs
            .edge_cost(map, path[i], path[i + 1])
            .ok_or(HeuristicError::BrokenGuidePath(path[i], path[i + 1]))?;
        rem[i] = rem[i + 1].saturating_add(step);
    }
    Ok(rem)
}

/// `h(v) = SPCost(v, v') + GPCost(v')` where `v'` is the guide path vertex closest to
/// `v`; among equally close vertices the one with the smaller remaining cost wins.
pub fn dynamic_guidance_field(
    map: &GridMap,
    guide: &GuidePath,
    costs: &EdgeCostModel,
) -> Result<GuidanceField, HeuristicError> {
    let goal = guide.goal().ok_or(HeuristicError::EmptyGuidePath)?;
    let width = map.width();
    let n = map.num_cells();
    // (distance to the path, remaining cost at the nearest path vertex)
    let mut best = vec![(INF, INF); n];
    let mut heap = BinaryHeap::new();
    for (&p, &rem) in guide.path.iter().zip(&guide.remaining_cost) {
        let idx = map.free_index(p).ok_or(HeuristicError::NotFree(p))?;
        if (0, rem) < best[idx] {
            best[idx] = (0, rem);
            heap.push(Reverse((0, rem, idx as u32)));
        }
    }
    while let Some(Reverse((d, rem, u))) = heap.pop() {
        let u = u as usize;
        if (d, rem) > best[u] {
            continue;
        }
        for (a, v) in map.moves_from(u) {
            let key = (d.saturating_add(costs.step_cost(width, v, a.opposite())), rem);
            if key < best[v] {
                best[v] = key;
                heap.push(Reverse((key.0, key.1, v as u32)));
            }
        }
    }
    let values = best
        .into_iter()
        .map(|(d, rem)| if d == INF { INF } else { d.saturating_add(rem) })
        .collect();
    Ok(GuidanceField {
        goal,
        mode: GuidanceMode::Dg,
        width,
        values,
    })
}

/// Default number of cached per-goal fields.
pub const DEFAULT_CACHE_CAPACITY: usize = 4096;

/// LRU cache of backward-Dijkstra fields keyed by goal cell, for one map and cost model.
pub struct FieldCache {
    costs: EdgeCostModel,
    fields: LruCache<usize, Arc<GuidanceField>>,
}

impl FieldCache {
    pub fn new(costs: EdgeCostModel, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        Self {
            costs,
            fields: LruCache::new(cap),
        }
    }

    pub fn costs(&self) -> &EdgeCostModel {
        &self.costs
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn get(&mut self, map: &GridMap, goal: Location) -> Result<Arc<GuidanceField>, HeuristicError> {
        let key = map.free_index(goal).ok_or(HeuristicError::BlockedGoal(goal))?;
        if let Some(f) = self.fields.get(&key) {
            return Ok(f.clone());
        }
        let field = Arc::new(backward_dijkstra(map, goal, &self.costs)?);
        self.fields.put(key, field.clone());
        Ok(field)
    }

    /// Fetches fields for several goals, computing the misses in parallel.
    pub fn get_many(
        &mut self,
        map: &GridMap,
        goals: &[Location],
    ) -> Result<Vec<Arc<GuidanceField>>, HeuristicError> {
        let mut missing: Vec<Location> = goals
            .iter()
            .copied()
            .filter(|g| map.index(*g).is_none_or(|k| !self.fields.contains(&k)))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let costs = &self.costs;
        let computed: Result<Vec<GuidanceField>, HeuristicError> = missing
            .par_iter()
            .map(|&g| backward_dijkstra(map, g, costs))
            .collect();
        let mut fresh = std::collections::HashMap::new();
        for f in computed? {
            let key = map.index(f.goal).unwrap();
            fresh.insert(key, Arc::new(f));
        }
        let mut out = Vec::with_capacity(goals.len());
        for &g in goals {
            let key = map.index(g).unwrap();
            let field = match fresh.get(&key) {
                Some(f) => f.clone(),
                None => match self.fields.get(&key) {
                    Some(f) => f.clone(),
                    None => Arc::new(backward_dijkstra(map, g, costs)?),
                },
            };
            out.push(field);
        }
        for (key, f) in fresh {
            self.fields.put(key, f);
        }
        Ok(out)
    }
}
