#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use lmapf_core::grid::{Action, GridMap, Location};
use lmapf_core::heuristics::{backward_dijkstra, EdgeCostModel};
use lmapf_core::pibt::AgentState;
use rand::Rng;

pub fn step(v: Location, a: Action) -> Location {
    let (dr, dc) = match a {
        Action::Up => (-1, 0),
        Action::Down => (1, 0),
        Action::Left => (0, -1),
        Action::Right => (0, 1),
        Action::Wait => (0, 0),
    };
    Location::new(v.row + dr, v.col + dc)
}

/// Shortest move counts to `goal` by breadth-first search over free cells.
pub fn bfs(map: &GridMap, goal: Location) -> Vec<Option<u32>> {
    let (h, w) = (map.height() as i32, map.width() as i32);
    let mut dist = vec![None; (h * w) as usize];
    let id = |v: Location| (v.row * w + v.col) as usize;
    if !map.is_free(goal) {
        return dist;
    }
    dist[id(goal)] = Some(0);
    let mut q = VecDeque::from([goal]);
    while let Some(v) = q.pop_front() {
        let d = dist[id(v)].unwrap();
        for a in [Action::Up, Action::Down, Action::Left, Action::Right] {
            let u = step(v, a);
            if map.is_free(u) && dist[id(u)].is_none() {
                dist[id(u)] = Some(d + 1);
                q.push_back(u);
            }
        }
    }
    dist
}

/// Vertex and swap collision check written independently of the library checker.
pub fn joint_ok(map: &GridMap, from: &[Location], actions: &[Action]) -> bool {
    let to: Vec<Location> = from.iter().zip(actions).map(|(v, a)| step(*v, *a)).collect();
    if to.iter().any(|v| !map.is_free(*v)) {
        return false;
    }
    let distinct: HashSet<_> = to.iter().collect();
    if distinct.len() != to.len() {
        return false;
    }
    for i in 0..from.len() {
        for j in i + 1..from.len() {
            if to[i] == from[j] && to[j] == from[i] {
                return false;
            }
        }
    }
    true
}

pub fn random_map<R: Rng>(rng: &mut R, h: usize, w: usize, density: f64) -> GridMap {
    let blocked = (0..h * w).map(|_| rng.gen_bool(density)).collect();
    GridMap::from_blocked(h, w, blocked).unwrap()
}

pub fn free_locations(map: &GridMap) -> Vec<Location> {
    map.free_cells().map(|i| map.location(i)).collect()
}

pub fn bd_agent(map: &GridMap, id: usize, n: usize, at: Location, goal: Location) -> AgentState {
    let field = Arc::new(backward_dijkstra(map, goal, &EdgeCostModel::uniform()).unwrap());
    AgentState::new(id, n, at, goal, field)
}

/// `n` agents on distinct random free cells with random goals.
pub fn random_agents<R: Rng>(rng: &mut R, map: &GridMap, n: usize) -> Vec<AgentState> {
    let free = free_locations(map);
    let picks = rand::seq::index::sample(rng, free.len(), n);
    picks
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let goal = free[rng.gen_range(0..free.len())];
            let mut a = bd_agent(map, i, n, free[k], goal);
            a.priority += rng.gen_range(0..5) as f64;
            a
        })
        .collect()
}
