//! One-step collision resolution with priority inheritance and backtracking (PIBT),
//! and the collision-shield variant that puts a learned action first.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::grid::{apply_action, Action, GridMap, Location};
use crate::heuristics::{GuidanceField, INF};

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub location: Location,
    pub goal: Location,
    /// Steps since the last goal completion plus a per-agent tie-breaker in `[0, 1)`.
    pub priority: f64,
    pub field: Arc<GuidanceField>,
}

impl AgentState {
    pub fn new(id: usize, n: usize, location: Location, goal: Location, field: Arc<GuidanceField>) -> Self {
        Self {
            id,
            location,
            goal,
            priority: epsilon(id, n),
            field,
        }
    }
}

/// Tie-breaker that keeps priorities unique.
pub fn epsilon(id: usize, n: usize) -> f64 {
    id as f64 / n.max(1) as f64
}

/// A permutation of the five actions, most preferred first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionPreference {
    ranking: [Action; 5],
}

impl ActionPreference {
    pub fn new(ranking: [Action; 5]) -> Option<Self> {
        let mut seen = [false; 5];
        for a in ranking {
            if std::mem::replace(&mut seen[a.index()], true) {
                return None;
            }
        }
        Some(Self { ranking })
    }

    pub fn ranking(&self) -> &[Action; 5] {
        &self.ranking
    }

    pub fn first(&self) -> Action {
        self.ranking[0]
    }

    /// Moves `a` to the front, keeping the relative order of the rest.
    pub fn promote(mut self, a: Action) -> Self {
        let pos = self.ranking.iter().position(|&x| x == a).unwrap();
        self.ranking[..=pos].rotate_right(1);
        self
    }
}

/// One action per agent, indexed like the agent slice it was planned for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointAction(pub Vec<Action>);

impl JointAction {
    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CollisionError {
    #[error("agent {agent} moves from {from} onto blocked or out-of-map cell {to}")]
    InvalidMove {
        agent: usize,
        from: Location,
        to: Location,
    },
    #[error("vertex collision: agents {first} and {second} both end at {at}")]
    Vertex {
        first: usize,
        second: usize,
        at: Location,
    },
    #[error("edge collision: agents {first} and {second} swap between {a} and {b}")]
    Edge {
        first: usize,
        second: usize,
        a: Location,
        b: Location,
    },
    #[error("joint action has {actions} entries for {agents} agents")]
    Arity { agents: usize, actions: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PibtError {
    #[error("agent {0} is not on a free cell")]
    NotFree(usize),
    #[error("agents {0} and {1} share a cell")]
    SharedCell(usize, usize),
    #[error("expected {expected} preferences, got {got}")]
    Arity { expected: usize, got: usize },
}

/// Checks a joint action for off-map/blocked moves and vertex or edge collisions.
pub fn check_joint_action(map: &GridMap, from: &[Location], actions: &[Action]) -> Result<(), CollisionError> {
    if from.len() != actions.len() {
        return Err(CollisionError::Arity {
            agents: from.len(),
            actions: actions.len(),
        });
    }
    let to: Vec<Location> = from.iter().zip(actions).map(|(v, a)| apply_action(*v, *a)).collect();
    check_transition(map, from, &to)
}

/// Checks one timestep `from -> to` of a joint plan.
pub fn check_transition(map: &GridMap, from: &[Location], to: &[Location]) -> Result<(), CollisionError> {
    let mut now = std::collections::HashMap::with_capacity(from.len());
    for (i, v) in from.iter().enumerate() {
        now.insert(*v, i);
    }
    let mut next = std::collections::HashMap::with_capacity(to.len());
    for (i, (&f, &t)) in from.iter().zip(to).enumerate() {
        if !map.is_free(t) || Action::between(f, t).is_none() {
            return Err(CollisionError::InvalidMove {
                agent: i,
                from: f,
                to: t,
            });
        }
        if let Some(j) = next.insert(t, i) {
            return Err(CollisionError::Vertex {
                first: j,
                second: i,
                at: t,
            });
        }
    }
    for (i, (&f, &t)) in from.iter().zip(to).enumerate() {
        if f == t {
            continue;
        }
        if let Some(&j) = now.get(&t) {
            if j != i && to[j] == f {
                return Err(CollisionError::Edge {
                    first: i.min(j),
                    second: i.max(j),
                    a: f,
                    b: t,
                });
            }
        }
    }
    Ok(())
}

/// Ranks actions by the heuristic value of the cell they lead to. Ties are broken by a
/// seeded shuffle; unreachable targets come after reachable ones and invalid moves last.
pub fn rank_by_heuristic<R: Rng + ?Sized>(agent: &AgentState, map: &GridMap, rng: &mut R) -> ActionPreference {
    let mut ranking = Action::ALL;
    ranking.shuffle(rng);
    ranking.sort_by_key(|&a| {
        let u = apply_action(agent.location, a);
        if !map.is_free(u) {
            (2u8, 0)
        } else {
            match agent.field.value(u) {
                INF => (1, 0),
                h => (0, h),
            }
        }
    });
    ActionPreference { ranking }
}

const NONE: u32 = u32::MAX;

/// Reusable PIBT buffers sized to one map.
pub struct PibtPlanner {
    occupied_now: Vec<u32>,
    occupied_next: Vec<u32>,
    current: Vec<usize>,
    next: Vec<u32>,
    reserved: Vec<usize>,
}

impl PibtPlanner {
    pub fn new(map: &GridMap) -> Self {
        Self {
            occupied_now: vec![NONE; map.num_cells()],
            occupied_next: vec![NONE; map.num_cells()],
            current: Vec::new(),
            next: Vec::new(),
            reserved: Vec::new(),
        }
    }

    /// One collision-free step. Agents are processed in descending priority; each takes
    /// its best action not blocked by a committed agent, recursively pushing undecided
    /// agents out of the way and backtracking to its next choice if they cannot move.
    pub fn step(
        &mut self,
        map: &GridMap,
        agents: &[AgentState],
        prefs: &[ActionPreference],
    ) -> Result<JointAction, PibtError> {
        if prefs.len() != agents.len() {
            return Err(PibtError::Arity {
                expected: agents.len(),
                got: prefs.len(),
            });
        }
        if self.occupied_now.len() != map.num_cells() {
            *self = Self::new(map);
        }
        self.current.clear();
        self.next.clear();
        self.next.resize(agents.len(), NONE);
        let result = self.fill(map, agents).map(|_| {
            let mut order: Vec<usize> = (0..agents.len()).collect();
            order.sort_by(|&a, &b| {
                agents[b]
                    .priority
                    .total_cmp(&agents[a].priority)
                    .then(a.cmp(&b))
            });
            for &i in &order {
                if self.next[i] == NONE {
                    self.plan(map, i, prefs);
                }
            }
            let actions = (0..agents.len())
                .map(|i| {
                    let from = map.location(self.current[i]);
                    let to = map.location(self.next[i] as usize);
                    Action::between(from, to).expect("planned moves are adjacent")
                })
                .collect();
            JointAction(actions)
        });
        for &c in &self.current {
            self.occupied_now[c] = NONE;
        }
        for &c in &self.reserved {
            self.occupied_next[c] = NONE;
        }
        self.reserved.clear();
        result
    }

    fn fill(&mut self, map: &GridMap, agents: &[AgentState]) -> Result<(), PibtError> {
        for (i, a) in agents.iter().enumerate() {
            let idx = map.free_index(a.location).ok_or(PibtError::NotFree(i))?;
            self.current.push(idx);
            if self.occupied_now[idx] != NONE {
                return Err(PibtError::SharedCell(self.occupied_now[idx] as usize, i));
            }
            self.occupied_now[idx] = i as u32;
        }
        Ok(())
    }

    fn plan(&mut self, map: &GridMap, i: usize, prefs: &[ActionPreference]) -> bool {
        let from = self.current[i];
        for &a in prefs[i].ranking() {
            let Some(u) = map.step_index(from, a) else {
                continue;
            };
            if self.occupied_next[u] != NONE {
                continue;
            }
            let k = self.occupied_now[u];
            // swap with an agent that already committed to our cell
            if k != NONE && k as usize != i && self.next[k as usize] == from as u32 {
                continue;
            }
            self.occupied_next[u] = i as u32;
            self.reserved.push(u);
            self.next[i] = u as u32;
            if k == NONE || k as usize == i {
                return true;
            }
            if self.next[k as usize] == NONE && !self.plan(map, k as usize, prefs) {
                continue;
            }
            return true;
        }
        self.occupied_next[from] = i as u32;
        self.reserved.push(from);
        self.next[i] = from as u32;
        false
    }
}

/// One PIBT step with freshly allocated buffers.
pub fn pibt_step(map: &GridMap, agents: &[AgentState], prefs: &[ActionPreference]) -> Result<JointAction, PibtError> {
    PibtPlanner::new(map).step(map, agents, prefs)
}

/// Preferences with the learned action first (when it is a valid move) followed by the
/// heuristic ranking of the remaining actions.
pub fn shielded_preferences<R: Rng + ?Sized>(
    map: &GridMap,
    agents: &[AgentState],
    learned: &[Action],
    rng: &mut R,
) -> Vec<ActionPreference> {
    agents
        .iter()
        .zip(learned)
        .map(|(agent, &a)| {
            let pref = rank_by_heuristic(agent, map, rng);
            if map.is_free(apply_action(agent.location, a)) {
                pref.promote(a)
            } else {
                pref
            }
        })
        .collect()
}

/// CS-PIBT: PIBT over preferences that always try the learned action first. A valid,
/// collision-free learned joint action is returned unchanged.
pub fn cs_pibt_step<R: Rng + ?Sized>(
    map: &GridMap,
    agents: &[AgentState],
    learned: &[Action],
    rng: &mut R,
) -> Result<JointAction, PibtError> {
    if learned.len() != agents.len() {
        return Err(PibtError::Arity {
            expected: agents.len(),
            got: learned.len(),
        });
    }
    let prefs = shielded_preferences(map, agents, learned, rng);
    pibt_step(map, agents, &prefs)
}

/// Arrived agents drop back to their tie-breaker; everyone else ages by one step.
pub fn update_priorities(agents: &mut [AgentState], arrived: &[bool]) {
    let n = agents.len();
    for (agent, &done) in agents.iter_mut().zip(arrived) {
        if done {
            agent.priority = epsilon(agent.id, n);
        } else {
            agent.priority += 1.0;
        }
    }
}
