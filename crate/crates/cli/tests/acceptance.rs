//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL line each;
//! exits nonzero if any criterion fails.

use std::collections::{HashMap, HashSet, VecDeque};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lmapf_core::grid::{parse_map, Action, GridMap, Location};
use lmapf_core::heuristics::{backward_dijkstra, crisscross_costs, CrisscrossProfile, EdgeCostModel, GuidanceMode};
use lmapf_core::observe::{encode, ObservationConfig};
use lmapf_core::pibt::{cs_pibt_step, pibt_step, rank_by_heuristic, ActionPreference, AgentState};
use lmapf_core::policy::{NeuralPolicy, PolicyWeights};
use lmapf_core::sim::{random_starts, run_episode, Episode, EpisodeOutputs, GuidanceConfig, Metrics, SolverKind};
use lmapf_core::wlns::{objective, refine_traced, rollout_initial, LnsConfig, NeighborhoodMode};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 8] = [
        (1, "safety over 50 episodes", safety),
        (2, "CS-PIBT identity", cs_identity),
        (3, "PIBT brute-force oracle", pibt_oracle),
        (4, "LNS optimality at tiny scale", lns_optimality),
        (5, "guidance directionality", guidance_direction),
        (6, "heuristic encoding exactness", encoding_exactness),
        (7, "performance floor", performance),
        (8, "CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let started = Instant::now();
        let verdict = std::panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {n} PASS ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------------------
// Independent helpers

fn maps_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../maps")
}

fn load_map(name: &str) -> GridMap {
    parse_map(&std::fs::read_to_string(maps_dir().join(format!("{name}.map"))).unwrap()).unwrap()
}

fn step(v: Location, a: Action) -> Location {
    let (dr, dc) = match a {
        Action::Up => (-1, 0),
        Action::Down => (1, 0),
        Action::Left => (0, -1),
        Action::Right => (0, 1),
        Action::Wait => (0, 0),
    };
    Location::new(v.row + dr, v.col + dc)
}

/// No move into a blocked or out-of-map cell, no shared target, no swap.
fn joint_ok(map: &GridMap, from: &[Location], actions: &[Action]) -> bool {
    if from.len() != actions.len() {
        return false;
    }
    let to: Vec<Location> = from.iter().zip(actions).map(|(v, a)| step(*v, *a)).collect();
    if to.iter().any(|v| !map.is_free(*v)) {
        return false;
    }
    if to.iter().collect::<HashSet<_>>().len() != to.len() {
        return false;
    }
    let at: HashMap<Location, usize> = from.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    to.iter().enumerate().all(|(i, v)| match at.get(v) {
        Some(&j) if j != i => to[j] != from[i],
        _ => true,
    })
}

fn bfs(map: &GridMap, goal: Location) -> Vec<Option<u32>> {
    let w = map.width() as i32;
    let id = |v: Location| (v.row * w + v.col) as usize;
    let mut dist = vec![None; map.num_cells()];
    dist[id(goal)] = Some(0);
    let mut q = VecDeque::from([goal]);
    while let Some(v) = q.pop_front() {
        let d = dist[id(v)].unwrap();
        for a in Action::MOVES {
            let u = step(v, a);
            if map.is_free(u) && dist[id(u)].is_none() {
                dist[id(u)] = Some(d + 1);
                q.push_back(u);
            }
        }
    }
    dist
}

/// Dijkstra over the crisscross rule written out by hand (soft: discouraged = 3).
fn crisscross_distances(map: &GridMap, goal: Location, discouraged: u32) -> Vec<Option<u32>> {
    let w = map.width() as i32;
    let id = |v: Location| (v.row * w + v.col) as usize;
    let cost = |v: Location, a: Action| -> u32 {
        let good = match a {
            Action::Right => v.row % 2 == 0,
            Action::Left => v.row % 2 == 1,
            Action::Down => v.col % 2 == 0,
            Action::Up => v.col % 2 == 1,
            Action::Wait => true,
        };
        if good {
            1
        } else {
            discouraged
        }
    };
    let mut dist: Vec<Option<u32>> = vec![None; map.num_cells()];
    let mut heap = std::collections::BinaryHeap::new();
    dist[id(goal)] = Some(0);
    heap.push(std::cmp::Reverse((0u32, goal.row, goal.col)));
    while let Some(std::cmp::Reverse((d, r, c))) = heap.pop() {
        let u = Location::new(r, c);
        if dist[id(u)] != Some(d) {
            continue;
        }
        // predecessors v with v --a--> u
        for a in Action::MOVES {
            let v = step(u, a.opposite());
            if !map.is_free(v) {
                continue;
            }
            let nd = d + cost(v, a);
            if dist[id(v)].map_or(true, |old| nd < old) {
                dist[id(v)] = Some(nd);
                heap.push(std::cmp::Reverse((nd, v.row, v.col)));
            }
        }
    }
    dist
}

fn random_map<R: Rng>(rng: &mut R, h: usize, w: usize, density: f64) -> GridMap {
    GridMap::from_blocked(h, w, (0..h * w).map(|_| rng.gen_bool(density)).collect()).unwrap()
}

fn free_cells(map: &GridMap) -> Vec<Location> {
    map.free_cells().map(|i| map.location(i)).collect()
}

fn agent(map: &GridMap, id: usize, n: usize, at: Location, goal: Location, costs: &EdgeCostModel) -> AgentState {
    AgentState::new(id, n, at, goal, Arc::new(backward_dijkstra(map, goal, costs).unwrap()))
}

fn random_agents<R: Rng>(rng: &mut R, map: &GridMap, n: usize) -> Vec<AgentState> {
    let free = free_cells(map);
    let picks = rand::seq::index::sample(rng, free.len(), n);
    picks
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let goal = free[rng.gen_range(0..free.len())];
            let mut a = agent(map, i, n, free[k], goal, &EdgeCostModel::uniform());
            a.priority += rng.gen_range(0..4) as f64;
            a
        })
        .collect()
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

// ---------------------------------------------------------------------------------------
// 1. Safety

fn parse_trace(text: &str) -> Vec<Vec<Action>> {
    text.lines()
        .map(|line| {
            let (_, rest) = line.split_once(';').unwrap();
            rest.split(',')
                .map(|tok| Action::from_symbol(tok.split_once(':').unwrap().1.chars().next().unwrap()).unwrap())
                .collect()
        })
        .collect()
}

fn safety() -> Verdict {
    let maps = [
        ("city", load_map("city"), 200usize),
        ("warehouse", load_map("warehouse"), 200),
        ("random32", load_map("random32"), 150),
        ("empty16", load_map("empty16"), 80),
    ];
    let policy = NeuralPolicy::new(PolicyWeights::random(ObservationConfig::new(7, 7).unwrap(), 42));
    let solvers = [SolverKind::Pibt, SolverKind::Lpibt, SolverKind::Wlns, SolverKind::LpibtWlns];
    let modes = [GuidanceMode::Bd, GuidanceMode::Sg, GuidanceMode::Dg];
    let started = Instant::now();
    let mut checked_steps = 0usize;
    let mut combos = HashSet::new();
    for e in 0..50u64 {
        let solver = solvers[(e % 4) as usize];
        let mode = modes[(e / 4 % 3) as usize];
        let (name, map, n) = &maps[(e % 7 % 4) as usize];
        combos.insert((solver, mode));
        let seed = 1000 + e;
        let mut ep = Episode::new(map, random_starts(map, *n, seed).unwrap(), 500, seed);
        ep.solver = solver;
        ep.guidance = GuidanceConfig::new(mode);
        if e % 2 == 1 {
            ep.guidance.crisscross = CrisscrossProfile::Soft;
        }
        ep.policy = Some(&policy);
        ep.lns = LnsConfig {
            window: 3,
            iterations: 10,
            neighborhood_size: 8,
            selection_mode: NeighborhoodMode::CollisionBased,
            seed,
        };
        let mut trace = Vec::new();
        let m = run_episode(&ep, EpisodeOutputs { trace: Some(&mut trace), dataset: None })
            .map_err(|err| format!("episode {e} ({name}, {solver:?}, {mode:?}): {err}"))?;
        let steps = parse_trace(std::str::from_utf8(&trace).unwrap());
        if steps.len() != 500 || m.steps != 500 {
            return Err(format!("episode {e}: {} trace lines", steps.len()));
        }
        let mut pos = ep.starts.clone();
        for (t, acts) in steps.iter().enumerate() {
            if !joint_ok(map, &pos, acts) {
                return Err(format!("episode {e} ({name}, {solver:?}, {mode:?}): collision at step {t}"));
            }
            for (p, a) in pos.iter_mut().zip(acts) {
                *p = step(*p, *a);
            }
            checked_steps += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        combos.len() == 12 && secs < 600.0,
        format!(
            "50 episodes, {} solver/guidance combinations, {checked_steps} replayed steps, 0 collisions, {secs:.0}s (limit 600)",
            combos.len()
        ),
    )
}

// ---------------------------------------------------------------------------------------
// 2. CS-PIBT identity

fn cs_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut same = 0;
    let mut moving = 0;
    let total = 10_000;
    for _ in 0..total {
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(2..=16));
        let density = rng.gen_range(0.0..0.35);
        let map = random_map(&mut rng, h, w, density);
        if map.free_count() == 0 {
            same += 1;
            continue;
        }
        let n = ((map.free_count() as f64 * rng.gen_range(0.05..0.9)) as usize).max(1);
        let agents = random_agents(&mut rng, &map, n);
        let from: Vec<Location> = agents.iter().map(|a| a.location).collect();
        // a random valid, collision-free learned joint action (all Wait as fallback)
        let mut learned = vec![Action::Wait; n];
        for _ in 0..100 {
            let cand: Vec<Action> = from
                .iter()
                .map(|&v| {
                    let ok: Vec<Action> = Action::ALL.into_iter().filter(|&a| map.is_free(step(v, a))).collect();
                    ok[rng.gen_range(0..ok.len())]
                })
                .collect();
            if joint_ok(&map, &from, &cand) {
                learned = cand;
                break;
            }
        }
        moving += learned.iter().any(|&a| a != Action::Wait) as usize;
        let out = cs_pibt_step(&map, &agents, &learned, &mut rng).map_err(|e| e.to_string())?;
        same += (out.actions() == &learned[..]) as usize;
    }
    check(
        same == total,
        format!("{same}/{total} states returned unchanged ({moving} with at least one move)"),
    )
}

// ---------------------------------------------------------------------------------------
// 3. PIBT against brute-force enumeration

fn pibt_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut maps = Vec::new();
    while maps.len() < 20 {
        let (h, w) = (rng.gen_range(1..=4), rng.gen_range(2..=4));
        let density = rng.gen_range(0.0..0.3);
        let m = random_map(&mut rng, h, w, density);
        if m.free_count() >= 2 {
            maps.push(m);
        }
    }
    let mut cases = 0usize;
    let mut members = 0usize;
    for map in &maps {
        let free = free_cells(map);
        for &a in &free {
            for &b in &free {
                if a == b {
                    continue;
                }
                let from = [a, b];
                let valid: Vec<[Action; 2]> = Action::ALL
                    .iter()
                    .flat_map(|&x| Action::ALL.iter().map(move |&y| [x, y]))
                    .filter(|p| joint_ok(map, &from, p))
                    .collect();
                // both priority orders, heuristic preferences toward every goal pair
                for &ga in &free {
                    for &gb in &free {
                        for top in 0..2 {
                            let mut agents = vec![
                                agent(map, 0, 2, a, ga, &EdgeCostModel::uniform()),
                                agent(map, 1, 2, b, gb, &EdgeCostModel::uniform()),
                            ];
                            agents[top].priority += 1.0;
                            let prefs: Vec<ActionPreference> =
                                agents.iter().map(|ag| rank_by_heuristic(ag, map, &mut rng)).collect();
                            let out = pibt_step(map, &agents, &prefs).map_err(|e| e.to_string())?;
                            cases += 1;
                            members += valid.iter().any(|v| v[..] == *out.actions()) as usize;
                        }
                    }
                }
                // arbitrary preference orders as well
                for _ in 0..8 {
                    let agents = vec![
                        agent(map, 0, 2, a, a, &EdgeCostModel::uniform()),
                        agent(map, 1, 2, b, b, &EdgeCostModel::uniform()),
                    ];
                    let prefs: Vec<ActionPreference> = (0..2)
                        .map(|_| {
                            let mut r = Action::ALL;
                            r.shuffle(&mut rng);
                            ActionPreference::new(r).unwrap()
                        })
                        .collect();
                    let out = pibt_step(map, &agents, &prefs).map_err(|e| e.to_string())?;
                    cases += 1;
                    members += valid.iter().any(|v| v[..] == *out.actions()) as usize;
                }
            }
        }
    }
    check(
        members == cases,
        format!("{members}/{cases} joint actions in the enumerated collision-free set over 20 maps"),
    )
}

// ---------------------------------------------------------------------------------------
// 4. LNS optimality

/// Minimum windowed objective of two agents by exhaustive joint-state search.
fn joint_optimum(map: &GridMap, agents: &[AgentState], w: usize) -> u64 {
    let da = bfs(map, agents[0].goal);
    let db = bfs(map, agents[1].goal);
    let mut layer: HashSet<(Location, Location)> = HashSet::from([(agents[0].location, agents[1].location)]);
    for _ in 0..w {
        let mut next = HashSet::new();
        for &(a, b) in &layer {
            for x in Action::ALL {
                for y in Action::ALL {
                    if joint_ok(map, &[a, b], &[x, y]) {
                        next.insert((step(a, x), step(b, y)));
                    }
                }
            }
        }
        layer = next;
    }
    // unit costs: every agent pays w for the window, plus its distance at the horizon
    layer
        .iter()
        .map(|&(a, b)| {
            2 * w as u64 + da[map.index(a).unwrap()].unwrap() as u64 + db[map.index(b).unwrap()].unwrap() as u64
        })
        .min()
        .unwrap()
}

fn lns_optimality() -> Verdict {
    let costs = EdgeCostModel::uniform();
    let (mut optimal, mut within, mut monotone, mut improved) = (0, 0, 0, 0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (map, agents) = loop {
            let density = rng.gen_range(0.0..0.3);
            let map = random_map(&mut rng, 4, 4, density);
            if map.free_count() < 3 {
                continue;
            }
            let agents = random_agents(&mut rng, &map, 2);
            if agents.iter().all(|a| bfs(&map, a.goal)[map.index(a.location).unwrap()].is_some()) {
                break (map, agents);
            }
        };
        let best = joint_optimum(&map, &agents, 4);
        let init = rollout_initial(&map, &agents, None, 4, 0, &mut rng).map_err(|e| e.to_string())?;
        let before = objective(&map, &init, &costs, &agents).map_err(|e| e.to_string())?;
        let config = LnsConfig {
            window: 4,
            iterations: 200,
            neighborhood_size: 2,
            selection_mode: NeighborhoodMode::Random,
            seed,
        };
        let out = refine_traced(&map, init, &agents, &costs, &config).map_err(|e| e.to_string())?;
        out.plan.validate_for(&map, &agents).map_err(|e| e.to_string())?;
        let after = objective(&map, &out.plan, &costs, &agents).map_err(|e| e.to_string())?;
        optimal += (after == best) as usize;
        within += (after >= best && after <= best + 2) as usize;
        monotone += (out.accepted_objectives.windows(2).all(|w| w[1] < w[0])
            && out.accepted_objectives.last() == Some(&after)) as usize;
        improved += (after < before) as usize;
    }
    check(
        optimal >= 95 && within == 100 && monotone == 100,
        format!(
            "optimum reached in {optimal}/100, within +2 in {within}/100, monotone in {monotone}/100 ({improved} improved on the rollout)"
        ),
    )
}

// ---------------------------------------------------------------------------------------
// 5. Guidance directionality

fn mean_throughput(map: &GridMap, n: usize, mode: GuidanceMode) -> f64 {
    let seeds = 0..8u64;
    let total: f64 = seeds
        .clone()
        .map(|seed| {
            let mut ep = Episode::new(map, random_starts(map, n, seed).unwrap(), 500, seed);
            ep.guidance = GuidanceConfig::new(mode);
            run_episode(&ep, EpisodeOutputs::default()).unwrap().throughput
        })
        .sum();
    total / seeds.count() as f64
}

fn guidance_direction() -> Verdict {
    let started = Instant::now();
    let warehouse = load_map("warehouse");
    let city = load_map("city");
    let (w_bd, w_sg) = (
        mean_throughput(&warehouse, 100, GuidanceMode::Bd),
        mean_throughput(&warehouse, 100, GuidanceMode::Sg),
    );
    let (c_bd, c_dg) = (mean_throughput(&city, 150, GuidanceMode::Bd), mean_throughput(&city, 150, GuidanceMode::Dg));
    let (rw, rc) = (w_sg / w_bd, c_dg / c_bd);
    let secs = started.elapsed().as_secs_f64();
    check(
        rw >= 1.3 && rc >= 1.05 && secs < 900.0,
        format!(
            "warehouse 33x57 SG {w_sg:.3} vs BD {w_bd:.3} = {rw:.3}x (need 1.3); city 64x64 DG {c_dg:.3} vs BD {c_bd:.3} = {rc:.3}x (need 1.05), {secs:.0}s (limit 900)"
        ),
    )
}

// ---------------------------------------------------------------------------------------
// 6. Encoding exactness

fn encoding_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0f32;
    let mut cells = 0usize;
    let mut fixtures = 0;
    while fixtures < 1000 {
        let (h, w) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
        let density = rng.gen_range(0.0..0.4);
        let map = random_map(&mut rng, h, w, density);
        let free = free_cells(&map);
        if free.is_empty() {
            continue;
        }
        fixtures += 1;
        let (vh, vw) = (2 * rng.gen_range(0..6) + 1, 2 * rng.gen_range(0..6) + 1);
        let cfg = ObservationConfig::new(vh, vw).unwrap();
        let goal = free[rng.gen_range(0..free.len())];
        let at = free[rng.gen_range(0..free.len())];
        let soft = fixtures % 2 == 1;
        let (costs, dist) = if soft {
            (crisscross_costs(CrisscrossProfile::Soft), crisscross_distances(&map, goal, 3))
        } else {
            (EdgeCostModel::uniform(), bfs(&map, goal))
        };
        let agents = vec![agent(&map, 0, 1, at, goal, &costs)];
        let obs = encode(&map, &agents, 0, &cfg).map_err(|e| e.to_string())?;
        let h_of = |v: Location| map.is_free(v).then(|| dist[map.index(v).unwrap()]).flatten();
        let hc = h_of(at);
        for r in 0..vh {
            for c in 0..vw {
                let v = Location::new(at.row + r as i32 - (vh / 2) as i32, at.col + c as i32 - (vw / 2) as i32);
                let abs = h_of(v).map_or(1.0, |x| (x as f64 / (map.height() + map.width()) as f64) as f32);
                let rel = match (h_of(v), hc) {
                    (Some(x), Some(y)) => ((x as f64 - y as f64) / (vh + vw) as f64) as f32,
                    _ => 0.0,
                };
                let k = r * vw + c;
                worst = worst.max((obs.o1_channel(2)[k] - abs).abs());
                worst = worst.max((obs.o1_channel(3)[k] - rel).abs());
                cells += 1;
            }
        }
    }
    check(
        worst == 0.0,
        format!("1000 fixtures, {cells} cells per channel, max abs error {worst:e}"),
    )
}

// ---------------------------------------------------------------------------------------
// 7. Performance

fn step_times(map: &GridMap, solver: SolverKind, policy: Option<&NeuralPolicy>, steps: u64) -> Metrics {
    let mut ep = Episode::new(map, random_starts(map, 1000, 7).unwrap(), steps, 7);
    ep.solver = solver;
    ep.policy = policy;
    run_episode(&ep, EpisodeOutputs::default()).unwrap()
}

fn performance() -> Verdict {
    let map = load_map("random256");
    let pibt = step_times(&map, SolverKind::Pibt, None, 100);
    let policy = NeuralPolicy::new(PolicyWeights::random(ObservationConfig::default(), 7));
    let learned = step_times(&map, SolverKind::Lpibt, Some(&policy), 20);
    let (p, l) = (median(pibt.step_times.clone()), median(learned.step_times.clone()));
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    check(
        p < Duration::from_millis(50) && l < Duration::from_millis(250),
        format!(
            "1000 agents on 256x256: PIBT+BD median step {:.2} ms (limit 50), L-PIBT 11x11 random weights median step {:.1} ms (limit 250), {} threads",
            ms(p),
            ms(l),
            rayon::current_num_threads()
        ),
    )
}

// ---------------------------------------------------------------------------------------
// 8. CLI determinism

fn lmapf(args: &[String]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lmapf"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let weights = dir.path().join("w.silw");
    PolicyWeights::random(ObservationConfig::new(9, 9).unwrap(), 8)
        .save(std::fs::File::create(&weights).unwrap())
        .map_err(|e| e.to_string())?;
    let map = |name: &str| maps_dir().join(format!("{name}.map")).display().to_string();
    let w = weights.display().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["simulate", "--map", &map("random32"), "--agents", "60", "--steps", "200", "--seed", "3"],
        vec!["simulate", "--map", &map("warehouse"), "--agents", "100", "--steps", "200", "--seed", "4", "--guidance", "sg"],
        vec!["simulate", "--map", &map("city"), "--agents", "80", "--steps", "150", "--seed", "5", "--guidance", "dg", "--solver", "wlns", "--window", "3", "--iters", "20"],
        vec!["simulate", "--map", &map("random32"), "--agents", "40", "--steps", "60", "--seed", "6", "--solver", "lpibt", "--weights", &w, "--guidance", "dg"],
        vec!["simulate", "--map", &map("empty16"), "--agents", "30", "--steps", "40", "--seed", "7", "--solver", "lpibt-wlns", "--weights", &w, "--window", "2", "--iters", "10", "--guidance", "sg", "--crisscross", "soft"],
        vec!["simulate", "--map", &map("empty16"), "--agents", "20", "--steps", "50", "--seeds", "0..6", "--guidance", "dg"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let mut compared = 0;
    for (k, args) in runs.iter().enumerate() {
        let traced = !args.iter().any(|a| a == "--seeds");
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let mut a = args.clone();
            let trace = dir.path().join(format!("trace{k}_{rep}.txt"));
            if traced {
                a.extend(["--trace".to_string(), trace.display().to_string()]);
            }
            let stdout = lmapf(&a)?;
            let trace = if traced { std::fs::read(&trace).map_err(|e| e.to_string())? } else { Vec::new() };
            outputs.push((stdout, trace));
        }
        if outputs[0] != outputs[1] {
            return Err(format!("run {k} differs between repetitions: {args:?}"));
        }
        if outputs[0].0.is_empty() || (traced && outputs[0].1.is_empty()) {
            return Err(format!("run {k} produced no output"));
        }
        compared += 1;
    }
    let metrics = dir.path().join("metrics.jsonl");
    let mut sweep = lmapf(&runs[5])?;
    let mut a = runs[5].clone();
    a.extend(["--guidance".to_string(), "bd".to_string()]);
    sweep.extend(lmapf(&a)?);
    std::fs::write(&metrics, sweep).map_err(|e| e.to_string())?;
    let others: Vec<Vec<String>> = vec![
        vec!["score".into(), "--metrics".into(), metrics.display().to_string()],
        ["dump-heuristic", "--map", &map("city"), "--goal", "8,10", "--guidance", "dg", "--start", "48,40"]
            .into_iter()
            .map(String::from)
            .collect(),
        ["dump-heuristic", "--map", &map("warehouse"), "--goal", "0,0", "--guidance", "sg"]
            .into_iter()
            .map(String::from)
            .collect(),
    ];
    for args in &others {
        let (x, y) = (lmapf(args)?, lmapf(args)?);
        if x != y || x.is_empty() {
            return Err(format!("{args:?} differs between repetitions or is empty"));
        }
        compared += 1;
    }
    // collection output is deterministic too
    let mut files = Vec::new();
    for rep in 0..2 {
        let out = dir.path().join(format!("d{rep}.sild"));
        let args: Vec<String> = ["collect", "--map", &map("empty16"), "--agents", "10", "--steps", "30", "--seed", "9", "--window", "3", "--iters", "20", "--fov", "7", "--out", &out.display().to_string()]
            .into_iter()
            .map(String::from)
            .collect();
        lmapf(&args)?;
        files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    check(
        files[0] == files[1],
        format!("{compared} simulate/score/dump-heuristic invocations (stdout and traces) and one collect invocation byte-identical across repetitions"),
    )
}
