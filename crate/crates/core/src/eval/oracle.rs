//! Exact makespan for tiny single-pair missions.
//!
//! With one UAV and one UGV every round ends with both vehicles at the same
//! ground node and the same clock, so a mission is a chain of rounds whose
//! durations depend only on where the round starts, which tasks it visits
//! and where the UAV lands. The best visiting order for each (start, task
//! set, landing) comes from a Held-Karp table, and Dijkstra over
//! (ground node, visited set, rounds used) finds the cheapest chain that
//! fits the step horizon. The winner is executed through the environment,
//! so the returned route replays like any planner's.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::env::trace::{Episode, RouteSolution};
use crate::env::{Action, EnvConfig, MissionGraph, MissionState, Status, FUEL_EPS};
use crate::error::{Error, Result};
use crate::scenario::{Scenario, TeamConfig};

pub const ORACLE_MAX_TASKS: usize = 6;
/// Depot included.
pub const ORACLE_MAX_RECHARGE_NODES: usize = 3;

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub makespan_s: f64,
    /// Per round: visited mission nodes in order, then the landing node.
    pub rounds: Vec<(Vec<usize>, usize)>,
    pub route: RouteSolution,
}

/// Best way to fly one round: the visiting order and its duration.
#[derive(Clone, Debug)]
struct RoundOption {
    order: Vec<usize>,
    duration_s: f64,
}

/// Cheapest round from ground node `g` for every (task subset, landing node).
fn round_table(graph: &MissionGraph, g: usize) -> HashMap<(u32, usize), RoundOption> {
    let n = graph.num_tasks();
    let cap = graph.capacity();
    let t_r = graph.team.recharge_time_s;
    let full = 1u32 << n;
    // (remaining fuel, airborne time, predecessor task) per (subset, last task).
    let mut dp: Vec<Vec<Option<(f64, f64, Option<usize>)>>> = vec![vec![None; n]; full as usize];
    let reachable = |rem: f64, j: usize| rem >= -FUEL_EPS && rem - graph.fuel_to_ground(j) >= -FUEL_EPS;
    for t in 0..n {
        let j = MissionGraph::task_node(t);
        let rem = cap - graph.air_fuel(g, j);
        if reachable(rem, j) {
            dp[1 << t][t] = Some((rem, graph.air_time(g, j), None));
        }
    }
    for s in 1..full {
        for last in 0..n {
            let Some((rem, time, _)) = dp[s as usize][last] else { continue };
            let from = MissionGraph::task_node(last);
            for t in 0..n {
                if s & (1 << t) != 0 {
                    continue;
                }
                let j = MissionGraph::task_node(t);
                let r = rem - graph.air_fuel(from, j);
                if !reachable(r, j) {
                    continue;
                }
                let cand = (r, time + graph.air_time(from, j), Some(last));
                let slot = &mut dp[(s | 1 << t) as usize][t];
                // More fuel left means a shorter path; time breaks float ties.
                if slot.is_none_or(|(br, bt, _)| r > br || (r == br && cand.1 < bt)) {
                    *slot = Some(cand);
                }
            }
        }
    }

    let mut table: HashMap<(u32, usize), RoundOption> = HashMap::new();
    let mut offer = |key: (u32, usize), order: Vec<usize>, air_s: f64, h: usize| {
        let duration_s = air_s.max(graph.road_time(g, h)) + t_r;
        if table.get(&key).is_none_or(|o| duration_s < o.duration_s) {
            table.insert(key, RoundOption { order, duration_s });
        }
    };
    for &h in &graph.ground {
        if h != g && cap - graph.air_fuel(g, h) >= -FUEL_EPS {
            offer((0, h), Vec::new(), graph.air_time(g, h), h);
        }
    }
    for s in 1..full {
        for last in 0..n {
            let Some((rem, time, _)) = dp[s as usize][last] else { continue };
            let from = MissionGraph::task_node(last);
            for &h in &graph.ground {
                if rem - graph.air_fuel(from, h) < -FUEL_EPS {
                    continue;
                }
                let mut order = Vec::with_capacity(s.count_ones() as usize);
                let (mut set, mut cur) = (s, Some(last));
                while let Some(c) = cur {
                    order.push(MissionGraph::task_node(c));
                    cur = dp[set as usize][c].expect("on path").2;
                    set &= !(1 << c);
                }
                order.reverse();
                offer((s, h), order, time + graph.air_time(from, h), h);
            }
        }
    }
    table
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
struct Cost(f64);

impl Eq for Cost {}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

type Node = (usize, u32, usize);

/// Minimum-makespan mission for one UAV and one UGV under sortie-wise
/// selection, found exhaustively. Limited to [`ORACLE_MAX_TASKS`] tasks and
/// [`ORACLE_MAX_RECHARGE_NODES`] recharge nodes.
pub fn brute_force_oracle(scenario: &Scenario, team: TeamConfig) -> Result<OracleSolution> {
    if team.num_uavs != 1 || team.num_ugvs != 1 {
        return Err(Error::Unsupported(format!(
            "the oracle handles one UAV and one UGV, not {}U{}G",
            team.num_uavs, team.num_ugvs
        )));
    }
    let state = MissionState::reset_with(scenario, team, EnvConfig::default())?;
    let graph = state.graph();
    let n = graph.num_tasks();
    if n > ORACLE_MAX_TASKS {
        return Err(Error::SizeLimit(format!("{n} tasks (limit {ORACLE_MAX_TASKS})")));
    }
    if graph.ground.len() > ORACLE_MAX_RECHARGE_NODES {
        return Err(Error::SizeLimit(format!(
            "{} recharge nodes (limit {ORACLE_MAX_RECHARGE_NODES})",
            graph.ground.len()
        )));
    }
    let horizon = state.horizon;
    let goal = (1u32 << n) - 1;
    let tables: HashMap<usize, HashMap<(u32, usize), RoundOption>> =
        graph.ground.iter().map(|&g| (g, round_table(graph, g))).collect();

    let start: Node = (MissionGraph::DEPOT, 0, 0);
    let mut best: HashMap<Node, f64> = HashMap::from([(start, 0.0)]);
    let mut parent: HashMap<Node, (Node, u32, usize)> = HashMap::new();
    let mut heap = BinaryHeap::from([Reverse((Cost(0.0), start))]);
    let mut done = None;
    while let Some(Reverse((Cost(cost), node))) = heap.pop() {
        if best.get(&node).is_some_and(|&b| cost > b) {
            continue;
        }
        let (g, visited, rounds) = node;
        if visited == goal {
            done = Some((cost, node));
            break;
        }
        let mut options: Vec<(&(u32, usize), &RoundOption)> =
            tables[&g].iter().filter(|((s, _), _)| s & visited == 0).collect();
        options.sort_by_key(|(k, _)| **k);
        for (&(s, h), opt) in options {
            let next_visited = visited | s;
            let steps = next_visited.count_ones() as usize + 2 * (rounds + 1);
            let fits = if next_visited == goal { steps <= horizon } else { steps < horizon };
            if !fits {
                continue;
            }
            let next = (h, next_visited, rounds + 1);
            let c = cost + opt.duration_s;
            if best.get(&next).is_none_or(|&b| c < b) {
                best.insert(next, c);
                parent.insert(next, (node, s, h));
                heap.push(Reverse((Cost(c), next)));
            }
        }
    }
    let Some((_, mut node)) = done else {
        return Err(Error::Infeasible {
            task: 0,
            reason: "no mission covering every task fits the horizon".into(),
        });
    };

    let mut rounds = Vec::new();
    while let Some(&(prev, s, h)) = parent.get(&node) {
        rounds.push((tables[&prev.0][&(s, h)].order.clone(), h));
        node = prev;
    }
    rounds.reverse();

    let mut ep = Episode::new(state);
    for (order, h) in &rounds {
        for &j in order {
            ep.apply(Action::Visit(j))?;
        }
        ep.apply(Action::Recharge(*h))?;
        ep.apply(Action::Recharge(*h))?;
    }
    if ep.state.status != Status::Success {
        return Err(Error::ContractViolation(format!(
            "oracle plan ended with status {:?}",
            ep.state.status
        )));
    }
    let route = ep.finish();
    Ok(OracleSolution { makespan_s: route.makespan_s, rounds, route })
}
