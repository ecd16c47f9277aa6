//! Bilevel heuristic: UGV stops first, UAV sorties second.
//!
//! 1. A minimum set cover picks ground refuel stops so that every task is
//!    within half the UAV range of one ([`msc`]).
//! 2. The stops are ordered into a UGV tour from the depot ([`tsp`]).
//! 3. The tour is cut into legs; each leg's tasks are routed for the UAV
//!    fleet under battery and time-window constraints ([`model`],
//!    [`search`]).
//! 4. The per-leg sorties are executed through the mission environment,
//!    which resolves waiting and single-service queueing and yields a trace
//!    that replays like any other planner's.

pub mod model;
pub mod msc;
pub mod search;
pub mod tsp;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::MissionGraph;
use crate::env::trace::{Episode, RouteSolution};
use crate::env::{Action, AgentKind, EnvConfig, MissionState, Rendezvous, Status};
use crate::error::{Error, Result};
use crate::scenario::{Scenario, TeamConfig};

pub use model::{brute_force_evrptw, validate_evrptw, Constraint, EvrptwModel, EvrptwSolution, Violation};
pub use search::{solve_evrptw, Budget, Method, SearchRun};

/// Ordered refuel stops and the stop each task is served from. All ids are
/// mission nodes (depot = 0, task `k` = `k + 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefuelPlan {
    /// UGV stop order, depot first.
    pub stops: Vec<usize>,
    /// Assigned stop per task id.
    pub cover: Vec<usize>,
    /// Stops added only to keep consecutive stops within one UAV hop.
    pub relays: Vec<usize>,
}

/// One leg of the UGV tour with the tasks served at its destination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subproblem {
    pub index: usize,
    pub source_stop: usize,
    pub dest_stop: usize,
    /// Mission nodes of the tasks routed in this leg.
    pub tasks: Vec<usize>,
    /// UGV arrival at the destination along road-only time (s).
    pub t_r_s: f64,
    /// UGV arrival at the source (s).
    pub t_start_s: f64,
}

/// Selects, orders and, where needed, relays the refuel stops.
pub fn plan_refuel_stops(scenario: &Scenario, graph: &MissionGraph) -> Result<RefuelPlan> {
    let radius = scenario.fuel.coverage_radius_m(graph.team.v_a);
    let cover = msc::solve_msc(scenario, radius)?;
    let mut stops = tsp::solve_tsp_stops(&cover.stops, MissionGraph::DEPOT, |a, b| graph.road_dist(a, b));
    let assignment = msc::assign_nearest(scenario, &stops, radius)?;
    let cap = graph.capacity();
    let mut relays = Vec::new();
    let mut i = 1;
    while i < stops.len() {
        let (a, b) = (stops[i - 1], stops[i]);
        if graph.air_fuel(a, b) > cap + model::FUEL_EPS {
            let relay = graph
                .ground
                .iter()
                .copied()
                .filter(|&r| graph.air_fuel(a, r) <= cap && graph.air_fuel(r, b) <= cap)
                .min_by(|&x, &y| {
                    (graph.air_dist(a, x) + graph.air_dist(x, b)).total_cmp(&(graph.air_dist(a, y) + graph.air_dist(y, b)))
                })
                .ok_or_else(|| {
                    Error::Validation(format!("no ground point relays the hop between stops {a} and {b}"))
                })?;
            stops.insert(i, relay);
            relays.push(relay);
        }
        i += 1;
    }
    Ok(RefuelPlan { stops, cover: assignment, relays })
}

/// Cuts the stop tour into legs. Leg 0 loops at the depot; leg `k` runs
/// from stop `k - 1` to stop `k` and carries the tasks assigned to stop
/// `k`. Windows accumulate UGV road time along the tour.
pub fn split_subproblems(graph: &MissionGraph, plan: &RefuelPlan) -> Vec<Subproblem> {
    let mut out = Vec::with_capacity(plan.stops.len());
    let mut clock = 0.0;
    for (k, &dest) in plan.stops.iter().enumerate() {
        let source = if k == 0 { dest } else { plan.stops[k - 1] };
        let start = clock;
        clock += graph.road_time(source, dest);
        let tasks = plan
            .cover
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s == dest)
            .map(|(t, _)| MissionGraph::task_node(t))
            .filter(|_| plan.stops.iter().position(|&s| s == dest) == Some(k))
            .collect();
        out.push(Subproblem { index: k, source_stop: source, dest_stop: dest, tasks, t_r_s: clock, t_start_s: start });
    }
    out
}

/// Solver summary for one leg.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub subproblem: usize,
    pub source_stop: usize,
    pub dest_stop: usize,
    pub tasks: Vec<usize>,
    pub method: Method,
    pub seed: u64,
    pub budget: Budget,
    pub objective_s: f64,
    pub iterations: usize,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug)]
pub struct LegResult {
    pub subproblem: Subproblem,
    pub model: EvrptwModel,
    pub run: SearchRun,
}

#[derive(Clone, Debug)]
pub struct HeuristicSolution {
    pub plan: RefuelPlan,
    pub legs: Vec<LegResult>,
    pub route: RouteSolution,
    pub makespan_s: f64,
}

impl HeuristicSolution {
    pub fn reports(&self, method: Method, seed: u64, budget: Budget) -> Vec<SolverReport> {
        self.legs
            .iter()
            .map(|l| SolverReport {
                subproblem: l.subproblem.index,
                source_stop: l.subproblem.source_stop,
                dest_stop: l.subproblem.dest_stop,
                tasks: l.subproblem.tasks.iter().map(|&n| n - 1).collect(),
                method,
                seed,
                budget,
                objective_s: l.run.objective_s,
                iterations: l.run.iterations,
                violations: validate_evrptw(&l.model, &l.run.solution),
            })
            .collect()
    }

    /// Service events per UGV in time order.
    pub fn ugv_schedule(&self) -> Vec<Vec<Rendezvous>> {
        let n = self.route.rendezvous.iter().map(|r| r.ugv + 1).max().unwrap_or(0);
        let mut out = vec![Vec::new(); n];
        for r in &self.route.rendezvous {
            out[r.ugv].push(*r);
        }
        out
    }
}

/// Full bilevel pipeline. Leg `k` is searched with seed `seed + k`.
pub fn solve_bilevel(
    scenario: &Scenario,
    team: TeamConfig,
    method: Method,
    budget: Budget,
    seed: u64,
) -> Result<HeuristicSolution> {
    solve_bilevel_with(scenario, team, method, budget, seed, EnvConfig::default())
}

pub fn solve_bilevel_with(
    scenario: &Scenario,
    team: TeamConfig,
    method: Method,
    budget: Budget,
    seed: u64,
    config: EnvConfig,
) -> Result<HeuristicSolution> {
    let graph = Arc::new(MissionGraph::new(scenario, team)?);
    let plan = plan_refuel_stops(scenario, &graph)?;
    let mut legs = Vec::new();
    for sub in split_subproblems(&graph, &plan) {
        let model = EvrptwModel::for_leg(&graph, sub.source_stop, sub.dest_stop, &sub.tasks, sub.t_r_s, sub.t_start_s);
        let run = solve_evrptw(&model, method, budget, seed.wrapping_add(sub.index as u64))?;
        legs.push(LegResult { subproblem: sub, model, run });
    }
    let state = MissionState::from_graph(Arc::new(scenario.clone()), Arc::clone(&graph), config);
    let route = stitch(state, &legs)?;
    Ok(HeuristicSolution { makespan_s: route.makespan_s, plan, legs, route })
}

struct Sortie {
    visits: Vec<usize>,
    landing: usize,
}

/// Executes the legs' sorties through the environment, each UAV working
/// through its own queue and standing down once it is empty. Empty hops
/// that only follow the UGV are merged into one flight when a single
/// battery allows it and dropped when no work follows them. UGVs serve
/// their queues in landing order.
pub fn stitch(state: MissionState, legs: &[LegResult]) -> Result<RouteSolution> {
    let fleet = state.uavs.len();
    let graph = Arc::clone(state.graph_arc());
    let mut queues: Vec<VecDeque<Sortie>> = (0..fleet).map(|_| VecDeque::new()).collect();
    let mut at = vec![MissionGraph::DEPOT; fleet];
    let mut hops: Vec<Vec<usize>> = vec![Vec::new(); fleet];
    for leg in legs {
        let model = &leg.model;
        for (k, sorties) in leg.run.solution.sorties(model).into_iter().enumerate() {
            for s in sorties {
                let landing = leg.subproblem.dest_stop;
                if s.is_empty() {
                    hops[k].push(landing);
                    continue;
                }
                let pending = std::mem::take(&mut hops[k]);
                if let Some(&target) = pending.last() {
                    if target != at[k] {
                        if graph.air_fuel(at[k], target) <= graph.capacity() {
                            queues[k].push_back(Sortie { visits: Vec::new(), landing: target });
                        } else {
                            let mut here = at[k];
                            for h in pending {
                                if h != here {
                                    queues[k].push_back(Sortie { visits: Vec::new(), landing: h });
                                    here = h;
                                }
                            }
                        }
                        at[k] = target;
                    }
                }
                let visits = s.iter().map(|&v| model.nodes[v]).collect();
                queues[k].push_back(Sortie { visits, landing });
                at[k] = landing;
            }
        }
    }
    let mut ep = Episode::new(state);
    let guard = 16 * (ep.state.horizon + 1);
    while ep.state.status == Status::Running {
        if ep.entries.len() > guard {
            return Err(Error::ContractViolation("stitching did not terminate".into()));
        }
        let id = ep.state.active.expect("running state has an active agent");
        match id.kind {
            AgentKind::Uav => {
                let u = id.index;
                if let Some(sortie) = queues[u].pop_front() {
                    for v in sortie.visits {
                        ep.apply(Action::Visit(v))
                            .map_err(|e| Error::ContractViolation(format!("stitched visit rejected: {e}")))?;
                        if ep.state.status != Status::Running {
                            break;
                        }
                    }
                    if ep.state.status == Status::Running {
                        ep.apply(Action::Recharge(sortie.landing))
                            .map_err(|e| Error::ContractViolation(format!("stitched landing rejected: {e}")))?;
                    }
                } else {
                    let here = ep.state.uavs[u].node;
                    ep.apply(Action::Recharge(here))
                        .map_err(|e| Error::ContractViolation(format!("stand-down rejected: {e}")))?;
                }
            }
            AgentKind::Ugv => {
                let k = id.index;
                let node = ep.state.assignments[k]
                    .iter()
                    .filter_map(|&u| ep.state.uavs[u].landed_at)
                    .min_by(|a, b| a.time_s.total_cmp(&b.time_s))
                    .map(|l| l.node)
                    .expect("active UGV has a landed UAV");
                ep.apply(Action::Recharge(node))?;
            }
        }
    }
    Ok(ep.finish())
}

#[cfg(test)]
mod tests;
