//! Deterministic mission environment: masked actions, rendezvous
//! synchronisation, sortie-wise agent switching and the makespan return.

mod graph;
pub mod trace;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use graph::{MissionGraph, MissionNode, NodeKind};

use crate::error::{Error, Result};
use crate::scenario::{Point, Scenario, TaskKind, TeamConfig};

/// Slack allowed when comparing fuel levels (kJ).
pub const FUEL_EPS: f64 = 1e-9;
/// Return penalty for a failed mission, in minutes.
pub const FAILURE_PENALTY_MIN: f64 = 800.0;
pub const FAILURE_PENALTY_S: f64 = FAILURE_PENALTY_MIN * 60.0;
/// Default step budget per task point.
pub const DEFAULT_HORIZON_FACTOR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Uav,
    Ugv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId {
    pub kind: AgentKind,
    pub index: usize,
}

impl AgentId {
    pub const fn uav(index: usize) -> Self {
        Self { kind: AgentKind::Uav, index }
    }

    pub const fn ugv(index: usize) -> Self {
        Self { kind: AgentKind::Ugv, index }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AgentKind::Uav => write!(f, "uav{}", self.index),
            AgentKind::Ugv => write!(f, "ugv{}", self.index),
        }
    }
}

impl FromStr for AgentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = if let Some(r) = s.strip_prefix("uav") {
            (AgentKind::Uav, r)
        } else if let Some(r) = s.strip_prefix("ugv") {
            (AgentKind::Ugv, r)
        } else {
            return Err(Error::Format(format!("bad agent id '{s}'")));
        };
        let index = rest.parse().map_err(|_| Error::Format(format!("bad agent id '{s}'")))?;
        Ok(Self { kind, index })
    }
}

impl Serialize for AgentId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An action of the active agent, addressed by mission node index
/// (node 0 is the depot, node `k + 1` is task `k`).
///
/// For a UGV, `Recharge(g)` drives to `g` and services the UAV waiting there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Visit(usize),
    Recharge(usize),
}

impl Action {
    pub fn node(self) -> usize {
        match self {
            Action::Visit(n) | Action::Recharge(n) => n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landing {
    pub node: usize,
    pub time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub node: usize,
    pub position: Point,
    /// Battery level. UGVs carry the nominal capacity for bookkeeping.
    pub fuel_kj: f64,
    pub clock_s: f64,
    /// Set while a UAV waits on the ground for service.
    pub landed_at: Option<Landing>,
    /// End of the last recharge service (UGV only).
    pub busy_until_s: f64,
    pub retired: bool,
    /// Task visits in the UAV's current sortie.
    pub sortie_visits: usize,
    /// The UAV has finished its sortie for the current round.
    pub sortie_closed: bool,
}

impl AgentState {
    fn new(id: AgentId, node: usize, position: Point, fuel_kj: f64, clock_s: f64) -> Self {
        Self {
            id,
            node,
            position,
            fuel_kj,
            clock_s,
            landed_at: None,
            busy_until_s: clock_s,
            retired: false,
            sortie_visits: 0,
            sortie_closed: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    UavSorties,
    UgvSorties,
}

/// How the next active agent is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentSelection {
    /// Each UAV flies a whole sortie (smallest clock first), then the UGVs
    /// service the landed UAVs.
    #[default]
    SortieWise,
    /// Agents take turns by decoding step index (`t % |agents|`), skipping
    /// agents with nothing to do.
    PerStep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The active UAV had no feasible action.
    MaskExhausted,
    /// The step budget ran out.
    Horizon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Success,
    Failure(FailureKind),
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }
}

/// One recharge service of a UAV by a UGV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rendezvous {
    pub uav: usize,
    pub ugv: usize,
    pub node: usize,
    pub landing_s: f64,
    pub arrival_s: f64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub selection: AgentSelection,
    pub horizon_factor: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            selection: AgentSelection::SortieWise,
            horizon_factor: DEFAULT_HORIZON_FACTOR,
        }
    }
}

/// Feasibility of every action for the active agent, indexed by node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask {
    pub visit: Vec<bool>,
    pub recharge: Vec<bool>,
}

impl ActionMask {
    fn empty(n: usize) -> Self {
        Self { visit: vec![false; n], recharge: vec![false; n] }
    }

    pub fn allows(&self, action: Action) -> bool {
        match action {
            Action::Visit(n) => self.visit.get(n).copied().unwrap_or(false),
            Action::Recharge(n) => self.recharge.get(n).copied().unwrap_or(false),
        }
    }

    pub fn any(&self) -> bool {
        self.visit.iter().chain(&self.recharge).any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.visit.iter().chain(&self.recharge).filter(|&&b| b).count()
    }

    /// Collapses the mask onto nodes: a node is selectable if it can be
    /// visited or recharged at.
    pub fn node_mask(&self) -> Vec<bool> {
        self.visit.iter().zip(&self.recharge).map(|(&v, &r)| v || r).collect()
    }

    /// The action meant by pointing at `node`: visiting wins over recharging.
    pub fn action_for_node(&self, node: usize) -> Option<Action> {
        if self.visit.get(node).copied().unwrap_or(false) {
            Some(Action::Visit(node))
        } else if self.recharge.get(node).copied().unwrap_or(false) {
            Some(Action::Recharge(node))
        } else {
            None
        }
    }

    pub fn actions(&self) -> Vec<Action> {
        let mut out = Vec::new();
        for (n, &v) in self.visit.iter().enumerate() {
            if v {
                out.push(Action::Visit(n));
            }
        }
        for (n, &r) in self.recharge.iter().enumerate() {
            if r {
                out.push(Action::Recharge(n));
            }
        }
        out
    }
}

/// Everything a single transition produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub agent: AgentId,
    pub action: Action,
    pub reward_s: f64,
    pub fuel_kj: f64,
    pub clock_s: f64,
    pub rendezvous: Option<Rendezvous>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub reward_s: f64,
    pub next_state: MissionState,
    pub terminal: bool,
    pub info: StepInfo,
}

/// Full environment state. Cheap to clone apart from the agent vectors.
#[derive(Clone, Debug)]
pub struct MissionState {
    scenario: Arc<Scenario>,
    graph: Arc<MissionGraph>,
    pub team: TeamConfig,
    pub uavs: Vec<AgentState>,
    pub ugvs: Vec<AgentState>,
    /// Visitation flag per task id.
    pub visited: Vec<bool>,
    pub phase: Phase,
    pub active: Option<AgentId>,
    /// UAV indices queued on each UGV, in landing order.
    pub assignments: Vec<Vec<usize>>,
    pub status: Status,
    pub step_count: usize,
    pub horizon: usize,
    pub config: EnvConfig,
    pub services: usize,
}

impl PartialEq for MissionState {
    fn eq(&self, other: &Self) -> bool {
        *self.scenario == *other.scenario
            && self.team == other.team
            && self.uavs == other.uavs
            && self.ugvs == other.ugvs
            && self.visited == other.visited
            && self.phase == other.phase
            && self.active == other.active
            && self.assignments == other.assignments
            && self.status == other.status
            && self.step_count == other.step_count
            && self.horizon == other.horizon
            && self.config == other.config
            && self.services == other.services
    }
}

impl MissionState {
    /// Places every agent at the depot with full batteries and picks the
    /// first active agent.
    pub fn reset(scenario: &Scenario, team: TeamConfig) -> Result<Self> {
        Self::reset_with(scenario, team, EnvConfig::default())
    }

    pub fn reset_with(scenario: &Scenario, team: TeamConfig, config: EnvConfig) -> Result<Self> {
        let graph = MissionGraph::new(scenario, team)?;
        Ok(Self::from_graph(Arc::new(scenario.clone()), Arc::new(graph), config))
    }

    pub fn from_graph(scenario: Arc<Scenario>, graph: Arc<MissionGraph>, config: EnvConfig) -> Self {
        let team = graph.team;
        let depot = graph.nodes[MissionGraph::DEPOT].pos;
        let cap = graph.capacity();
        let uavs = (0..team.num_uavs)
            .map(|i| AgentState::new(AgentId::uav(i), MissionGraph::DEPOT, depot, cap, 0.0))
            .collect();
        let ugvs = (0..team.num_ugvs)
            .map(|i| AgentState::new(AgentId::ugv(i), MissionGraph::DEPOT, depot, cap, 0.0))
            .collect();
        let n_tasks = graph.num_tasks();
        let mut state = Self {
            scenario,
            graph,
            team,
            uavs,
            ugvs,
            visited: vec![false; n_tasks],
            phase: Phase::UavSorties,
            active: None,
            assignments: vec![Vec::new(); team.num_ugvs],
            status: Status::Running,
            step_count: 0,
            horizon: config.horizon_factor * n_tasks.max(1),
            config,
            services: 0,
        };
        state.advance();
        state
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn scenario_arc(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn graph(&self) -> &MissionGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<MissionGraph> {
        &self.graph
    }

    pub fn agent(&self, id: AgentId) -> &AgentState {
        match id.kind {
            AgentKind::Uav => &self.uavs[id.index],
            AgentKind::Ugv => &self.ugvs[id.index],
        }
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentState> {
        self.uavs.iter().chain(self.ugvs.iter())
    }

    pub fn all_visited(&self) -> bool {
        self.visited.iter().all(|&v| v)
    }

    pub fn visited_count(&self) -> usize {
        self.visited.iter().filter(|&&v| v).count()
    }

    /// Visitation flag per mission node; the depot counts as visited.
    pub fn node_visited(&self, node: usize) -> bool {
        MissionGraph::node_task(node).is_none_or(|t| self.visited[t])
    }

    fn active_uav_count(&self) -> usize {
        self.uavs.iter().filter(|u| !u.retired).count()
    }

    pub fn is_terminal(&self) -> Status {
        self.status
    }

    /// Mask for the active agent (all false when terminal).
    pub fn feasible_actions(&self) -> ActionMask {
        match self.active {
            Some(AgentId { kind: AgentKind::Uav, index }) => self.uav_mask(index),
            Some(AgentId { kind: AgentKind::Ugv, index }) => self.ugv_mask(index),
            None => ActionMask::empty(self.graph.len()),
        }
    }

    /// UAV masking: unvisited, reachable on the current battery, and leaving
    /// enough energy to reach some ground point afterwards. Recharging is
    /// open at any reachable ground point; landing in place without having
    /// flown (a stand-down) is only offered to multi-UAV teams.
    pub fn uav_mask(&self, index: usize) -> ActionMask {
        let g = &*self.graph;
        let uav = &self.uavs[index];
        let mut mask = ActionMask::empty(g.len());
        if uav.retired || uav.landed_at.is_some() {
            return mask;
        }
        let here = uav.node;
        let fuel = uav.fuel_kj;
        for (t, &done) in self.visited.iter().enumerate() {
            if done {
                continue;
            }
            let j = MissionGraph::task_node(t);
            let remaining = fuel - g.air_fuel(here, j);
            if remaining >= -FUEL_EPS && remaining - g.fuel_to_ground(j) >= -FUEL_EPS {
                mask.visit[j] = true;
            }
        }
        let stand_down_ok = self.config.selection == AgentSelection::SortieWise
            && self.active_uav_count() > 1
            && uav.sortie_visits == 0;
        for &gn in &g.ground {
            if gn == here && uav.sortie_visits == 0 {
                mask.recharge[gn] = stand_down_ok;
                continue;
            }
            if fuel - g.air_fuel(here, gn) >= -FUEL_EPS {
                mask.recharge[gn] = true;
            }
        }
        mask
    }

    /// UGV masking: only nodes where its assigned UAVs wait for service.
    pub fn ugv_mask(&self, index: usize) -> ActionMask {
        let mut mask = ActionMask::empty(self.graph.len());
        for &u in &self.assignments[index] {
            if let Some(l) = self.uavs[u].landed_at {
                mask.recharge[l.node] = true;
            }
        }
        mask
    }

    /// Greedy assignment of every landed, unserviced UAV (in landing-time
    /// order) to the UGV whose current node is road-nearest its landing node.
    /// Ties go to the lower UGV id.
    pub fn assign_uavs_to_ugvs(&self) -> Vec<Vec<usize>> {
        let mut landed: Vec<(f64, usize)> = self
            .uavs
            .iter()
            .enumerate()
            .filter_map(|(i, u)| u.landed_at.map(|l| (l.time_s, i)))
            .collect();
        landed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = vec![Vec::new(); self.ugvs.len()];
        for (_, u) in landed {
            if let Some(k) = self.nearest_ugv(self.uavs[u].landed_at.expect("landed").node) {
                out[k].push(u);
            }
        }
        out
    }

    fn nearest_ugv(&self, node: usize) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (k, ugv) in self.ugvs.iter().enumerate() {
            if ugv.retired {
                continue;
            }
            let d = self.graph.road_dist(ugv.node, node);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
        best.map(|(_, k)| k)
    }

    /// Applies `action` to a copy of the state.
    pub fn step(&self, action: Action) -> Result<StepOutcome> {
        let mut next = self.clone();
        let info = next.apply(action)?;
        Ok(StepOutcome {
            reward_s: info.reward_s,
            terminal: next.status.is_terminal(),
            next_state: next,
            info,
        })
    }

    /// Applies `action` in place.
    pub fn apply(&mut self, action: Action) -> Result<StepInfo> {
        let agent = self
            .active
            .ok_or_else(|| Error::ContractViolation("step on a terminal state".into()))?;
        if !self.feasible_actions().allows(action) {
            return Err(Error::ContractViolation(format!("{agent} cannot take masked action {action:?}")));
        }
        let info = match agent.kind {
            AgentKind::Uav => self.apply_uav(agent.index, action),
            AgentKind::Ugv => self.apply_ugv(agent.index, action.node()),
        };
        self.step_count += 1;
        self.advance();
        if self.status == Status::Running && self.step_count >= self.horizon {
            self.status = Status::Failure(FailureKind::Horizon);
            self.active = None;
        }
        Ok(info)
    }

    fn apply_uav(&mut self, index: usize, action: Action) -> StepInfo {
        let g = Arc::clone(&self.graph);
        let uav = &mut self.uavs[index];
        let from = uav.node;
        let to = action.node();
        let stand_down = matches!(action, Action::Recharge(n) if n == from && uav.sortie_visits == 0);
        let dt = g.air_time(from, to);
        uav.fuel_kj -= g.air_fuel(from, to);
        uav.clock_s += dt;
        uav.node = to;
        uav.position = g.nodes[to].pos;
        match action {
            Action::Visit(n) => {
                let t = MissionGraph::node_task(n).expect("visit targets a task");
                self.visited[t] = true;
                uav.sortie_visits += 1;
            }
            Action::Recharge(n) => {
                uav.sortie_visits = 0;
                uav.sortie_closed = true;
                if !stand_down {
                    uav.landed_at = Some(Landing { node: n, time_s: uav.clock_s });
                }
            }
        }
        let (fuel_kj, clock_s) = (uav.fuel_kj, uav.clock_s);
        if !stand_down && matches!(action, Action::Recharge(_)) && self.config.selection == AgentSelection::PerStep {
            if let Some(k) = self.nearest_ugv(to) {
                self.assignments[k].push(index);
            }
        }
        StepInfo {
            agent: AgentId::uav(index),
            action,
            reward_s: dt,
            fuel_kj,
            clock_s,
            rendezvous: None,
        }
    }

    fn apply_ugv(&mut self, index: usize, node: usize) -> StepInfo {
        let g = Arc::clone(&self.graph);
        let queue = &self.assignments[index];
        let (pos, &u) = queue
            .iter()
            .enumerate()
            .filter(|(_, &u)| self.uavs[u].landed_at.is_some_and(|l| l.node == node))
            .min_by(|a, b| {
                let ta = self.uavs[*a.1].landed_at.expect("landed").time_s;
                let tb = self.uavs[*b.1].landed_at.expect("landed").time_s;
                ta.total_cmp(&tb).then(a.0.cmp(&b.0))
            })
            .expect("mask guarantees a waiting UAV");
        self.assignments[index].remove(pos);
        let landing = self.uavs[u].landed_at.take().expect("landed");
        let ugv = &mut self.ugvs[index];
        let travel = g.road_time(ugv.node, node);
        let arrival = ugv.clock_s + travel;
        let start = landing.time_s.max(arrival).max(ugv.busy_until_s);
        let end = start + self.team.recharge_time_s;
        ugv.clock_s = end;
        ugv.busy_until_s = end;
        ugv.node = node;
        ugv.position = g.nodes[node].pos;
        let (fuel_kj, clock_s) = (ugv.fuel_kj, ugv.clock_s);
        let uav = &mut self.uavs[u];
        uav.clock_s = end;
        uav.fuel_kj = g.capacity();
        self.services += 1;
        StepInfo {
            agent: AgentId::ugv(index),
            action: Action::Recharge(node),
            reward_s: travel + self.team.recharge_time_s,
            fuel_kj,
            clock_s,
            rendezvous: Some(Rendezvous {
                uav: u,
                ugv: index,
                node,
                landing_s: landing.time_s,
                arrival_s: arrival,
                start_s: start,
                end_s: end,
            }),
        }
    }

    fn has_pending(&self) -> bool {
        self.uavs.iter().any(|u| u.landed_at.is_some())
    }

    fn start_round(&mut self) {
        for u in self.uavs.iter_mut().filter(|u| !u.retired) {
            u.sortie_closed = false;
            u.sortie_visits = 0;
        }
        self.phase = Phase::UavSorties;
    }

    fn fail(&mut self, kind: FailureKind) {
        self.status = Status::Failure(kind);
        self.active = None;
    }

    /// Picks the next active agent, flipping phases as sorties complete.
    fn advance(&mut self) {
        if self.status.is_terminal() {
            self.active = None;
            return;
        }
        match self.config.selection {
            AgentSelection::SortieWise => self.advance_sortie_wise(),
            AgentSelection::PerStep => self.advance_per_step(),
        }
    }

    fn advance_sortie_wise(&mut self) {
        // Bounded: at most one phase flip to UGVs and one new round.
        for _ in 0..4 {
            match self.phase {
                Phase::UavSorties => {
                    if let Some(AgentId { kind: AgentKind::Uav, index }) = self.active {
                        if !self.uavs[index].sortie_closed {
                            return self.check_uav_mask(index);
                        }
                    }
                    if self.all_visited() {
                        for u in self.uavs.iter_mut().filter(|u| u.sortie_visits == 0) {
                            u.sortie_closed = true;
                        }
                    }
                    let next = self
                        .uavs
                        .iter()
                        .enumerate()
                        .filter(|(_, u)| !u.retired && !u.sortie_closed)
                        .min_by(|a, b| a.1.clock_s.total_cmp(&b.1.clock_s).then(a.0.cmp(&b.0)))
                        .map(|(i, _)| i);
                    match next {
                        Some(i) => {
                            self.active = Some(AgentId::uav(i));
                            return self.check_uav_mask(i);
                        }
                        None => {
                            self.phase = Phase::UgvSorties;
                            self.assignments = self.assign_uavs_to_ugvs();
                            self.active = None;
                        }
                    }
                }
                Phase::UgvSorties => {
                    if let Some(AgentId { kind: AgentKind::Ugv, index }) = self.active {
                        if !self.assignments[index].is_empty() {
                            return;
                        }
                    }
                    let next = self
                        .ugvs
                        .iter()
                        .enumerate()
                        .filter(|(i, u)| !u.retired && !self.assignments[*i].is_empty())
                        .min_by(|a, b| a.1.clock_s.total_cmp(&b.1.clock_s).then(a.0.cmp(&b.0)))
                        .map(|(i, _)| i);
                    match next {
                        Some(i) => {
                            self.active = Some(AgentId::ugv(i));
                            return;
                        }
                        None => {
                            self.active = None;
                            if self.all_visited() && !self.has_pending() {
                                self.status = Status::Success;
                                return;
                            }
                            self.start_round();
                        }
                    }
                }
            }
        }
        unreachable!("sortie-wise selection did not settle");
    }

    fn advance_per_step(&mut self) {
        let airborne = self.uavs.iter().any(|u| !u.retired && u.sortie_visits > 0);
        if self.all_visited() && !self.has_pending() && !airborne {
            self.status = Status::Success;
            self.active = None;
            return;
        }
        let order: Vec<AgentId> = (0..self.uavs.len())
            .map(AgentId::uav)
            .chain((0..self.ugvs.len()).map(AgentId::ugv))
            .collect();
        let start = self.step_count % order.len();
        let all_visited = self.all_visited();
        for k in 0..order.len() {
            let id = order[(start + k) % order.len()];
            let can_act = match id.kind {
                AgentKind::Uav => {
                    let u = &self.uavs[id.index];
                    !u.retired && u.landed_at.is_none() && (!all_visited || u.sortie_visits > 0)
                }
                AgentKind::Ugv => !self.ugvs[id.index].retired && !self.assignments[id.index].is_empty(),
            };
            if can_act {
                self.active = Some(id);
                if id.kind == AgentKind::Uav {
                    self.check_uav_mask(id.index);
                }
                return;
            }
        }
        self.fail(FailureKind::MaskExhausted);
    }

    fn check_uav_mask(&mut self, index: usize) {
        if !self.uav_mask(index).any() {
            self.fail(FailureKind::MaskExhausted);
        }
    }

    /// Worst agent clock, plus the failure penalty when the mission failed.
    pub fn compute_return(&self) -> Result<f64> {
        if self.status == Status::Running {
            return Err(Error::ContractViolation("return requested before termination".into()));
        }
        let makespan = self.makespan();
        Ok(match self.status {
            Status::Failure(_) => makespan + FAILURE_PENALTY_S,
            _ => makespan,
        })
    }

    /// Largest agent clock so far.
    pub fn makespan(&self) -> f64 {
        self.agents().map(|a| a.clock_s).fold(0.0, f64::max)
    }

    /// True between rounds: no UAV is mid-sortie or waiting for service.
    pub fn at_round_boundary(&self) -> bool {
        match self.config.selection {
            AgentSelection::SortieWise => {
                self.phase == Phase::UavSorties
                    && !self.has_pending()
                    && self.uavs.iter().all(|u| u.retired || (!u.sortie_closed && u.sortie_visits == 0))
            }
            AgentSelection::PerStep => {
                !self.has_pending() && self.uavs.iter().all(|u| u.sortie_visits == 0)
            }
        }
    }

    /// Adds task points mid-mission. Only valid at a round boundary.
    pub fn add_tasks(&mut self, points: &[(Point, TaskKind)]) -> Result<Vec<usize>> {
        if !self.at_round_boundary() {
            return Err(Error::ContractViolation("tasks can only be added between rounds".into()));
        }
        let mut scenario = (*self.scenario).clone();
        let ids = scenario.add_tasks(points);
        scenario.validate()?;
        let graph = MissionGraph::new(&scenario, self.team)?;
        self.scenario = Arc::new(scenario);
        self.graph = Arc::new(graph);
        self.visited.resize(self.graph.num_tasks(), false);
        self.horizon = self.config.horizon_factor * self.graph.num_tasks().max(1);
        self.reactivate();
        Ok(ids)
    }

    /// Changes team size mid-mission. Surplus agents (highest ids) retire
    /// where they stand; new agents spawn at the depot at `switch_time_s`
    /// with full batteries.
    pub fn set_team(&mut self, num_uavs: usize, num_ugvs: usize, switch_time_s: f64) -> Result<()> {
        if !self.at_round_boundary() {
            return Err(Error::ContractViolation("team can only change between rounds".into()));
        }
        if num_uavs == 0 || num_ugvs == 0 {
            return Err(Error::Validation("team needs at least one UAV and one UGV".into()));
        }
        let depot = self.graph.nodes[MissionGraph::DEPOT].pos;
        let cap = self.graph.capacity();
        Self::resize_fleet(&mut self.uavs, num_uavs, AgentId::uav, depot, cap, switch_time_s);
        Self::resize_fleet(&mut self.ugvs, num_ugvs, AgentId::ugv, depot, cap, switch_time_s);
        self.assignments.resize(self.ugvs.len(), Vec::new());
        self.team.num_uavs = num_uavs;
        self.team.num_ugvs = num_ugvs;
        self.reactivate();
        Ok(())
    }

    fn resize_fleet(
        fleet: &mut Vec<AgentState>,
        wanted: usize,
        make_id: fn(usize) -> AgentId,
        depot: Point,
        cap: f64,
        at: f64,
    ) {
        let mut active = 0;
        for a in fleet.iter_mut() {
            if !a.retired {
                active += 1;
                if active > wanted {
                    a.retired = true;
                }
            }
        }
        while active < wanted {
            // Reuse retired slots before growing the fleet.
            if let Some(a) = fleet.iter_mut().find(|a| a.retired) {
                let id = a.id;
                *a = AgentState::new(id, MissionGraph::DEPOT, depot, cap, at.max(a.clock_s));
            } else {
                let id = make_id(fleet.len());
                fleet.push(AgentState::new(id, MissionGraph::DEPOT, depot, cap, at));
            }
            active += 1;
        }
    }

    fn reactivate(&mut self) {
        if self.status == Status::Success && !self.all_visited() {
            self.status = Status::Running;
        }
        self.active = None;
        if self.config.selection == AgentSelection::SortieWise {
            self.start_round();
        }
        self.advance();
    }
}
