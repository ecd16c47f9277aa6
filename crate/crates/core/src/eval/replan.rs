//! Mid-mission replanning.
//!
//! The mission runs on the current plan until an event's trigger fires at
//! a round boundary (every UAV on the ground and serviced). There the
//! state is frozen as is, the event is applied, and the residual mission
//! is planned afresh from that state. Plans are spliced into one trace
//! that replays from the initial reset.

use serde::{Deserialize, Serialize};

use super::{MethodSpec, MethodKind};
use crate::env::trace::{Episode, EventPayload, RouteSolution};
use crate::env::{Action, MissionState, Status};
use crate::error::{Error, Result};
use crate::policy::rollout_from;
use crate::scenario::{Scenario, TaskPoint, TeamConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Once this many recharge services have completed.
    Recharge(usize),
    /// Once the latest agent clock reaches this time (s).
    MissionTime(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanPayload {
    /// New tasks; ids must continue the scenario's numbering.
    AddTasks(Vec<TaskPoint>),
    /// New fleet size. Added agents start at the depot with full batteries
    /// at the trigger time; surplus agents retire where they landed.
    SetTeam { num_uavs: usize, num_ugvs: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub trigger: Trigger,
    pub payload: ReplanPayload,
}

/// What happened to one event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub applied: bool,
    /// Environment step count when the trigger fired.
    pub step: Option<usize>,
    pub time_s: Option<f64>,
    pub error: Option<String>,
}

/// One planning call and the trace it was asked to execute.
#[derive(Clone, Debug)]
pub struct Segment {
    /// Index into the final trace where this segment starts.
    pub start_entry: usize,
    pub start_step: usize,
    pub plan: RouteSolution,
}

#[derive(Clone, Debug)]
pub struct ReplanOutput {
    pub route: RouteSolution,
    pub segments: Vec<Segment>,
    pub events: Vec<EventOutcome>,
    /// Final scenario, including added tasks.
    pub scenario: Scenario,
    pub final_team: TeamConfig,
}

impl ReplanOutput {
    /// Fraction of all tasks (original and added) visited.
    pub fn coverage(&self) -> f64 {
        let mut visited = vec![false; self.scenario.tasks.len()];
        for r in self.route.steps() {
            if let Action::Visit(n) = r.action {
                visited[n - 1] = true;
            }
        }
        visited.iter().filter(|&&v| v).count() as f64 / visited.len().max(1) as f64
    }
}

fn validate_events(events: &[ReplanEvent]) -> Result<()> {
    let (mut last_k, mut last_t) = (None, None);
    for (i, e) in events.iter().enumerate() {
        match e.trigger {
            Trigger::Recharge(k) => {
                if last_k.is_some_and(|p| k <= p) {
                    return Err(Error::Validation(format!("event {i}: recharge triggers must increase")));
                }
                last_k = Some(k);
            }
            Trigger::MissionTime(t) => {
                if !t.is_finite() || t < 0.0 || last_t.is_some_and(|p| t <= p) {
                    return Err(Error::Validation(format!("event {i}: time triggers must be finite and increase")));
                }
                last_t = Some(t);
            }
        }
    }
    Ok(())
}

fn fires(trigger: Trigger, state: &MissionState) -> bool {
    state.status == Status::Running
        && state.at_round_boundary()
        && match trigger {
            Trigger::Recharge(k) => state.services >= k,
            Trigger::MissionTime(t) => state.makespan() >= t,
        }
}

/// Applies the next event if its trigger holds now. Returns whether it fired.
fn fire_next(ep: &mut Episode, events: &[ReplanEvent], next: &mut usize, outcomes: &mut [EventOutcome]) -> bool {
    let Some(ev) = events.get(*next) else { return false };
    if !fires(ev.trigger, &ep.state) {
        return false;
    }
    let out = &mut outcomes[*next];
    out.step = Some(ep.state.step_count);
    out.time_s = Some(ep.state.makespan());
    let payload = match &ev.payload {
        ReplanPayload::AddTasks(points) => EventPayload::AddTasks(points.clone()),
        ReplanPayload::SetTeam { num_uavs, num_ugvs } => EventPayload::SetTeam {
            num_uavs: *num_uavs,
            num_ugvs: *num_ugvs,
            switch_time_s: ep.state.makespan(),
        },
    };
    match ep.apply_event(payload) {
        Ok(()) => out.applied = true,
        Err(e) => out.error = Some(e.to_string()),
    }
    *next += 1;
    true
}

fn plan_from(planner: &MethodSpec, state: &MissionState, seed: u64) -> Result<RouteSolution> {
    let params = planner.policy.as_deref().expect("validated");
    Ok(rollout_from(state.clone(), params, planner.decode(seed))?.into_best().route)
}

/// Runs `planner` on `initial`, applying `events` as their triggers fire.
/// Only policy planners can restart from a mid-mission state. Segment `k`
/// is decoded with seed `seed + k`.
pub fn dynamic_replan(
    initial: &Scenario,
    team: TeamConfig,
    planner: &MethodSpec,
    events: &[ReplanEvent],
    seed: u64,
) -> Result<ReplanOutput> {
    planner.validate()?;
    if !planner.kind.is_drl() {
        let why = if planner.kind == MethodKind::Oracle { "the oracle" } else { "bilevel planners" };
        return Err(Error::Unsupported(format!("{why} cannot restart from a mid-mission state")));
    }
    validate_events(events)?;
    let config = planner.kind.env_config();
    let mut ep = Episode::new(MissionState::reset_with(initial, team, config)?);
    let mut outcomes = vec![EventOutcome { applied: false, step: None, time_s: None, error: None }; events.len()];
    let mut next_event = 0;
    let mut segments = Vec::new();

    while ep.state.status == Status::Running {
        if fire_next(&mut ep, events, &mut next_event, &mut outcomes) {
            continue;
        }
        let plan = plan_from(planner, &ep.state, seed.wrapping_add(segments.len() as u64))?;
        let actions: Vec<Action> = plan.steps().map(|r| r.action).collect();
        segments.push(Segment { start_entry: ep.entries.len(), start_step: ep.state.step_count, plan });
        let mut interrupted = false;
        for a in actions {
            ep.apply(a)?;
            if fire_next(&mut ep, events, &mut next_event, &mut outcomes) {
                interrupted = true;
                break;
            }
        }
        if !interrupted && ep.state.status == Status::Running {
            return Err(Error::ContractViolation("plan ended while the mission was still running".into()));
        }
    }
    for out in &mut outcomes[next_event..] {
        out.error = Some("mission ended before the trigger fired".into());
    }
    let scenario = ep.state.scenario().clone();
    let final_team = ep.state.team;
    Ok(ReplanOutput { route: ep.finish(), segments, events: outcomes, scenario, final_team })
}
