//! Step traces: recording, JSON-lines persistence and replay.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Action, AgentId, EnvConfig, MissionState, Rendezvous, StepInfo, Status};
use crate::error::{Error, Result};
use crate::scenario::{Point, Scenario, TaskPoint, TeamConfig};

/// Tolerance used when checking recorded numbers against a replay.
pub const REPLAY_TOL: f64 = 1e-6;

/// One executed step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub agent: AgentId,
    pub action: Action,
    pub reward_s: f64,
    pub fuel_kj: f64,
    pub clock_s: f64,
}

/// A mid-mission change applied between rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventPayload {
    AddTasks(Vec<TaskPoint>),
    SetTeam {
        num_uavs: usize,
        num_ugvs: usize,
        switch_time_s: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceEntry {
    Step(TraceRecord),
    Event { event: EventPayload },
}

/// Timed routes of every agent as produced by any planner.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteSolution {
    pub entries: Vec<TraceEntry>,
    pub rendezvous: Vec<Rendezvous>,
    pub status: Status,
    pub makespan_s: f64,
    /// Makespan plus the failure penalty when applicable; NaN while running.
    pub return_s: f64,
}

impl RouteSolution {
    pub fn steps(&self) -> impl Iterator<Item = &TraceRecord> {
        self.entries.iter().filter_map(|e| match e {
            TraceEntry::Step(r) => Some(r),
            TraceEntry::Event { .. } => None,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.steps().count()
    }

    pub fn is_success(&self) -> bool {
        self.status == Status::Success
    }

    pub fn return_min(&self) -> f64 {
        self.return_s / 60.0
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        write_jsonl(&self.entries, w)
    }
}

pub fn write_jsonl<W: Write>(entries: &[TraceEntry], mut w: W) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TraceEntry>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("trace line {}: {e}", i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// A state plus everything that happened to it.
#[derive(Clone, Debug)]
pub struct Episode {
    pub state: MissionState,
    pub entries: Vec<TraceEntry>,
    pub rendezvous: Vec<Rendezvous>,
}

impl Episode {
    pub fn new(state: MissionState) -> Self {
        Self { state, entries: Vec::new(), rendezvous: Vec::new() }
    }

    pub fn apply(&mut self, action: Action) -> Result<StepInfo> {
        let t = self.state.step_count;
        let info = self.state.apply(action)?;
        self.entries.push(TraceEntry::Step(TraceRecord {
            t,
            agent: info.agent,
            action: info.action,
            reward_s: info.reward_s,
            fuel_kj: info.fuel_kj,
            clock_s: info.clock_s,
        }));
        if let Some(r) = info.rendezvous {
            self.rendezvous.push(r);
        }
        Ok(info)
    }

    pub fn apply_event(&mut self, event: EventPayload) -> Result<()> {
        apply_event(&mut self.state, &event)?;
        self.entries.push(TraceEntry::Event { event });
        Ok(())
    }

    pub fn finish(self) -> RouteSolution {
        let return_s = self.state.compute_return().unwrap_or(f64::NAN);
        RouteSolution {
            makespan_s: self.state.makespan(),
            status: self.state.status,
            entries: self.entries,
            rendezvous: self.rendezvous,
            return_s,
        }
    }
}

fn apply_event(state: &mut MissionState, event: &EventPayload) -> Result<()> {
    match event {
        EventPayload::AddTasks(points) => {
            let first = state.visited.len();
            for (k, p) in points.iter().enumerate() {
                if p.id != first + k {
                    return Err(Error::Validation(format!(
                        "added task id {} is not fresh (expected {})",
                        p.id,
                        first + k
                    )));
                }
            }
            let pts: Vec<(Point, _)> = points.iter().map(|p| (p.pos(), p.kind)).collect();
            state.add_tasks(&pts)?;
        }
        EventPayload::SetTeam { num_uavs, num_ugvs, switch_time_s } => {
            state.set_team(*num_uavs, *num_ugvs, *switch_time_s)?;
        }
    }
    Ok(())
}

/// Re-executes a trace from a fresh reset, checking that every step was
/// taken by the active agent, was unmasked, and reproduces the recorded
/// reward, fuel and clock.
pub fn replay(
    scenario: &Scenario,
    team: TeamConfig,
    config: EnvConfig,
    entries: &[TraceEntry],
) -> Result<RouteSolution> {
    Ok(replay_episode(scenario, team, config, entries)?.finish())
}

/// Like [`replay`], but keeps the final state.
pub fn replay_episode(
    scenario: &Scenario,
    team: TeamConfig,
    config: EnvConfig,
    entries: &[TraceEntry],
) -> Result<Episode> {
    let mut ep = Episode::new(MissionState::reset_with(scenario, team, config)?);
    for (i, entry) in entries.iter().enumerate() {
        match entry {
            TraceEntry::Step(rec) => {
                let active = ep.state.active;
                if active != Some(rec.agent) {
                    return Err(Error::ContractViolation(format!(
                        "entry {i}: trace says {} acts but the environment selected {}",
                        rec.agent,
                        active.map_or_else(|| "nobody".to_string(), |a| a.to_string())
                    )));
                }
                let info = ep
                    .apply(rec.action)
                    .map_err(|e| Error::ContractViolation(format!("entry {i}: {e}")))?;
                let close = |a: f64, b: f64| (a - b).abs() <= REPLAY_TOL * a.abs().max(1.0);
                if !close(info.reward_s, rec.reward_s)
                    || !close(info.fuel_kj, rec.fuel_kj)
                    || !close(info.clock_s, rec.clock_s)
                {
                    return Err(Error::ContractViolation(format!(
                        "entry {i}: replay gives reward {} fuel {} clock {}, trace has {} {} {}",
                        info.reward_s, info.fuel_kj, info.clock_s, rec.reward_s, rec.fuel_kj, rec.clock_s
                    )));
                }
            }
            TraceEntry::Event { event } => ep
                .apply_event(event.clone())
                .map_err(|e| Error::ContractViolation(format!("entry {i}: {e}")))?,
        }
    }
    Ok(ep)
}
