//! Head-to-head evaluation of planners, exact oracles and mid-mission
//! replanning.
//!
//! Every route a method produces is replayed in the environment before it
//! is scored, so objectives never come from solver-reported numbers.

mod oracle;
mod replan;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bilevel::{solve_bilevel_with, Budget, Method};
use crate::env::trace::{replay, RouteSolution};
use crate::env::{AgentSelection, EnvConfig, Status, FAILURE_PENALTY_MIN};
use crate::error::{Error, Result};
use crate::policy::{rollout, DecodePolicy, PolicyParams};
use crate::scenario::{Scenario, TeamConfig};

pub use oracle::{brute_force_oracle, OracleSolution, ORACLE_MAX_RECHARGE_NODES, ORACLE_MAX_TASKS};
pub use replan::{dynamic_replan, EventOutcome, ReplanEvent, ReplanOutput, ReplanPayload, Segment, Trigger};

/// Sample pool sizes used at desk scale.
pub const DESK_SAMPLE_SIZES: [usize; 3] = [16, 64, 256];

/// Objectives within this relative distance of the best count as a tie.
pub const TIE_REL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Gls,
    Tabu,
    Anneal,
    DrlGreedy,
    DrlSample(usize),
    /// Policy decoded with per-step agent selection.
    DrlMfGreedy,
    DrlMfSample(usize),
    Oracle,
}

impl MethodKind {
    pub fn is_drl(self) -> bool {
        matches!(self, Self::DrlGreedy | Self::DrlSample(_) | Self::DrlMfGreedy | Self::DrlMfSample(_))
    }

    pub fn heuristic(self) -> Option<Method> {
        match self {
            Self::Gls => Some(Method::Gls),
            Self::Tabu => Some(Method::Tabu),
            Self::Anneal => Some(Method::Anneal),
            _ => None,
        }
    }

    pub fn env_config(self) -> EnvConfig {
        let selection = match self {
            Self::DrlMfGreedy | Self::DrlMfSample(_) => AgentSelection::PerStep,
            _ => AgentSelection::SortieWise,
        };
        EnvConfig { selection, ..EnvConfig::default() }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gls => f.write_str("gls"),
            Self::Tabu => f.write_str("tabu"),
            Self::Anneal => f.write_str("anneal"),
            Self::DrlGreedy => f.write_str("drl_greedy"),
            Self::DrlSample(n) => write!(f, "drl_sample{n}"),
            Self::DrlMfGreedy => f.write_str("drl_mf_greedy"),
            Self::DrlMfSample(n) => write!(f, "drl_mf_sample{n}"),
            Self::Oracle => f.write_str("oracle"),
        }
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    /// Accepts the display names, e.g. `gls`, `drl_sample64`, `drl_mf_greedy`.
    fn from_str(s: &str) -> Result<Self> {
        let count = |rest: &str| -> Result<usize> {
            let n: usize = rest
                .parse()
                .map_err(|_| Error::Validation(format!("bad sample count in method '{s}'")))?;
            if n == 0 {
                return Err(Error::Validation("sample count must be at least 1".into()));
            }
            Ok(n)
        };
        Ok(match s {
            "gls" => Self::Gls,
            "tabu" => Self::Tabu,
            "anneal" => Self::Anneal,
            "drl_greedy" => Self::DrlGreedy,
            "drl_mf_greedy" => Self::DrlMfGreedy,
            "oracle" => Self::Oracle,
            _ => {
                if let Some(rest) = s.strip_prefix("drl_mf_sample") {
                    Self::DrlMfSample(count(rest)?)
                } else if let Some(rest) = s.strip_prefix("drl_sample") {
                    Self::DrlSample(count(rest)?)
                } else {
                    return Err(Error::Validation(format!("unknown method '{s}'")));
                }
            }
        })
    }
}

/// A method to evaluate.
#[derive(Clone, Debug)]
pub struct MethodSpec {
    pub name: String,
    pub kind: MethodKind,
    /// Search budget for the heuristics.
    pub budget: Budget,
    /// Base seed; instance `i` runs with `seed + i`.
    pub seed: u64,
    pub policy: Option<Arc<PolicyParams>>,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self { name: kind.to_string(), kind, budget: Budget::default(), seed: 0, policy: None }
    }

    pub fn heuristic(method: Method, budget: Budget, seed: u64) -> Self {
        let kind = match method {
            Method::Gls => MethodKind::Gls,
            Method::Tabu => MethodKind::Tabu,
            Method::Anneal => MethodKind::Anneal,
        };
        Self { budget, seed, ..Self::new(kind) }
    }

    pub fn drl(kind: MethodKind, policy: Arc<PolicyParams>, seed: u64) -> Self {
        Self { seed, policy: Some(policy), ..Self::new(kind) }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let MethodKind::DrlSample(0) | MethodKind::DrlMfSample(0) = self.kind {
            return Err(Error::Validation("sample count must be at least 1".into()));
        }
        if self.kind.is_drl() && self.policy.is_none() {
            return Err(Error::Validation(format!("method '{}' needs policy weights", self.name)));
        }
        Ok(())
    }

    fn decode(&self, seed: u64) -> DecodePolicy {
        match self.kind {
            MethodKind::DrlSample(n) | MethodKind::DrlMfSample(n) => DecodePolicy::sample(n, seed),
            _ => DecodePolicy::greedy(),
        }
    }
}

/// Runs one method on one instance. `seed` overrides the method's own seed.
pub fn solve(spec: &MethodSpec, scenario: &Scenario, team: TeamConfig, seed: u64) -> Result<RouteSolution> {
    spec.validate()?;
    let config = spec.kind.env_config();
    if let Some(method) = spec.kind.heuristic() {
        return Ok(solve_bilevel_with(scenario, team, method, spec.budget, seed, config)?.route);
    }
    if spec.kind == MethodKind::Oracle {
        return Ok(brute_force_oracle(scenario, team)?.route);
    }
    let params = spec.policy.as_deref().expect("validated");
    Ok(rollout(scenario, team, params, spec.decode(seed), config)?.into_best().route)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Success,
    /// The mission failed in the environment; scored with the penalty.
    Failure,
    /// The method errored or produced a route that does not replay.
    Crashed(String),
}

/// One (method, instance) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub objective_min: f64,
    pub wall_s: f64,
    pub status: CellStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub kind: MethodKind,
    pub mean_min: f64,
    /// Sample standard deviation (zero for a single instance).
    pub std_min: f64,
    pub min_min: f64,
    pub gap_pct: f64,
    pub mean_time_s: f64,
    pub win_rate_pct: f64,
    pub failures: usize,
    pub crashes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub team: TeamConfig,
    pub instances: usize,
    pub methods: Vec<MethodSummary>,
    /// `cells[m][i]`: method `m` on instance `i`.
    pub cells: Vec<Vec<Cell>>,
}

impl EvalReport {
    /// Per-method, per-instance objectives (min).
    pub fn objectives(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(|row| row.iter().map(|c| c.objective_min).collect()).collect()
    }

    /// Zeroes every timing so reports of identical runs compare equal.
    pub fn strip_timing(&mut self) {
        for row in &mut self.cells {
            for c in row {
                c.wall_s = 0.0;
            }
        }
        for m in &mut self.methods {
            m.mean_time_s = 0.0;
        }
    }
}

/// Replays `route` and returns the scored objective (min).
pub fn score_route(scenario: &Scenario, team: TeamConfig, config: EnvConfig, route: &RouteSolution) -> Result<(f64, Status)> {
    let replayed = replay(scenario, team, config, &route.entries)?;
    if replayed.status == Status::Running {
        return Err(Error::ContractViolation("route ends before the mission does".into()));
    }
    Ok((replayed.return_s / 60.0, replayed.status))
}

fn run_cell(spec: &MethodSpec, scenario: &Scenario, team: TeamConfig, seed: u64) -> Cell {
    let start = Instant::now();
    let outcome = solve(spec, scenario, team, seed)
        .and_then(|route| score_route(scenario, team, spec.kind.env_config(), &route));
    let wall_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((objective_min, status)) => Cell {
            objective_min,
            wall_s,
            status: if status == Status::Success { CellStatus::Success } else { CellStatus::Failure },
        },
        Err(e) => Cell { objective_min: f64::NAN, wall_s, status: CellStatus::Crashed(e.to_string()) },
    }
}

/// Evaluates every method on every instance. Cells run in parallel; the
/// report is assembled in method and instance order.
///
/// A crashed cell scores the penalty on top of the worst objective any
/// other method reached on that instance, so it always ranks last.
pub fn evaluate_suite(methods: &[MethodSpec], instances: &[Scenario], team: TeamConfig) -> Result<EvalReport> {
    if methods.is_empty() || instances.is_empty() {
        return Err(Error::Validation("need at least one method and one instance".into()));
    }
    for m in methods {
        m.validate()?;
    }
    team.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..methods.len()).flat_map(|m| (0..instances.len()).map(move |i| (m, i))).collect();
    let flat: Vec<Cell> = jobs
        .par_iter()
        .map(|&(m, i)| run_cell(&methods[m], &instances[i], team, methods[m].seed.wrapping_add(i as u64)))
        .collect();
    let mut cells: Vec<Vec<Cell>> = flat.chunks(instances.len()).map(<[Cell]>::to_vec).collect();

    for i in 0..instances.len() {
        let worst = cells
            .iter()
            .map(|row| row[i].objective_min)
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        for row in &mut cells {
            if matches!(row[i].status, CellStatus::Crashed(_)) {
                row[i].objective_min = worst + FAILURE_PENALTY_MIN;
            }
        }
    }

    let objectives: Vec<Vec<f64>> = cells.iter().map(|r| r.iter().map(|c| c.objective_min).collect()).collect();
    let wins = win_rate(&objectives)?;
    let means: Vec<f64> = objectives.iter().map(|r| mean(r)).collect();
    let best = means.iter().copied().fold(f64::INFINITY, f64::min);
    let summaries = methods
        .iter()
        .zip(&cells)
        .enumerate()
        .map(|(m, (spec, row))| {
            let obj = &objectives[m];
            MethodSummary {
                name: spec.name.clone(),
                kind: spec.kind,
                mean_min: means[m],
                std_min: sample_std(obj),
                min_min: obj.iter().copied().fold(f64::INFINITY, f64::min),
                gap_pct: if best > 0.0 { (means[m] - best) / best * 100.0 } else { 0.0 },
                mean_time_s: mean(&row.iter().map(|c| c.wall_s).collect::<Vec<_>>()),
                win_rate_pct: wins[m],
                failures: row.iter().filter(|c| c.status == CellStatus::Failure).count(),
                crashes: row.iter().filter(|c| matches!(c.status, CellStatus::Crashed(_))).count(),
            }
        })
        .collect();
    Ok(EvalReport { team, instances: instances.len(), methods: summaries, cells })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Percentage of instances on which each method attains the lowest
/// objective. Every tied method is credited.
pub fn win_rate(objectives: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = objectives.first() else { return Ok(Vec::new()) };
    let n = first.len();
    if n == 0 || objectives.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("objective matrix must be complete and non-empty".into()));
    }
    if objectives.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective matrix".into()));
    }
    let mut wins = vec![0usize; objectives.len()];
    for i in 0..n {
        let best = objectives.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
        for (m, row) in objectives.iter().enumerate() {
            if row[i] - best <= TIE_REL_TOL * best.abs().max(1.0) {
                wins[m] += 1;
            }
        }
    }
    Ok(wins.into_iter().map(|w| w as f64 * 100.0 / n as f64).collect())
}

pub fn team_label(team: TeamConfig) -> String {
    format!("{}U{}G", team.num_uavs, team.num_ugvs)
}

/// Writes reports side by side: one row per method, one column group per
/// team configuration. Methods are matched by name.
pub fn write_table_csv<W: Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Validation("no reports to tabulate".into()));
    };
    let mut header = vec!["method".to_string()];
    for r in reports {
        let t = team_label(r.team);
        for col in ["obj_mean_min", "obj_std_min", "obj_best_min", "gap_pct", "time_s", "win_rate_pct"] {
            header.push(format!("{t}_{col}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for m in &first.methods {
        let mut row = vec![m.name.clone()];
        for r in reports {
            let s = r
                .methods
                .iter()
                .find(|s| s.name == m.name)
                .ok_or_else(|| Error::Validation(format!("method '{}' missing for {}", m.name, team_label(r.team))))?;
            for v in [s.mean_min, s.std_min, s.min_min, s.gap_pct, s.mean_time_s, s.win_rate_pct] {
                row.push(format!("{v:.3}"));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Per-instance objective matrices: one row per (team, instance), one
/// column per method.
pub fn write_matrix_csv<W: Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Validation("no reports to write".into()));
    };
    let names: Vec<&str> = first.methods.iter().map(|m| m.name.as_str()).collect();
    writeln!(w, "team,instance,{}", names.join(","))?;
    for r in reports {
        if r.methods.len() != names.len() || r.methods.iter().zip(&names).any(|(m, n)| m.name != *n) {
            return Err(Error::Validation("reports compare different methods".into()));
        }
        for i in 0..r.instances {
            let vals: Vec<String> = r.cells.iter().map(|row| format!("{}", row[i].objective_min)).collect();
            writeln!(w, "{},{i},{}", team_label(r.team), vals.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
