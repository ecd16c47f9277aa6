//! Episodes driven by the policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{Session, StepDist};
use super::{PolicyConfig, PolicyParams};
use crate::autodiff::Tensor;
use crate::env::trace::{Episode, RouteSolution};
use crate::env::{Action, EnvConfig, MissionState, Status};
use crate::error::{Error, Result};
use crate::scenario::{generate_scenario, Distribution2D, Scenario, TeamConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy,
    /// Best of `N` sampled trajectories.
    Sample(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodePolicy {
    pub strategy: DecodeStrategy,
    pub seed: u64,
}

impl DecodePolicy {
    pub const fn greedy() -> Self {
        Self { strategy: DecodeStrategy::Greedy, seed: 0 }
    }

    pub const fn sample(n: usize, seed: u64) -> Self {
        Self { strategy: DecodeStrategy::Sample(n), seed }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub route: RouteSolution,
    /// Sum of log-probabilities of the decoded actions.
    pub log_prob: f64,
}

impl Trajectory {
    pub fn return_s(&self) -> f64 {
        self.route.return_s
    }
}

#[derive(Clone, Debug)]
pub struct RolloutResult {
    pub trajectories: Vec<Trajectory>,
    /// Index of the lowest return (first on ties).
    pub best: usize,
}

impl RolloutResult {
    pub fn best(&self) -> &Trajectory {
        &self.trajectories[self.best]
    }

    pub fn into_best(mut self) -> Trajectory {
        self.trajectories.swap_remove(self.best)
    }
}

pub(crate) enum Chooser<'a> {
    Greedy,
    Sample(&'a mut ChaCha8Rng),
    Forced(&'a [Action]),
}

/// Runs one episode from `state`. With `grad`, the gradient of the summed
/// log-probabilities is returned alongside.
pub(crate) fn run_episode(
    params: &PolicyParams,
    state: MissionState,
    mut chooser: Chooser<'_>,
    grad: bool,
) -> Result<(Trajectory, Option<Vec<Tensor>>)> {
    let mut session = Session::new(params, &state)?;
    let mut ep = Episode::new(state);
    let mut log_prob = 0.0;
    let mut forced_at = 0;
    while ep.state.status == Status::Running {
        let Some(dist) = session.step(&ep.state)? else {
            // The environment fails a UAV with an empty mask itself; this
            // only guards against a state that slipped through.
            return Err(Error::ContractViolation("active agent has no feasible action".into()));
        };
        let (node, action) = match &mut chooser {
            Chooser::Greedy => pick(&ep.state, &dist, dist.argmax()),
            Chooser::Sample(rng) => {
                let u: f64 = rng.random();
                pick(&ep.state, &dist, dist.sample(u))
            }
            Chooser::Forced(actions) => {
                let a = *actions
                    .get(forced_at)
                    .ok_or_else(|| Error::ContractViolation("forced trajectory ended early".into()))?;
                forced_at += 1;
                let expressed = pick(&ep.state, &dist, a.node()).1;
                if expressed != a {
                    return Err(Error::ContractViolation(format!(
                        "action {a:?} is not what pointing at node {} means here",
                        a.node()
                    )));
                }
                (a.node(), a)
            }
        };
        log_prob += session.commit(&dist, node);
        ep.apply(action)?;
    }
    let grads = grad.then(|| session.log_prob_grad());
    Ok((Trajectory { route: ep.finish(), log_prob }, grads))
}

fn pick(state: &MissionState, dist: &StepDist, node: usize) -> (usize, Action) {
    let action = state
        .feasible_actions()
        .action_for_node(node)
        .expect("decoder only points at unmasked nodes");
    debug_assert!(dist.mask[node]);
    (node, action)
}

fn best_index(trajs: &[Trajectory]) -> usize {
    let mut best = 0;
    for (i, t) in trajs.iter().enumerate() {
        if t.return_s() < trajs[best].return_s() {
            best = i;
        }
    }
    best
}

/// Rolls the policy out on a fresh reset of `scenario`.
pub fn rollout(
    scenario: &Scenario,
    team: TeamConfig,
    params: &PolicyParams,
    policy: DecodePolicy,
    config: EnvConfig,
) -> Result<RolloutResult> {
    rollout_from(MissionState::reset_with(scenario, team, config)?, params, policy)
}

/// Rolls the policy out from an arbitrary (e.g. mid-mission) state.
///
/// Sample `i` draws from ChaCha8 stream `i` of `policy.seed`, so the pool
/// is the same however the samples are scheduled across threads.
pub fn rollout_from(state: MissionState, params: &PolicyParams, policy: DecodePolicy) -> Result<RolloutResult> {
    let trajectories: Vec<Trajectory> = match policy.strategy {
        DecodeStrategy::Greedy => vec![run_episode(params, state, Chooser::Greedy, false)?.0],
        DecodeStrategy::Sample(0) => return Err(Error::Validation("sample count must be at least 1".into())),
        DecodeStrategy::Sample(n) => (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = sample_rng(policy.seed, i as u64);
                run_episode(params, state.clone(), Chooser::Sample(&mut rng), false).map(|r| r.0)
            })
            .collect::<Result<_>>()?,
    };
    let best = best_index(&trajectories);
    Ok(RolloutResult { trajectories, best })
}

pub(crate) fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One sampled trajectory (ChaCha8 stream 0 of `seed`) and the gradient
/// of its log-probability.
pub fn sample_with_grad(params: &PolicyParams, state: MissionState, seed: u64) -> Result<(Trajectory, Vec<Tensor>)> {
    let mut rng = sample_rng(seed, 0);
    let (t, g) = run_episode(params, state, Chooser::Sample(&mut rng), true)?;
    Ok((t, g.expect("gradient requested")))
}

/// Log-probability of a fixed action sequence and its gradient.
pub fn forced_log_prob(
    params: &PolicyParams,
    state: MissionState,
    actions: &[Action],
) -> Result<(f64, Vec<Tensor>)> {
    let (t, g) = run_episode(params, state, Chooser::Forced(actions), true)?;
    if t.route.num_steps() != actions.len() {
        return Err(Error::ContractViolation(format!(
            "episode ended after {} of {} forced actions",
            t.route.num_steps(),
            actions.len()
        )));
    }
    Ok((t.log_prob, g.expect("gradient requested")))
}

/// Outcome of [`gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Denominator floor of the relative error: entries with gradients well
/// below it are compared on an absolute scale instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;
pub const GRAD_CHECK_STEP: f64 = 1e-6;

/// Compares the analytic gradient of `Σ log π` along a sampled trajectory
/// with central differences, for a randomly initialised network on a
/// 4-task instance (5 nodes with the depot) flown by 2 UAVs and 1 UGV so
/// both decoders are exercised.
pub fn gradient_check(config: PolicyConfig, seed: u64) -> Result<GradCheck> {
    let team = TeamConfig::new(2, 1);
    let scenario = generate_scenario(2, 2, Distribution2D::Uniform, team, seed)?;
    let mut params = PolicyParams::init(config, seed)?;
    let state = MissionState::reset(&scenario, team)?;
    let mut rng = sample_rng(seed, 0);
    let (traj, _) = run_episode(&params, state.clone(), Chooser::Sample(&mut rng), false)?;
    let actions: Vec<Action> = traj.route.steps().map(|r| r.action).collect();
    let (_, analytic) = forced_log_prob(&params, state.clone(), &actions)?;

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for slot in 0..params.tensors.len() {
        for k in 0..params.tensors[slot].len() {
            let orig = params.tensors[slot].data[k];
            params.tensors[slot].data[k] = orig + GRAD_CHECK_STEP;
            let up = forced_log_prob(&params, state.clone(), &actions)?.0;
            params.tensors[slot].data[k] = orig - GRAD_CHECK_STEP;
            let down = forced_log_prob(&params, state.clone(), &actions)?.0;
            params.tensors[slot].data[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic[slot].data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst.checked += 1;
            if rel > worst.max_rel_error || worst.worst.0.is_empty() {
                worst.max_rel_error = rel;
                worst.worst = (params.names()[slot].clone(), k);
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
    }
    Ok(worst)
}
