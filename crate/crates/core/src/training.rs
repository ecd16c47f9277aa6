//! REINFORCE with a greedy-rollout baseline.
//!
//! Each batch draws fresh instances, samples one trajectory per instance
//! under the current policy θ and a greedy one under the frozen baseline
//! φ, and steps θ along `(1/B) Σ (R - R^φ) ∇ log π`. At the end of an
//! epoch the learning rate decays and θ replaces φ if a one-sided paired
//! t-test says it is better.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::env::{EnvConfig, MissionState, Status};
use crate::error::{Error, Result};
use crate::policy::{rollout_from, DecodePolicy, PolicyParams};
use crate::scenario::{generate_scenario, Distribution2D, Scenario, TeamConfig};

pub fn lr_at_epoch(lr0: f64, alpha: f64, epoch: u32) -> f64 {
    lr0 * alpha.powi(epoch as i32)
}

// ---------------------------------------------------------------------------
// Student t via the regularised incomplete beta function.

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularised incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * inc_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// One-sided paired t-test of "policy returns are lower than baseline
/// returns". Returns `(t, p)` with `d = baseline - policy`. A zero spread
/// gives `p = 0` when the policy is strictly better on average and `p = 1`
/// otherwise.
pub fn paired_t_test_stat(policy: &[f64], baseline: &[f64]) -> Result<(f64, f64)> {
    if policy.len() != baseline.len() {
        return Err(Error::ContractViolation(format!(
            "paired test needs equal lengths, got {} and {}",
            policy.len(),
            baseline.len()
        )));
    }
    let n = policy.len();
    if n < 2 {
        return Err(Error::ContractViolation("paired test needs at least two pairs".into()));
    }
    let d: Vec<f64> = baseline.iter().zip(policy).map(|(b, p)| b - p).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        let t = if mean > 0.0 { f64::INFINITY } else if mean < 0.0 { f64::NEG_INFINITY } else { 0.0 };
        return Ok((t, p));
    }
    let t = mean / (sd / nf.sqrt());
    Ok((t, 1.0 - student_t_cdf(t, nf - 1.0)))
}

pub fn paired_t_test(policy: &[f64], baseline: &[f64]) -> Result<f64> {
    paired_t_test_stat(policy, baseline).map(|r| r.1)
}

// ---------------------------------------------------------------------------
// Optimiser.

/// Adaptive-moment optimiser state, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &PolicyParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, params: &mut PolicyParams, grad: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, g) in grad.iter().enumerate() {
            let (m, v, p) = (&mut self.m[slot].data, &mut self.v[slot].data, &mut params.tensors[slot].data);
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop.

/// Instances the trainer draws on the fly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub aerial: usize,
    pub ground: usize,
    pub distribution: Distribution2D,
    pub team: TeamConfig,
}

impl ProblemSpec {
    /// 8 aerial and 3 ground points, one UAV and one UGV.
    pub fn desk() -> Self {
        Self { aerial: 8, ground: 3, distribution: Distribution2D::Uniform, team: TeamConfig::default() }
    }

    pub fn generate(&self, seed: u64) -> Result<Scenario> {
        generate_scenario(self.aerial, self.ground, self.distribution, self.team, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay: f64,
    pub significance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub problem: ProblemSpec,
    pub env: EnvConfig,
}

impl TrainConfig {
    /// Full-scale schedule: 100 epochs of 200 batches of 256.
    pub fn paper() -> Self {
        Self {
            epochs: 100,
            batches_per_epoch: 200,
            batch_size: 256,
            lr0: 1e-4,
            decay: 0.995,
            significance: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            problem: ProblemSpec::desk(),
            env: EnvConfig::default(),
        }
    }

    /// Laptop schedule: 10 epochs of 20 batches of 32.
    pub fn desk() -> Self {
        Self { epochs: 10, batches_per_epoch: 20, batch_size: 32, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Validation("batch size and batches per epoch must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Validation(format!("decay {} must be in (0, 1]", self.decay)));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Validation(format!("learning rate {} must be positive", self.lr0)));
        }
        if self.batch_size * self.batches_per_epoch < 2 {
            return Err(Error::Validation("an epoch needs at least two instances for the t-test".into()));
        }
        Ok(())
    }
}

/// Returns are scaled to hours inside the gradient.
const RETURN_SCALE_S: f64 = 3600.0;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub epoch: u32,
    pub batch: usize,
    pub mean_return_min: f64,
    pub failure_rate: f64,
    pub lr: f64,
    /// t-test p-value; only set on the last batch of an epoch.
    pub p_value: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub mean_return_min: f64,
    pub p_value: f64,
    pub baseline_swapped: bool,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub theta: PolicyParams,
    pub phi: PolicyParams,
    pub adam: Adam,
    /// Epochs completed.
    pub epoch: u32,
    pub batches: Vec<BatchLog>,
    pub epochs: Vec<EpochLog>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &TrainConfig, params: PolicyParams, seed: u64) -> Self {
        Self {
            adam: Adam::new(&params, config.beta1, config.beta2, config.eps),
            phi: params.clone(),
            theta: params,
            epoch: 0,
            batches: Vec::new(),
            epochs: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn swaps(&self) -> usize {
        self.epochs.iter().filter(|e| e.baseline_swapped).count()
    }
}

/// What one instance of a batch contributed.
struct Sampled {
    return_s: f64,
    baseline_s: f64,
    failed: bool,
    grad: Vec<Tensor>,
}

fn sample_instance(
    theta: &PolicyParams,
    phi: &PolicyParams,
    scenario: &Scenario,
    config: &TrainConfig,
    seed: u64,
) -> Result<Sampled> {
    let state = MissionState::reset_with(scenario, config.problem.team, config.env)?;
    let (traj, grad) = crate::policy::sample_with_grad(theta, state.clone(), seed)?;
    let base = rollout_from(state, phi, DecodePolicy::greedy())?.into_best();
    Ok(Sampled {
        return_s: traj.return_s(),
        baseline_s: base.return_s(),
        failed: traj.route.status != Status::Success,
        grad,
    })
}

/// `(1/B) Σ a_b g_b`, summed in batch order.
pub fn policy_gradient(advantages: &[f64], grads: &[Vec<Tensor>]) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = grads[0].iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    let b = advantages.len() as f64;
    for (a, g) in advantages.iter().zip(grads) {
        for (o, t) in out.iter_mut().zip(g) {
            for (x, &y) in o.data.iter_mut().zip(&t.data) {
                *x += a * y / b;
            }
        }
    }
    out
}

fn check_finite(grad: &[Tensor], theta: &PolicyParams, epoch: u32, batch: usize) -> Result<()> {
    for (slot, g) in grad.iter().enumerate() {
        if let Some(k) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of '{}'[{k}] at epoch {epoch} batch {batch}",
                theta.names()[slot]
            )));
        }
    }
    Ok(())
}

/// Runs one epoch and updates `state` in place.
pub fn train_epoch(state: &mut TrainState, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let epoch = state.epoch;
    let lr = lr_at_epoch(config.lr0, config.decay, epoch);
    let mut instances = Vec::with_capacity(config.batch_size * config.batches_per_epoch);
    let mut baseline_returns = Vec::with_capacity(instances.capacity());
    let mut epoch_returns = Vec::new();
    for batch in 0..config.batches_per_epoch {
        let clock = Instant::now();
        let seeds: Vec<(u64, u64)> =
            (0..config.batch_size).map(|_| (state.rng.random(), state.rng.random())).collect();
        let scenarios: Vec<Scenario> =
            seeds.iter().map(|&(s, _)| config.problem.generate(s)).collect::<Result<_>>()?;
        let (theta, phi) = (&state.theta, &state.phi);
        let results: Vec<Sampled> = scenarios
            .par_iter()
            .zip(&seeds)
            .map(|(sc, &(_, rs))| sample_instance(theta, phi, sc, config, rs))
            .collect::<Result<_>>()?;
        let advantages: Vec<f64> =
            results.iter().map(|r| (r.return_s - r.baseline_s) / RETURN_SCALE_S).collect();
        let grads: Vec<Vec<Tensor>> = results.iter().map(|r| r.grad.clone()).collect();
        let grad = policy_gradient(&advantages, &grads);
        check_finite(&grad, &state.theta, epoch, batch)?;
        state.adam.step(&mut state.theta, &grad, lr);
        let mean = results.iter().map(|r| r.return_s).sum::<f64>() / results.len() as f64;
        let fails = results.iter().filter(|r| r.failed).count() as f64 / results.len() as f64;
        epoch_returns.push(mean);
        baseline_returns.extend(results.iter().map(|r| r.baseline_s));
        instances.extend(scenarios);
        state.batches.push(BatchLog {
            epoch,
            batch,
            mean_return_min: mean / 60.0,
            failure_rate: fails,
            lr,
            p_value: None,
            wall_ms: clock.elapsed().as_millis() as u64,
        });
    }

    // Greedy θ against the greedy φ returns already recorded for the same
    // instances.
    let clock = Instant::now();
    let theta = &state.theta;
    let policy_returns: Vec<f64> = instances
        .par_iter()
        .map(|sc| {
            let st = MissionState::reset_with(sc, config.problem.team, config.env)?;
            Ok(rollout_from(st, theta, DecodePolicy::greedy())?.best().return_s())
        })
        .collect::<Result<_>>()?;
    let p = paired_t_test(&policy_returns, &baseline_returns)?;
    let swapped = p < config.significance;
    if swapped {
        state.phi = state.theta.clone();
    }
    if let Some(last) = state.batches.last_mut() {
        last.p_value = Some(p);
        last.wall_ms += clock.elapsed().as_millis() as u64;
    }
    state.epochs.push(EpochLog {
        epoch,
        mean_return_min: epoch_returns.iter().sum::<f64>() / epoch_returns.len() as f64 / 60.0,
        p_value: p,
        baseline_swapped: swapped,
    });
    state.epoch += 1;
    Ok(())
}

/// Full training run. `on_epoch` sees the state after every epoch (for
/// checkpoints and logs).
pub fn train(
    config: &TrainConfig,
    params: PolicyParams,
    seed: u64,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    config.validate()?;
    let mut state = TrainState::new(config, params, seed);
    while state.epoch < config.epochs {
        train_epoch(&mut state, config)?;
        on_epoch(&state)?;
    }
    Ok(state)
}

/// CSV training log with a header row.
pub fn write_log_csv<W: std::io::Write>(mut w: W, rows: &[BatchLog]) -> Result<()> {
    writeln!(w, "epoch,batch,mean_return_min,failure_rate,lr,p_value,wall_ms")?;
    for r in rows {
        let p = r.p_value.map(|p| format!("{p:.9}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.9e},{},{}",
            r.epoch, r.batch, r.mean_return_min, r.failure_rate, r.lr, p, r.wall_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
