use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::*;
use crate::policy::{forced_log_prob, sample_with_grad, PolicyConfig};

#[test]
fn learning_rate_schedule() {
    assert_eq!(lr_at_epoch(1e-4, 0.995, 0), 1e-4);
    assert!((lr_at_epoch(1e-4, 0.995, 1) - 9.95e-5).abs() < 1e-18);
    assert!((lr_at_epoch(1e-4, 0.995, 100) - 6.057704364907279e-5).abs() < 1e-15);
    let seq: Vec<f64> = (0..50).map(|e| lr_at_epoch(1e-4, 0.995, e)).collect();
    assert!(seq.windows(2).all(|w| w[1] < w[0]));
}

const BASELINE: [f64; 10] = [231.5, 198.2, 250.1, 210.0, 205.7, 240.3, 199.9, 222.2, 215.6, 230.0];
const POLICY: [f64; 10] = [225.1, 200.3, 241.7, 205.2, 207.9, 236.1, 190.4, 220.0, 210.3, 224.8];

#[test]
fn t_test_matches_frozen_oracle() {
    let (t, p) = paired_t_test_stat(&POLICY, &BASELINE).unwrap();
    assert!((t - 3.37025408253365).abs() < 1e-10);
    assert!((p - 0.004126826465917828).abs() < 1e-6);
    assert!((p - 0.004126826465917828).abs() < 1e-12);
}

#[test]
fn t_test_agrees_with_statrs_when_policy_is_worse() {
    let base = [100.0, 102.0, 98.0, 105.0, 99.0];
    let pol = [101.0, 103.0, 97.0, 106.0, 100.0];
    let (t, p) = paired_t_test_stat(&pol, &base).unwrap();
    assert!((t + 1.5).abs() < 1e-12);
    let want = 1.0 - StudentsT::new(0.0, 1.0, 4.0).unwrap().cdf(-1.5);
    assert!((p - want).abs() < 1e-10);
    assert!(p > 0.89 && p < 0.9);
}

#[test]
fn t_test_degenerate_and_bad_input() {
    assert_eq!(paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
    assert_eq!(paired_t_test(&[0.0; 4], &[1.0; 4]).unwrap(), 0.0);
    assert_eq!(paired_t_test(&[2.0; 4], &[1.0; 4]).unwrap(), 1.0);
    assert_eq!(paired_t_test(&[1.0], &[1.0, 2.0]).unwrap_err().kind(), "contract-violation");
    assert_eq!(paired_t_test(&[1.0], &[1.0]).unwrap_err().kind(), "contract-violation");
}

proptest! {
    #[test]
    fn student_t_matches_statrs(t in -12.0f64..12.0, df in 1u32..300) {
        let want = StudentsT::new(0.0, 1.0, df as f64).unwrap().cdf(t);
        prop_assert!((student_t_cdf(t, df as f64) - want).abs() < 1e-10);
    }

    #[test]
    fn incomplete_beta_is_monotone(a in 0.5f64..60.0, x in 0.0f64..1.0, dx in 0.0f64..0.2) {
        let lo = inc_beta(a, 0.5, x);
        let hi = inc_beta(a, 0.5, (x + dx).min(1.0));
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!(hi >= lo - 1e-14);
    }
}

#[test]
fn ln_gamma_known_values() {
    assert!(ln_gamma(1.0).abs() < 1e-14);
    assert!(ln_gamma(2.0).abs() < 1e-14);
    assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = PolicyParams::init(PolicyConfig::tiny(), 0).unwrap();
    let before = p.clone();
    let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
    let zero = p.zeros_like();
    for _ in 0..3 {
        adam.step(&mut p, &zero, 1e-3);
    }
    assert_eq!(p, before);
}

#[test]
fn first_adam_step_moves_each_weight_by_about_lr() {
    let mut p = PolicyParams::init(PolicyConfig::tiny(), 0).unwrap();
    let before = p.clone();
    let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
    let mut g = p.zeros_like();
    g[0].data[0] = 3.0;
    g[0].data[1] = -0.01;
    adam.step(&mut p, &g, 1e-3);
    assert!((before.tensors[0].data[0] - p.tensors[0].data[0] - 1e-3).abs() < 1e-9);
    assert!((p.tensors[0].data[1] - before.tensors[0].data[1] - 1e-3).abs() < 1e-8);
}

#[test]
fn zero_advantage_gives_zero_gradient() {
    let p = PolicyParams::init(PolicyConfig::tiny(), 1).unwrap();
    let s = ProblemSpec::desk().generate(1).unwrap();
    let st = MissionState::reset(&s, s.team).unwrap();
    let (_, g) = sample_with_grad(&p, st, 1).unwrap();
    assert!(g.iter().any(|t| t.data.iter().any(|&v| v != 0.0)));
    let out = policy_gradient(&[0.0, 0.0], &[g.clone(), g]);
    assert!(out.iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
}

#[test]
fn better_than_baseline_trajectory_becomes_more_likely() {
    let mut p = PolicyParams::init(PolicyConfig::tiny(), 2).unwrap();
    let s = ProblemSpec::desk().generate(2).unwrap();
    let st = MissionState::reset(&s, s.team).unwrap();
    let (traj, g) = sample_with_grad(&p, st.clone(), 2).unwrap();
    let actions: Vec<_> = traj.route.steps().map(|r| r.action).collect();
    // Advantage -1: the loss is -log π, so descending it raises log π.
    let step = policy_gradient(&[-1.0], &[g]);
    let loss_before = -traj.log_prob;
    for (t, d) in p.tensors.iter_mut().zip(&step) {
        for (x, &y) in t.data.iter_mut().zip(&d.data) {
            *x -= 1e-3 * y;
        }
    }
    let (lp, _) = forced_log_prob(&p, st, &actions).unwrap();
    assert!(lp > traj.log_prob);
    assert!(-lp < loss_before);
}

fn small_config() -> TrainConfig {
    TrainConfig { epochs: 2, batches_per_epoch: 2, batch_size: 4, ..TrainConfig::desk() }
}

fn strip_wall(rows: &[BatchLog]) -> Vec<BatchLog> {
    rows.iter().cloned().map(|r| BatchLog { wall_ms: 0, ..r }).collect()
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config();
    let p = PolicyParams::init(PolicyConfig::tiny(), 3).unwrap();
    let a = train(&cfg, p.clone(), 7, |_| Ok(())).unwrap();
    let b = train(&cfg, p, 7, |_| Ok(())).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.phi, b.phi);
    assert_eq!(strip_wall(&a.batches), strip_wall(&b.batches));
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.batches.len(), 4);
}

#[test]
fn baseline_only_changes_on_a_significant_test() {
    let cfg = TrainConfig { epochs: 3, ..small_config() };
    let p = PolicyParams::init(PolicyConfig::tiny(), 4).unwrap();
    let mut phis = vec![p.clone()];
    let st = train(&cfg, p, 4, |s| {
        phis.push(s.phi.clone());
        Ok(())
    })
    .unwrap();
    for (k, e) in st.epochs.iter().enumerate() {
        assert_eq!(e.baseline_swapped, e.p_value < cfg.significance);
        if !e.baseline_swapped {
            assert_eq!(phis[k + 1], phis[k]);
        }
    }
    assert_ne!(st.theta, phis[0]);
}

#[test]
fn csv_log_has_the_expected_columns() {
    let rows = vec![BatchLog {
        epoch: 0,
        batch: 1,
        mean_return_min: 250.5,
        failure_rate: 0.25,
        lr: 1e-4,
        p_value: Some(0.01),
        wall_ms: 5,
    }];
    let mut out = Vec::new();
    write_log_csv(&mut out, &rows).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,batch,mean_return_min,failure_rate,lr,p_value,wall_ms"));
    assert_eq!(lines.next().unwrap().split(',').count(), 7);
}
