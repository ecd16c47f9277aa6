use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use coroute_core::bilevel::{solve_bilevel_with, Budget, Method};
use coroute_core::env::{EnvConfig, MissionState};
use coroute_core::eval::brute_force_oracle;
use coroute_core::policy::{rollout, DecodePolicy, PolicyConfig, PolicyParams};
use coroute_core::scenario::{generate_scenario, Distribution2D, TeamConfig};

fn env_step(c: &mut Criterion) {
    let s = generate_scenario(8, 3, Distribution2D::Uniform, TeamConfig::default(), 1).unwrap();
    let state = MissionState::reset(&s, s.team).unwrap();
    c.bench_function("env/feasible_step", |b| {
        b.iter(|| {
            let mut st = state.clone();
            let a = st.feasible_actions().actions()[0];
            black_box(st.apply(a).unwrap());
        })
    });
}

fn policy_rollout(c: &mut Criterion) {
    let s = generate_scenario(8, 3, Distribution2D::Uniform, TeamConfig::default(), 2).unwrap();
    let params = PolicyParams::init(PolicyConfig::desk(), 0).unwrap();
    let mut g = c.benchmark_group("policy");
    g.sample_size(20);
    g.bench_function("greedy_11_tasks", |b| {
        b.iter(|| rollout(&s, s.team, &params, DecodePolicy::greedy(), EnvConfig::default()).unwrap())
    });
    g.bench_function("sample16_11_tasks", |b| {
        b.iter(|| rollout(&s, s.team, &params, DecodePolicy::sample(16, 0), EnvConfig::default()).unwrap())
    });
    g.finish();
}

fn heuristics(c: &mut Criterion) {
    let s = generate_scenario(8, 3, Distribution2D::Uniform, TeamConfig::default(), 3).unwrap();
    let mut g = c.benchmark_group("bilevel");
    g.sample_size(10);
    for m in [Method::Gls, Method::Tabu, Method::Anneal] {
        g.bench_function(format!("{m:?}_500"), |b| {
            b.iter(|| solve_bilevel_with(&s, s.team, m, Budget::iterations(500), 0, EnvConfig::default()).unwrap())
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let s = generate_scenario(4, 2, Distribution2D::Uniform, TeamConfig::default(), 4).unwrap();
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    g.bench_function("six_tasks", |b| b.iter(|| brute_force_oracle(&s, s.team).unwrap()));
    g.finish();
}

criterion_group!(benches, env_step, policy_rollout, heuristics, oracle);
criterion_main!(benches);
