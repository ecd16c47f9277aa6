use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::env::trace::{replay, Episode, EventPayload, TraceEntry};
use crate::env::{Action, AgentKind, MissionState};
use crate::policy::{PolicyConfig, PolicyParams};
use crate::scenario::{generate_scenario, Distribution2D, TaskKind, TaskPoint};

fn tiny_policy() -> Arc<PolicyParams> {
    Arc::new(PolicyParams::init(PolicyConfig::tiny(), 3).unwrap())
}

/// A generated scenario whose tasks are replaced by `points` (offsets from
/// the depot, all aerial).
fn near_depot(offsets: &[(f64, f64)]) -> Scenario {
    let mut s = generate_scenario(1, 1, Distribution2D::Uniform, TeamConfig::default(), 0).unwrap();
    let d = s.depot();
    s.tasks = offsets
        .iter()
        .enumerate()
        .map(|(id, &(dx, dy))| TaskPoint { id, x: d.x + dx, y: d.y + dy, kind: TaskKind::Aerial })
        .collect();
    s.validate().unwrap();
    s
}

#[test]
fn win_rate_formula() {
    let a: Vec<f64> = (0..100).map(|i| if i < 40 { 1.0 } else { 3.0 }).collect();
    let b = vec![2.0; 100];
    assert_eq!(win_rate(&[a, b]).unwrap(), vec![40.0, 60.0]);
    assert_eq!(win_rate(&[vec![5.0; 7], vec![5.0; 7], vec![5.0; 7]]).unwrap(), vec![100.0; 3]);
    assert_eq!(win_rate(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap(), vec![100.0, 0.0]);
    assert!(win_rate(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    assert!(win_rate(&[vec![f64::NAN]]).is_err());
}

proptest! {
    #[test]
    fn win_rate_matches_recount(m in prop::collection::vec(prop::collection::vec(0u8..6, 20), 5)) {
        let objectives: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|&v| f64::from(v) * 10.0).collect()).collect();
        let rates = win_rate(&objectives).unwrap();
        for (k, rate) in rates.iter().enumerate() {
            let mut wins = 0;
            for i in 0..20 {
                let mut col: Vec<u8> = m.iter().map(|r| r[i]).collect();
                col.sort_unstable();
                if m[k][i] == col[0] {
                    wins += 1;
                }
            }
            prop_assert_eq!(*rate, wins as f64 * 5.0);
        }
        prop_assert!(rates.iter().sum::<f64>() >= 100.0 - 1e-9);
    }
}

#[test]
fn method_names_round_trip() {
    for k in [
        MethodKind::Gls,
        MethodKind::Tabu,
        MethodKind::Anneal,
        MethodKind::DrlGreedy,
        MethodKind::DrlSample(64),
        MethodKind::DrlMfGreedy,
        MethodKind::DrlMfSample(16),
        MethodKind::Oracle,
    ] {
        assert_eq!(k.to_string().parse::<MethodKind>().unwrap(), k);
    }
    assert!("drl_sample0".parse::<MethodKind>().is_err());
    assert!("drl_samplex".parse::<MethodKind>().is_err());
    assert!("lkh".parse::<MethodKind>().is_err());
    assert_eq!(MethodKind::DrlMfSample(4).env_config().selection, AgentSelection::PerStep);
    assert!(MethodSpec::new(MethodKind::DrlGreedy).validate().is_err());
}

#[test]
fn oracle_single_task_closed_form() {
    let s = near_depot(&[(0.0, 1_000.0)]);
    let o = brute_force_oracle(&s, TeamConfig::default()).unwrap();
    let expected = 2.0 * 1_000.0 / 10.0 + 300.0;
    assert!((o.makespan_s - expected).abs() < 1e-9, "{}", o.makespan_s);
    assert_eq!(o.rounds, vec![(vec![1], 0)]);
}

#[test]
fn oracle_symmetric_pair_ties() {
    let s = near_depot(&[(1_000.0, 0.0), (-1_000.0, 0.0)]);
    let o = brute_force_oracle(&s, TeamConfig::default()).unwrap();
    assert!((o.makespan_s - (4_000.0 / 10.0 + 300.0)).abs() < 1e-9, "{}", o.makespan_s);
    // The mirrored order replays to the same makespan.
    let mut ep = Episode::new(MissionState::reset(&s, TeamConfig::default()).unwrap());
    let (order, h) = &o.rounds[0];
    for &j in order.iter().rev() {
        ep.apply(Action::Visit(j)).unwrap();
    }
    ep.apply(Action::Recharge(*h)).unwrap();
    ep.apply(Action::Recharge(*h)).unwrap();
    assert!((ep.finish().makespan_s - o.makespan_s).abs() < 1e-9);
}

#[test]
fn oracle_limits() {
    let big = generate_scenario(6, 1, Distribution2D::Uniform, TeamConfig::default(), 1).unwrap();
    assert!(matches!(brute_force_oracle(&big, TeamConfig::default()), Err(Error::SizeLimit(_))));
    let stops = generate_scenario(2, 3, Distribution2D::Uniform, TeamConfig::default(), 1).unwrap();
    assert!(matches!(brute_force_oracle(&stops, TeamConfig::default()), Err(Error::SizeLimit(_))));
    let small = generate_scenario(2, 1, Distribution2D::Uniform, TeamConfig::default(), 1).unwrap();
    assert!(matches!(brute_force_oracle(&small, TeamConfig::new(2, 1)), Err(Error::Unsupported(_))));
}

#[test]
fn oracle_dominates_every_method() {
    let team = TeamConfig::default();
    let policy = tiny_policy();
    let methods = [
        MethodSpec::heuristic(Method::Gls, Budget::iterations(300), 0),
        MethodSpec::heuristic(Method::Tabu, Budget::iterations(300), 0),
        MethodSpec::heuristic(Method::Anneal, Budget::iterations(300), 0),
        MethodSpec::drl(MethodKind::DrlGreedy, Arc::clone(&policy), 0),
        MethodSpec::drl(MethodKind::DrlSample(16), Arc::clone(&policy), 0),
        MethodSpec::drl(MethodKind::DrlMfSample(16), Arc::clone(&policy), 0),
    ];
    for seed in 0..6 {
        let s = generate_scenario(3, 2, Distribution2D::Uniform, team, seed).unwrap();
        let o = brute_force_oracle(&s, team).unwrap();
        let replayed = replay(&s, team, EnvConfig::default(), &o.route.entries).unwrap();
        assert!((replayed.makespan_s - o.makespan_s).abs() < 1e-6);
        for m in &methods {
            let r = solve(m, &s, team, seed).unwrap();
            assert!(o.makespan_s <= r.return_s + 1e-6, "seed {seed}: {} beat the oracle ({} < {})", m.name, r.return_s, o.makespan_s);
        }
    }
}

#[test]
fn suite_scores_from_replay() {
    let team = TeamConfig::default();
    let instances: Vec<Scenario> =
        (0..3).map(|s| generate_scenario(3, 1, Distribution2D::Uniform, team, 10 + s).unwrap()).collect();
    let methods = vec![
        MethodSpec::new(MethodKind::Oracle),
        MethodSpec::heuristic(Method::Gls, Budget::iterations(200), 0),
        MethodSpec::drl(MethodKind::DrlGreedy, tiny_policy(), 0),
    ];
    let report = evaluate_suite(&methods, &instances, team).unwrap();
    assert_eq!(report.methods.len(), 3);
    assert_eq!(report.methods[0].gap_pct, 0.0);
    assert_eq!(report.methods[0].win_rate_pct, 100.0);
    assert!(report.methods.iter().all(|m| m.gap_pct >= 0.0));
    for (m, row) in report.cells.iter().enumerate() {
        for (i, c) in row.iter().enumerate() {
            let route = solve(&methods[m], &instances[i], team, methods[m].seed + i as u64).unwrap();
            let (obj, _) = score_route(&instances[i], team, methods[m].kind.env_config(), &route).unwrap();
            assert_eq!(c.objective_min, obj);
        }
    }
    let mut csv = Vec::new();
    write_table_csv(&[report.clone(), report.clone()], &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 13);
    assert_eq!(header[1], "1U1G_obj_mean_min");
    assert_eq!(text.lines().count(), 4);
    let mut matrix = Vec::new();
    write_matrix_csv(std::slice::from_ref(&report), &mut matrix).unwrap();
    assert_eq!(String::from_utf8(matrix).unwrap().lines().count(), 4);
}

#[test]
fn crashed_cells_rank_last() {
    let team = TeamConfig::default();
    let instances = vec![generate_scenario(8, 1, Distribution2D::Uniform, team, 4).unwrap()];
    let methods = vec![
        MethodSpec::new(MethodKind::Oracle),
        MethodSpec::heuristic(Method::Gls, Budget::iterations(100), 0),
    ];
    let report = evaluate_suite(&methods, &instances, team).unwrap();
    assert!(matches!(report.cells[0][0].status, CellStatus::Crashed(_)));
    assert_eq!(report.methods[0].crashes, 1);
    let gls = report.cells[1][0].objective_min;
    assert_eq!(report.cells[0][0].objective_min, gls + FAILURE_PENALTY_MIN);
    assert_eq!(report.methods[1].win_rate_pct, 100.0);
}

fn planner() -> MethodSpec {
    MethodSpec::drl(MethodKind::DrlSample(8), tiny_policy(), 0)
}

#[test]
fn replan_without_events_is_a_plain_plan() {
    let team = TeamConfig::new(2, 1);
    let s = generate_scenario(6, 2, Distribution2D::Uniform, team, 2).unwrap();
    for p in [planner(), MethodSpec::drl(MethodKind::DrlGreedy, tiny_policy(), 0)] {
        let out = dynamic_replan(&s, team, &p, &[], 7).unwrap();
        let plain = solve(&p, &s, team, 7).unwrap();
        assert_eq!(out.route, plain);
        assert_eq!(out.segments.len(), 1);
    }
}

fn check_spliced(out: &ReplanOutput, initial: &Scenario, team: TeamConfig, config: EnvConfig) {
    let replayed = replay(initial, team, config, &out.route.entries).unwrap();
    assert_eq!(replayed.status, out.route.status);
    assert!((replayed.makespan_s - out.route.makespan_s).abs() < 1e-6);
    let mut last = std::collections::HashMap::new();
    for r in out.route.steps() {
        let prev = last.insert(r.agent, r.clock_s).unwrap_or(0.0);
        assert!(r.clock_s >= prev - 1e-9, "{} went back in time", r.agent);
    }
}

#[test]
fn replan_injects_tasks_at_a_recharge() {
    let team = TeamConfig::new(2, 1);
    let s = generate_scenario(6, 2, Distribution2D::Uniform, team, 5).unwrap();
    let d = s.depot();
    let added: Vec<TaskPoint> = (0..3)
        .map(|k| TaskPoint { id: s.tasks.len() + k, x: d.x + 500.0 * (k as f64 + 1.0), y: d.y + 800.0, kind: TaskKind::Aerial })
        .collect();
    let events = [ReplanEvent { trigger: Trigger::Recharge(1), payload: ReplanPayload::AddTasks(added.clone()) }];
    let p = planner();
    let out = dynamic_replan(&s, team, &p, &events, 0).unwrap();
    assert!(out.events[0].applied, "{:?}", out.events[0]);
    assert_eq!(out.scenario.tasks.len(), s.tasks.len() + 3);
    assert_eq!(out.segments.len(), 2);
    assert!(out.route.entries.iter().any(|e| matches!(e, TraceEntry::Event { .. })));
    check_spliced(&out, &s, team, p.kind.env_config());
    if out.route.is_success() {
        assert_eq!(out.coverage(), 1.0);
    }
}

#[test]
fn replan_team_change_spawns_at_depot() {
    let team = TeamConfig::new(2, 1);
    let s = generate_scenario(8, 2, Distribution2D::Uniform, team, 6).unwrap();
    let events = [ReplanEvent { trigger: Trigger::Recharge(2), payload: ReplanPayload::SetTeam { num_uavs: 4, num_ugvs: 2 } }];
    let p = planner();
    let out = dynamic_replan(&s, team, &p, &events, 0).unwrap();
    assert!(out.events[0].applied, "{:?}", out.events[0]);
    assert_eq!((out.final_team.num_uavs, out.final_team.num_ugvs), (4, 2));
    check_spliced(&out, &s, team, p.kind.env_config());

    let at = out.route.entries.iter().position(|e| matches!(e, TraceEntry::Event { .. })).unwrap();
    let TraceEntry::Event { event: EventPayload::SetTeam { switch_time_s, .. } } = &out.route.entries[at] else {
        panic!("expected a team change");
    };
    assert_eq!(*switch_time_s, out.events[0].time_s.unwrap());
    let mut state = MissionState::reset_with(&s, team, p.kind.env_config()).unwrap();
    for e in &out.route.entries[..at] {
        if let TraceEntry::Step(r) = e {
            state.apply(r.action).unwrap();
        }
    }
    state.set_team(4, 2, *switch_time_s).unwrap();
    let cap = state.graph().capacity();
    for a in state.uavs[2..].iter().chain(&state.ugvs[1..]) {
        assert_eq!(a.node, 0);
        assert_eq!(a.fuel_kj, cap);
        assert_eq!(a.clock_s, *switch_time_s);
    }

    let shrink = [ReplanEvent { trigger: Trigger::Recharge(1), payload: ReplanPayload::SetTeam { num_uavs: 1, num_ugvs: 1 } }];
    let out = dynamic_replan(&s, team, &p, &shrink, 0).unwrap();
    assert!(out.events[0].applied);
    check_spliced(&out, &s, team, p.kind.env_config());
    let after = out.route.entries.iter().position(|e| matches!(e, TraceEntry::Event { .. })).unwrap();
    assert!(out.route.entries[after..].iter().all(|e| match e {
        TraceEntry::Step(r) => r.agent.kind == AgentKind::Ugv || r.agent.index == 0,
        TraceEntry::Event { .. } => true,
    }));
}

#[test]
fn replan_reports_bad_events() {
    let team = TeamConfig::new(2, 1);
    let s = generate_scenario(6, 2, Distribution2D::Uniform, team, 5).unwrap();
    let p = planner();
    let stale = TaskPoint { id: 0, x: 1.0, y: 1.0, kind: TaskKind::Aerial };
    let events = [
        ReplanEvent { trigger: Trigger::Recharge(1), payload: ReplanPayload::AddTasks(vec![stale]) },
        ReplanEvent { trigger: Trigger::Recharge(10_000), payload: ReplanPayload::SetTeam { num_uavs: 1, num_ugvs: 1 } },
    ];
    let out = dynamic_replan(&s, team, &p, &events, 0).unwrap();
    assert!(!out.events[0].applied && out.events[0].error.is_some());
    assert!(!out.events[1].applied && out.events[1].error.is_some());

    let unordered = [events[1].clone(), events[0].clone()];
    assert!(matches!(dynamic_replan(&s, team, &p, &unordered, 0), Err(Error::Validation(_))));
    let gls = MethodSpec::heuristic(Method::Gls, Budget::default(), 0);
    assert!(matches!(dynamic_replan(&s, team, &gls, &[], 0), Err(Error::Unsupported(_))));
}
