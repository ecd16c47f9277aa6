use std::collections::BTreeSet;

use super::*;
use crate::bilevel::{solve_bilevel, Budget, Method};
use crate::env::trace::replay;
use crate::policy::{PolicyConfig, PolicyParams};
use crate::scenario::{generate_scenario, Distribution2D};

fn u15g5(seed: u64) -> Scenario {
    generate_scenario(15, 5, Distribution2D::Uniform, TeamConfig::default(), seed).unwrap()
}

#[test]
fn scenario_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, dist) in [Distribution2D::Uniform, Distribution2D::Gaussian, Distribution2D::Rayleigh].into_iter().enumerate() {
        let s = generate_scenario(15, 5, dist, TeamConfig::new(2, 1), i as u64).unwrap();
        let path = dir.path().join(format!("s{i}.json"));
        save_scenario(&path, &s).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(back, s);
        for (a, b) in back.tasks.iter().zip(&s.tasks) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }
}

#[test]
fn scenario_reader_checks_format_and_version() {
    let mut buf = Vec::new();
    write_scenario(&mut buf, &u15g5(1)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let newer = text.replace("\"version\": \"1.0\"", "\"version\": \"2.0\"");
    assert!(matches!(read_scenario(newer.as_bytes()), Err(Error::VersionMismatch { .. })));
    let minor = text.replace("\"version\": \"1.0\"", "\"version\": \"1.3\"");
    assert!(read_scenario(minor.as_bytes()).is_ok());
    let other = text.replace(SCENARIO_FORMAT, "something-else");
    assert!(matches!(read_scenario(other.as_bytes()), Err(Error::Format(_))));
    assert!(read_scenario(&b"{}"[..]).is_err());
}

#[test]
fn trace_round_trip_replays() {
    let s = u15g5(2);
    let team = TeamConfig::default();
    let sol = solve_bilevel(&s, team, Method::Tabu, Budget::iterations(300), 0).unwrap();
    let trace = TraceFile::new(team, EnvConfig::default(), &sol.route);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    save_trace(&path, &trace).unwrap();
    let back = load_trace(&path).unwrap();
    assert_eq!(back, trace);
    let replayed = replay(&s, back.header.team, back.header.config, &back.entries).unwrap();
    assert!((replayed.makespan_s - sol.route.makespan_s).abs() < 1e-6);

    let mut buf = Vec::new();
    write_trace(&mut buf, &trace).unwrap();
    let newer = String::from_utf8(buf).unwrap().replacen("\"version\":\"1.0\"", "\"version\":\"3.1\"", 1);
    assert!(matches!(read_trace(newer.as_bytes()), Err(Error::VersionMismatch { .. })));
}

#[test]
fn checkpoint_files_are_bit_exact() {
    let p = PolicyParams::init(PolicyConfig::tiny(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    save_checkpoint(&path, &p, &serde_json::json!({"epoch": 3})).unwrap();
    let back = load_checkpoint(&path).unwrap();
    for (a, b) in back.params.tensors.iter().zip(&p.tensors) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.meta["epoch"], 3);
}

fn parse(svg: &str) -> roxmltree::Document<'_> {
    let doc = roxmltree::Document::parse(svg).expect("well-formed XML");
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.attribute("version"), Some("1.1"));
    doc
}

#[test]
fn empty_trace_plots_the_scenario_only() {
    let s = u15g5(3);
    let svg = export_svg(&s, TeamConfig::default(), EnvConfig::default(), &[], &PlotStyle::default()).unwrap();
    let doc = parse(&svg);
    let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
    assert_eq!(count("polyline"), 0);
    assert_eq!(count("line"), s.road.edges.len());
    assert_eq!(doc.descendants().filter(|n| n.attribute("data-task").is_some()).count(), 20);
    assert!(doc.descendants().any(|n| n.attribute("id") == Some("depot")));
}

#[test]
fn single_pair_trace_has_two_polylines() {
    let s = u15g5(4);
    let team = TeamConfig::default();
    let sol = solve_bilevel(&s, team, Method::Gls, Budget::iterations(200), 0).unwrap();
    let svg = export_svg(&s, team, EnvConfig::default(), &sol.route.entries, &PlotStyle::default()).unwrap();
    let doc = parse(&svg);
    let lines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].attribute("stroke-dasharray").is_some());
    assert!(lines[1].attribute("stroke-dasharray").is_none());
    let markers = doc
        .descendants()
        .find(|n| n.attribute("id") == Some("rendezvous"))
        .unwrap()
        .children()
        .filter(|n| n.has_tag_name("circle"))
        .count();
    assert_eq!(markers, sol.route.rendezvous.len());
}

#[test]
fn opacity_follows_the_visitation_log() {
    let s = u15g5(5);
    let team = TeamConfig::default();
    let sol = solve_bilevel(&s, team, Method::Anneal, Budget::iterations(200), 0).unwrap();
    let style = PlotStyle::default();
    for cut in [0, 3, sol.route.entries.len() / 2, sol.route.entries.len()] {
        let prefix = &sol.route.entries[..cut];
        let svg = export_svg(&s, team, EnvConfig::default(), prefix, &style).unwrap();
        let doc = parse(&svg);
        let expected: BTreeSet<usize> = visited_nodes(prefix).into_iter().map(|n| n - 1).collect();
        let mut seen = BTreeSet::new();
        for n in doc.descendants().filter(|n| n.attribute("data-task").is_some()) {
            let id: usize = n.attribute("data-task").unwrap().parse().unwrap();
            let opacity: f64 = n.attribute("fill-opacity").unwrap().parse().unwrap();
            if opacity == style.visited_opacity {
                seen.insert(id);
            } else {
                assert_eq!(opacity, style.unvisited_opacity);
            }
        }
        assert_eq!(seen, expected, "cut {cut}");
    }
}

#[test]
fn inconsistent_trace_is_refused() {
    let s = u15g5(6);
    let team = TeamConfig::default();
    let sol = solve_bilevel(&s, team, Method::Gls, Budget::iterations(100), 0).unwrap();
    let mut entries = sol.route.entries.clone();
    entries.swap(0, 1);
    let err = export_svg(&s, team, EnvConfig::default(), &entries, &PlotStyle::default()).unwrap_err();
    assert_eq!(err.kind(), "contract-violation");
}

#[test]
fn events_round_trip() {
    use crate::eval::{ReplanPayload, Trigger};
    use crate::scenario::{TaskKind, TaskPoint};
    let events = vec![
        ReplanEvent {
            trigger: Trigger::Recharge(1),
            payload: ReplanPayload::AddTasks(vec![TaskPoint { id: 20, x: 1234.5, y: 0.1, kind: TaskKind::Aerial }]),
        },
        ReplanEvent { trigger: Trigger::MissionTime(3600.0), payload: ReplanPayload::SetTeam { num_uavs: 4, num_ugvs: 2 } },
    ];
    let mut buf = Vec::new();
    write_events(&mut buf, &events).unwrap();
    assert_eq!(read_events(buf.as_slice()).unwrap(), events);
    let newer = String::from_utf8(buf).unwrap().replace("\"1.0\"", "\"2.0\"");
    assert!(matches!(read_events(newer.as_bytes()), Err(Error::VersionMismatch { .. })));
}
