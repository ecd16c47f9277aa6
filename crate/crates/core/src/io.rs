//! File formats and route plots.
//!
//! * Scenario: one JSON document `{"format", "version", "scenario"}`.
//!   Floats are written in shortest round-trip form, so coordinates reload
//!   bit-exactly.
//! * Trace: JSON lines. The first line is a header naming the team and
//!   environment configuration; every following line is one step or event.
//! * Replanning events: one JSON document `{"format", "version", "events"}`.
//! * Checkpoint: see [`crate::policy::write_checkpoint`].
//!
//! Readers reject any major version other than 1.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::trace::{read_jsonl, replay_episode, RouteSolution, TraceEntry};
use crate::env::{Action, AgentKind, EnvConfig, MissionGraph, Status};
use crate::error::{Error, Result};
use crate::eval::ReplanEvent;
use crate::policy::{read_checkpoint, write_checkpoint, Checkpoint, PolicyParams};
use crate::scenario::{Point, Scenario, TaskKind, TeamConfig};

pub const FORMAT_VERSION: &str = "1.0";
const MAJOR: u32 = 1;
pub const SCENARIO_FORMAT: &str = "coroute-scenario";
pub const TRACE_FORMAT: &str = "coroute-trace";
pub const EVENTS_FORMAT: &str = "coroute-events";

fn check_version(format: &str, expected: &str, version: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!("expected a {expected} file, found '{format}'")));
    }
    let major = version.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major != Some(MAJOR) {
        return Err(Error::VersionMismatch { found: version.to_string(), expected: MAJOR });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    format: String,
    version: String,
    scenario: Scenario,
}

pub fn write_scenario<W: Write>(mut w: W, scenario: &Scenario) -> Result<()> {
    let file = ScenarioFile {
        format: SCENARIO_FORMAT.into(),
        version: FORMAT_VERSION.into(),
        scenario: scenario.clone(),
    };
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Reads and validates a scenario.
pub fn read_scenario<R: Read>(r: R) -> Result<Scenario> {
    let value: serde_json::Value = serde_json::from_reader(r)?;
    let field = |k: &str| value.get(k).and_then(|v| v.as_str()).unwrap_or_default().to_string();
    check_version(&field("format"), SCENARIO_FORMAT, &field("version"))?;
    let file: ScenarioFile =
        serde_json::from_value(value).map_err(|e| Error::Format(format!("scenario: {e}")))?;
    file.scenario.validate()?;
    Ok(file.scenario)
}

/// Everything needed to replay a trace against its scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: String,
    pub team: TeamConfig,
    pub config: EnvConfig,
    pub status: Status,
    pub makespan_s: f64,
    pub return_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub entries: Vec<TraceEntry>,
}

impl TraceFile {
    pub fn new(team: TeamConfig, config: EnvConfig, route: &RouteSolution) -> Self {
        Self {
            header: TraceHeader {
                format: TRACE_FORMAT.into(),
                version: FORMAT_VERSION.into(),
                team,
                config,
                status: route.status,
                makespan_s: route.makespan_s,
                return_s: route.return_s,
            },
            entries: route.entries.clone(),
        }
    }
}

pub fn write_trace<W: Write>(mut w: W, trace: &TraceFile) -> Result<()> {
    serde_json::to_writer(&mut w, &trace.header)?;
    w.write_all(b"\n")?;
    crate::env::trace::write_jsonl(&trace.entries, w)
}

pub fn read_trace<R: BufRead>(mut r: R) -> Result<TraceFile> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let value: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::Format(format!("trace header: {e}")))?;
    let field = |k: &str| value.get(k).and_then(|v| v.as_str()).unwrap_or_default().to_string();
    check_version(&field("format"), TRACE_FORMAT, &field("version"))?;
    let header: TraceHeader =
        serde_json::from_value(value).map_err(|e| Error::Format(format!("trace header: {e}")))?;
    Ok(TraceFile { header, entries: read_jsonl(r)? })
}

#[derive(Serialize, Deserialize)]
struct EventsFile {
    format: String,
    version: String,
    events: Vec<ReplanEvent>,
}

pub fn write_events<W: Write>(mut w: W, events: &[ReplanEvent]) -> Result<()> {
    let file = EventsFile { format: EVENTS_FORMAT.into(), version: FORMAT_VERSION.into(), events: events.to_vec() };
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_events<R: Read>(r: R) -> Result<Vec<ReplanEvent>> {
    let value: serde_json::Value = serde_json::from_reader(r)?;
    let field = |k: &str| value.get(k).and_then(|v| v.as_str()).unwrap_or_default().to_string();
    check_version(&field("format"), EVENTS_FORMAT, &field("version"))?;
    let file: EventsFile = serde_json::from_value(value).map_err(|e| Error::Format(format!("events: {e}")))?;
    Ok(file.events)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(BufReader::new(f))
}

pub fn save_scenario(path: &Path, scenario: &Scenario) -> Result<()> {
    let mut w = create(path)?;
    write_scenario(&mut w, scenario)?;
    Ok(w.flush()?)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    read_scenario(open(path)?)
}

pub fn save_trace(path: &Path, trace: &TraceFile) -> Result<()> {
    let mut w = create(path)?;
    write_trace(&mut w, trace)?;
    Ok(w.flush()?)
}

pub fn load_trace(path: &Path) -> Result<TraceFile> {
    read_trace(open(path)?)
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams, meta: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    write_checkpoint(&mut w, params, meta)?;
    Ok(w.flush()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(open(path)?)
}

pub fn save_events(path: &Path, events: &[ReplanEvent]) -> Result<()> {
    let mut w = create(path)?;
    write_events(&mut w, events)?;
    Ok(w.flush()?)
}

pub fn load_events(path: &Path) -> Result<Vec<ReplanEvent>> {
    read_events(open(path)?)
}

/// Colours and sizes of a route plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotStyle {
    pub uav_color: String,
    pub ugv_color: String,
    pub road_color: String,
    /// Fill opacity of tasks visited by the end of the trace.
    pub visited_opacity: f64,
    pub unvisited_opacity: f64,
    /// Side of the square drawing area (px), excluding the margin.
    pub size_px: f64,
    pub margin_px: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            uav_color: "#d62728".into(),
            ugv_color: "#1f77b4".into(),
            road_color: "#c8c8c8".into(),
            visited_opacity: 0.3,
            unvisited_opacity: 1.0,
            size_px: 800.0,
            margin_px: 20.0,
        }
    }
}

/// Renders a trace over its scenario as SVG 1.1.
///
/// Area coordinates map to the viewport by
/// `px = margin + x / side * size` and `py = margin + (side - y) / side * size`,
/// so north is up. Each agent gets one polyline (dashed for UAVs, solid for
/// UGVs, which follow the road); rendezvous are black circles. The trace is
/// replayed first and refused if it does not replay.
pub fn export_svg(
    scenario: &Scenario,
    team: TeamConfig,
    config: EnvConfig,
    entries: &[TraceEntry],
    style: &PlotStyle,
) -> Result<String> {
    let ep = replay_episode(scenario, team, config, entries)?;
    let state = &ep.state;
    let graph = state.graph();
    let final_scenario = state.scenario();
    let side = scenario.area_side_m;
    let px = |p: Point| {
        (style.margin_px + p.x / side * style.size_px, style.margin_px + (side - p.y) / side * style.size_px)
    };
    let full = style.size_px + 2.0 * style.margin_px;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{full}" height="{full}" fill="white"/>"#);

    let _ = writeln!(s, r#"<g id="road" stroke="{}" stroke-width="1">"#, style.road_color);
    for &[a, b] in &scenario.road.edges {
        let (x1, y1) = px(scenario.road.nodes[a]);
        let (x2, y2) = px(scenario.road.nodes[b]);
        let _ = writeln!(s, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}"/>"#);
    }
    let _ = writeln!(s, "</g>");

    // Agent paths, in agent order: UAVs then UGVs.
    let mut uav_paths: Vec<Vec<Point>> = vec![Vec::new(); state.uavs.len()];
    let mut ugv_paths: Vec<Vec<Point>> = vec![Vec::new(); state.ugvs.len()];
    let mut ugv_at: Vec<usize> = vec![MissionGraph::DEPOT; state.ugvs.len()];
    if !entries.is_empty() {
        let depot = graph.nodes[MissionGraph::DEPOT].pos;
        for p in uav_paths.iter_mut().chain(ugv_paths.iter_mut()) {
            p.push(depot);
        }
    }
    for r in ep.entries.iter().filter_map(|e| match e {
        TraceEntry::Step(r) => Some(r),
        TraceEntry::Event { .. } => None,
    }) {
        let node = r.action.node();
        let pos = graph.nodes[node].pos;
        match r.agent.kind {
            AgentKind::Uav => uav_paths[r.agent.index].push(pos),
            AgentKind::Ugv => {
                let k = r.agent.index;
                let from = graph.nodes[ugv_at[k]].road_node.expect("ground node");
                let to = graph.nodes[node].road_node.expect("ground node");
                let road = scenario
                    .road
                    .shortest_path(from, to)
                    .ok_or(Error::DisconnectedNetwork { from, to })?;
                ugv_paths[k].extend(road.into_iter().skip(1).map(|n| scenario.road.nodes[n]));
                ugv_at[k] = node;
            }
        }
    }
    let polyline = |s: &mut String, id: String, color: &str, dash: &str, pts: &[Point]| {
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline id="{id}" points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            coords.join(" ")
        );
    };
    let _ = writeln!(s, r#"<g id="routes">"#);
    for (i, p) in uav_paths.iter().enumerate().filter(|(_, p)| !p.is_empty()) {
        polyline(&mut s, format!("uav{i}"), &style.uav_color, r#" stroke-dasharray="8,5""#, p);
    }
    for (i, p) in ugv_paths.iter().enumerate().filter(|(_, p)| !p.is_empty()) {
        polyline(&mut s, format!("ugv{i}"), &style.ugv_color, "", p);
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="tasks">"#);
    for t in &final_scenario.tasks {
        let visited = state.visited[t.id];
        let opacity = if visited { style.visited_opacity } else { style.unvisited_opacity };
        let class = if visited { "task visited" } else { "task unvisited" };
        let (x, y) = px(t.pos());
        match t.kind {
            TaskKind::Aerial => {
                let _ = writeln!(
                    s,
                    r#"<circle class="{class}" data-task="{}" cx="{x:.2}" cy="{y:.2}" r="4" fill="{}" fill-opacity="{opacity}"/>"#,
                    t.id, style.uav_color
                );
            }
            TaskKind::Ground => {
                let _ = writeln!(
                    s,
                    r#"<rect class="{class}" data-task="{}" x="{:.2}" y="{:.2}" width="8" height="8" fill="{}" fill-opacity="{opacity}"/>"#,
                    t.id,
                    x - 4.0,
                    y - 4.0,
                    style.ugv_color
                );
            }
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="rendezvous" fill="none" stroke="black" stroke-width="1.5">"#);
    for r in &ep.rendezvous {
        let (x, y) = px(graph.nodes[r.node].pos);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="7"/>"#);
    }
    let _ = writeln!(s, "</g>");

    let (dx, dy) = px(scenario.depot());
    let _ = writeln!(s, r#"<rect id="depot" x="{:.2}" y="{:.2}" width="12" height="12" fill="black"/>"#, dx - 6.0, dy - 6.0);
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

/// Nodes each UAV visited, in order, for cross-checking plots.
pub fn visited_nodes(entries: &[TraceEntry]) -> Vec<usize> {
    entries
        .iter()
        .filter_map(|e| match e {
            TraceEntry::Step(r) => match r.action {
                Action::Visit(n) if r.agent.kind == AgentKind::Uav => Some(n),
                _ => None,
            },
            TraceEntry::Event { .. } => None,
        })
        .collect()
}

#[cfg(test)]
mod tests;
