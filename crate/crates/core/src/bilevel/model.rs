//! Per-leg energy-constrained routing model with time windows.
//!
//! Vertices are numbered `0` = source stop `S`, `1..=m` = tasks and
//! `m+1 .. m+copies` = duplicated destination stops `X_r`. Physical points
//! collapse every copy onto index `m + 1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::MissionGraph;
use crate::error::{Error, Result};
use crate::scenario::{FuelModel, Point};

/// Absolute tolerance on times (s) and energy (kJ) used by the validator.
pub const VALIDATION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EvrptwModel {
    /// Mission node of each physical point (source, tasks, destination),
    /// empty for synthetic models.
    pub nodes: Vec<usize>,
    pub points: Vec<Point>,
    pub fleet: usize,
    /// Number of destination copies `|X_r|`.
    pub copies: usize,
    pub capacity: f64,
    /// Window lower bound at every destination copy (s).
    pub t_r: f64,
    /// Time at which the UAVs leave the source (s).
    pub t_start: f64,
    pub recharge_time_s: f64,
    /// Big-M for the fuel linking constraint (kJ).
    pub l1: f64,
    /// Big-M for the time linking constraint (s).
    pub l2: f64,
    time: Vec<f64>,
    fuel: Vec<f64>,
}

impl EvrptwModel {
    /// Builds a model from coordinates: `source`, the task points and `dest`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_points(
        source: Point,
        tasks: &[Point],
        dest: Point,
        fleet: usize,
        fuel: &FuelModel,
        v_a: f64,
        t_r: f64,
        t_start: f64,
        recharge_time_s: f64,
    ) -> Self {
        let mut points = Vec::with_capacity(tasks.len() + 2);
        points.push(source);
        points.extend_from_slice(tasks);
        points.push(dest);
        let p = points.len();
        let mut time = vec![0.0; p * p];
        let mut cost = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                let d = points[i].dist(points[j]);
                time[i * p + j] = d / v_a;
                cost[i * p + j] = fuel.fuel_cost(v_a, d);
            }
        }
        let m = tasks.len();
        let mean_leg = if p > 1 { time.iter().sum::<f64>() / (p * (p - 1)) as f64 } else { 0.0 };
        Self {
            nodes: Vec::new(),
            points,
            fleet,
            copies: fleet + m,
            capacity: fuel.capacity_kj,
            t_r,
            t_start,
            recharge_time_s,
            l1: fuel.capacity_kj,
            l2: 4.0 * m.max(1) as f64 * mean_leg.max(1.0),
            time,
            fuel: cost,
        }
    }

    /// Model for one leg of the mission graph.
    pub fn for_leg(graph: &MissionGraph, source: usize, dest: usize, tasks: &[usize], t_r: f64, t_start: f64) -> Self {
        let pts: Vec<Point> = tasks.iter().map(|&n| graph.nodes[n].pos).collect();
        let mut model = Self::from_points(
            graph.nodes[source].pos,
            &pts,
            graph.nodes[dest].pos,
            graph.team.num_uavs,
            &graph.fuel,
            graph.team.v_a,
            t_r,
            t_start,
            graph.team.recharge_time_s,
        );
        let mut nodes = vec![source];
        nodes.extend_from_slice(tasks);
        nodes.push(dest);
        model.nodes = nodes;
        model
    }

    pub fn num_tasks(&self) -> usize {
        self.points.len() - 2
    }

    pub fn num_vertices(&self) -> usize {
        1 + self.num_tasks() + self.copies
    }

    /// Physical index of the destination.
    pub fn dest(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_copy(&self, v: usize) -> bool {
        v > self.num_tasks() && v < self.num_vertices()
    }

    pub fn is_task(&self, v: usize) -> bool {
        (1..=self.num_tasks()).contains(&v)
    }

    /// Physical point of vertex `v`.
    pub fn phys(&self, v: usize) -> usize {
        v.min(self.dest())
    }

    /// Travel time between physical points.
    pub fn time(&self, i: usize, j: usize) -> f64 {
        self.time[i * self.points.len() + j]
    }

    /// Energy between physical points.
    pub fn fuel(&self, i: usize, j: usize) -> f64 {
        self.fuel[i * self.points.len() + j]
    }

    pub fn mean_arc_time(&self) -> f64 {
        let p = self.points.len();
        if p < 2 {
            return 0.0;
        }
        self.time.iter().sum::<f64>() / (p * (p - 1)) as f64
    }

    /// Checks that every task can be served at all: reachable from the
    /// destination and back on one battery, or directly from the source.
    /// Also requires the plain source-to-destination hop to be flyable.
    pub fn check_feasible(&self) -> Result<()> {
        let d = self.dest();
        if self.fuel(0, d) > self.capacity + FUEL_EPS {
            return Err(Error::Validation(format!(
                "leg of {:.0} m between refuel stops exceeds the UAV range",
                self.points[0].dist(self.points[d])
            )));
        }
        for j in 1..=self.num_tasks() {
            let from_dest = self.fuel(d, j) + self.fuel(j, d);
            let from_source = self.fuel(0, j) + self.fuel(j, d);
            if from_dest.min(from_source) > self.capacity + FUEL_EPS {
                let task = self.nodes.get(j).map_or(j - 1, |&n| n - 1);
                return Err(Error::Infeasible { task, reason: "cannot be reached and left on one battery".into() });
            }
        }
        Ok(())
    }
}

pub(crate) const FUEL_EPS: f64 = 1e-9;

/// Search representation: all routes laid end to end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tok {
    Task(usize),
    /// Intermediate recharge at a destination copy.
    Break,
    /// Boundary between two UAV routes.
    Sep,
}

/// Total travel time of a giant tour, or `None` if it breaks a battery
/// limit or uses more copies than the model has. `arc` is called for every
/// physical arc taken.
pub(crate) fn decode(model: &EvrptwModel, tour: &[Tok], mut arc: impl FnMut(usize, usize)) -> Option<f64> {
    let d = model.dest();
    let cap = model.capacity;
    let mut pos = 0;
    let mut fuel = cap;
    let mut cost = 0.0;
    let mut copies = 0;
    let mut leg = |pos: &mut usize, fuel: &mut f64, to: usize| -> bool {
        let f = model.fuel(*pos, to);
        if f > *fuel + FUEL_EPS {
            return false;
        }
        *fuel -= f;
        cost += model.time(*pos, to);
        arc(*pos, to);
        *pos = to;
        true
    };
    for &t in tour.iter().chain(std::iter::once(&Tok::Sep)) {
        match t {
            Tok::Task(j) => {
                if !leg(&mut pos, &mut fuel, j) {
                    return None;
                }
            }
            Tok::Break | Tok::Sep => {
                if !leg(&mut pos, &mut fuel, d) {
                    return None;
                }
                copies += 1;
                fuel = cap;
                if t == Tok::Sep {
                    pos = 0;
                }
            }
        }
    }
    (copies <= model.copies).then_some(cost)
}

/// Drops recharges that are immediately followed by another recharge or
/// by the end of a route. They add no travel but consume copies.
pub(crate) fn normalize(tour: &mut Vec<Tok>) {
    let mut out = Vec::with_capacity(tour.len());
    for (i, &t) in tour.iter().enumerate() {
        if t == Tok::Break && matches!(tour.get(i + 1), None | Some(Tok::Break) | Some(Tok::Sep)) {
            continue;
        }
        out.push(t);
    }
    *tour = out;
}

/// Per-UAV vertex sequences with arrival times and battery levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvrptwSolution {
    pub routes: Vec<Vec<usize>>,
    /// Arrival time at each route vertex (s).
    pub arrival: Vec<Vec<f64>>,
    /// Battery on arrival (kJ); full at the source and after each copy.
    pub fuel: Vec<Vec<f64>>,
}

impl EvrptwSolution {
    /// Sum of arc travel times.
    pub fn objective(&self, model: &EvrptwModel) -> f64 {
        self.routes
            .iter()
            .flat_map(|r| r.windows(2))
            .map(|w| model.time(model.phys(w[0]), model.phys(w[1])))
            .sum()
    }

    /// Splits each route at its copies: `(visited task vertices, ends at copy)`.
    pub fn sorties(&self, model: &EvrptwModel) -> Vec<Vec<Vec<usize>>> {
        self.routes
            .iter()
            .map(|r| {
                let mut out = Vec::new();
                let mut cur = Vec::new();
                for &v in &r[1..] {
                    if model.is_copy(v) {
                        out.push(std::mem::take(&mut cur));
                    } else {
                        cur.push(v);
                    }
                }
                out
            })
            .collect()
    }
}

/// Expands a giant tour into timed routes. Copies are numbered in order of
/// use; arrival at a copy waits for the window, then recharging takes `T_R`.
pub(crate) fn expand(model: &EvrptwModel, tour: &[Tok]) -> EvrptwSolution {
    let m = model.num_tasks();
    let d = model.dest();
    let mut next_copy = m + 1;
    let mut routes = Vec::with_capacity(model.fleet);
    let mut arrival = Vec::with_capacity(model.fleet);
    let mut fuel = Vec::with_capacity(model.fleet);
    for chunk in tour.split(|&t| t == Tok::Sep) {
        let mut r = vec![0];
        let mut a = vec![model.t_start];
        let mut f = vec![model.capacity];
        let (mut pos, mut t, mut e) = (0, model.t_start, model.capacity);
        for &tok in chunk.iter().chain(std::iter::once(&Tok::Break)) {
            match tok {
                Tok::Task(j) => {
                    t += model.time(pos, j);
                    e -= model.fuel(pos, j);
                    pos = j;
                    r.push(j);
                    a.push(t);
                    f.push(e);
                }
                _ => {
                    let arrive = (t + model.time(pos, d)).max(model.t_r);
                    r.push(next_copy);
                    next_copy += 1;
                    a.push(arrive);
                    f.push(model.capacity);
                    t = arrive + model.recharge_time_s;
                    e = model.capacity;
                    pos = d;
                }
            }
        }
        routes.push(r);
        arrival.push(a);
        fuel.push(f);
    }
    EvrptwSolution { routes, arrival, fuel }
}

/// Constraint families of the routing model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    Eq2,
    Eq3,
    Eq4,
    Eq5,
    Eq6,
    Eq7,
    Eq8,
    Eq9,
    Eq10,
    Eq11,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tag: Constraint,
    pub vertex: usize,
    pub detail: String,
}

/// Lists every violated constraint instance; empty means the solution is
/// feasible within [`VALIDATION_TOL`].
pub fn validate_evrptw(model: &EvrptwModel, sol: &EvrptwSolution) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |tag, vertex, detail: String| out.push(Violation { tag, vertex, detail });
    let tol = VALIDATION_TOL;
    let nv = model.num_vertices();
    let cap = model.capacity;

    if sol.routes.len() != model.fleet {
        push(Constraint::Eq9, 0, format!("{} routes for a fleet of {}", sol.routes.len(), model.fleet));
    }
    let mut task_count = vec![0usize; model.num_tasks() + 1];
    let mut copy_used = vec![false; nv];
    for (k, route) in sol.routes.iter().enumerate() {
        let (arr, fuel) = match (sol.arrival.get(k), sol.fuel.get(k)) {
            (Some(a), Some(f)) if a.len() == route.len() && f.len() == route.len() => (a, f),
            _ => {
                push(Constraint::Eq7, 0, format!("route {k}: times or fuel missing"));
                continue;
            }
        };
        if route.first() != Some(&0) {
            push(Constraint::Eq9, route.first().copied().unwrap_or(0), format!("route {k} does not leave the source"));
            continue;
        }
        match route.last() {
            Some(&v) if model.is_copy(v) => {}
            _ => push(Constraint::Eq10, *route.last().unwrap_or(&0), format!("route {k} does not end at a refuel copy")),
        }
        for (pos, &v) in route.iter().enumerate() {
            if v >= nv {
                push(Constraint::Eq8, v, format!("route {k}: unknown vertex"));
            } else if pos > 0 && v == 0 {
                push(Constraint::Eq8, v, format!("route {k} re-enters the source"));
            } else if model.is_task(v) {
                task_count[v] += 1;
            } else if model.is_copy(v) {
                if copy_used[v] {
                    push(Constraint::Eq8, v, "refuel copy entered more than once".into());
                }
                copy_used[v] = true;
            }
        }
        if route.iter().any(|&v| v >= nv) {
            continue;
        }
        for w in 1..route.len() {
            let (i, j) = (route[w - 1], route[w]);
            let (pi, pj) = (model.phys(i), model.phys(j));
            let depart_fuel = if i == 0 || model.is_copy(i) { cap } else { fuel[w - 1] };
            let need = model.fuel(pi, pj);
            if need > depart_fuel + tol {
                push(Constraint::Eq11, j, format!("arc needs {need:.6} kJ with {depart_fuel:.6} kJ left"));
            }
            if model.is_task(j) {
                if fuel[w] > depart_fuel - need + tol {
                    push(Constraint::Eq5, j, format!("battery {:.6} kJ exceeds {:.6} kJ", fuel[w], depart_fuel - need));
                }
                if fuel[w] < -tol || fuel[w] > cap + tol {
                    push(Constraint::Eq4, j, format!("battery {:.6} kJ outside [0, {cap}]", fuel[w]));
                }
            } else if model.is_copy(j) {
                if (fuel[w] - cap).abs() > tol {
                    push(Constraint::Eq3, j, format!("battery {:.6} kJ after recharge, expected {cap}", fuel[w]));
                }
                if arr[w] < model.t_r - tol {
                    push(Constraint::Eq6, j, format!("arrives {:.6} s before the window opens", model.t_r - arr[w]));
                }
            }
            let service = if model.is_copy(i) { model.recharge_time_s } else { 0.0 };
            let earliest = arr[w - 1] + service + model.time(pi, pj);
            if arr[w] < earliest - tol {
                push(Constraint::Eq7, j, format!("arrives {:.6} s too early", earliest - arr[w]));
            }
        }
    }
    for (v, &c) in task_count.iter().enumerate().skip(1) {
        if c != 1 {
            push(Constraint::Eq2, v, format!("visited {c} times"));
        }
    }
    out
}

/// Exhaustive optimum for a single-UAV model: every task order times every
/// choice of recharging before each task.
pub fn brute_force_evrptw(model: &EvrptwModel) -> Result<(f64, EvrptwSolution)> {
    let m = model.num_tasks();
    if model.fleet != 1 || m > 8 {
        return Err(Error::SizeLimit(format!("{m} tasks / {} UAVs (max 8 / 1)", model.fleet)));
    }
    let mut best: Option<(f64, Vec<Tok>)> = None;
    let mut perm: Vec<usize> = (1..=m).collect();
    let mut consider = |perm: &[usize]| {
        for breaks in 0u32..1 << m {
            let mut tour = Vec::with_capacity(2 * m);
            for (i, &j) in perm.iter().enumerate() {
                if breaks >> i & 1 == 1 {
                    tour.push(Tok::Break);
                }
                tour.push(Tok::Task(j));
            }
            if let Some(c) = decode(model, &tour, |_, _| {}) {
                if best.as_ref().is_none_or(|(b, _)| c < *b) {
                    best = Some((c, tour));
                }
            }
        }
    };
    permute(&mut perm, 0, &mut consider);
    let (cost, tour) = best.ok_or_else(|| Error::Infeasible {
        task: model.nodes.get(1).map_or(0, |&n| n.saturating_sub(1)),
        reason: "no feasible single-UAV route exists".into(),
    })?;
    Ok((cost, expand(model, &tour)))
}

fn permute(items: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, f);
        items.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_model(tasks: &[f64], fleet: usize) -> EvrptwModel {
        let pts: Vec<Point> = tasks.iter().map(|&x| Point::new(x, 0.0)).collect();
        EvrptwModel::from_points(
            Point::new(0.0, 0.0),
            &pts,
            Point::new(0.0, 0.0),
            fleet,
            &FuelModel::default(),
            10.0,
            500.0,
            0.0,
            300.0,
        )
    }

    #[test]
    fn legal_route_validates() {
        let model = line_model(&[1000.0, 2000.0], 1);
        let tour = [Tok::Task(1), Tok::Task(2)];
        let cost = decode(&model, &tour, |_, _| {}).unwrap();
        assert!((cost - 400.0).abs() < 1e-9);
        let sol = expand(&model, &tour);
        assert_eq!(sol.routes, vec![vec![0, 1, 2, 3]]);
        assert!(validate_evrptw(&model, &sol).is_empty());
        assert!((sol.objective(&model) - 400.0).abs() < 1e-9);
        // Arrival at the copy waits for the window.
        assert_eq!(sol.arrival[0][3], 500.0);
    }

    #[test]
    fn skipped_task_is_eq2() {
        let model = line_model(&[1000.0, 2000.0], 1);
        let sol = expand(&model, &[Tok::Task(1)]);
        let v = validate_evrptw(&model, &sol);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].tag, v[0].vertex), (Constraint::Eq2, 2));
    }

    #[test]
    fn early_arrival_is_eq6_with_slack() {
        let model = line_model(&[1000.0], 1);
        let mut sol = expand(&model, &[Tok::Task(1)]);
        sol.arrival[0][2] = 450.0;
        let v = validate_evrptw(&model, &sol);
        assert!(v.iter().any(|x| x.tag == Constraint::Eq6 && x.detail.starts_with("arrives 50.000000")));
    }

    #[test]
    fn over_long_sortie_is_eq11() {
        // 8 km out and back is beyond one battery (about 14.5 km range).
        let model = line_model(&[8000.0], 1);
        assert!(decode(&model, &[Tok::Task(1)], |_, _| {}).is_none());
        let sol = expand(&model, &[Tok::Task(1)]);
        let v = validate_evrptw(&model, &sol);
        assert!(v.iter().any(|x| x.tag == Constraint::Eq11));
        assert!(model.check_feasible().is_err());
    }

    #[test]
    fn brute_force_forced_recharge() {
        // Two tasks at 6 km on opposite sides: each needs its own sortie.
        let model = line_model(&[6000.0, -6000.0], 1);
        let (cost, sol) = brute_force_evrptw(&model).unwrap();
        assert!((cost - 2400.0).abs() < 1e-9);
        assert_eq!(sol.routes[0].len(), 5);
        assert!(validate_evrptw(&model, &sol).is_empty());
    }

    #[test]
    fn normalize_drops_idle_recharges() {
        let mut t = vec![Tok::Break, Tok::Break, Tok::Task(1), Tok::Break, Tok::Sep, Tok::Task(2), Tok::Break];
        normalize(&mut t);
        assert_eq!(t, vec![Tok::Break, Tok::Task(1), Tok::Sep, Tok::Task(2)]);
    }

    #[test]
    fn copies_scale_with_tasks() {
        let model = line_model(&[1000.0, 2000.0, 3000.0], 2);
        assert_eq!(model.copies, 5);
        assert_eq!(model.num_vertices(), 9);
    }
}
