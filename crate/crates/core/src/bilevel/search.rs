//! Construction and improvement heuristics for the routing model.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{decode, expand, normalize, EvrptwModel, EvrptwSolution, Tok};
use crate::error::{Error, Result};

/// GLS penalty weight as a fraction of the mean arc time.
pub const GLS_LAMBDA_FRACTION: f64 = 0.1;
/// Initial annealing temperature as a fraction of the construction cost.
pub const SA_T0_FRACTION: f64 = 0.2;
pub const SA_COOLING: f64 = 0.995;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gls,
    Tabu,
    Anneal,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gls, Method::Tabu, Method::Anneal];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gls => "gls",
            Method::Tabu => "tabu",
            Method::Anneal => "anneal",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gls" => Ok(Method::Gls),
            "tabu" | "ts" => Ok(Method::Tabu),
            "anneal" | "sa" => Ok(Method::Anneal),
            other => Err(Error::Validation(format!("unknown heuristic method '{other}'"))),
        }
    }
}

/// Search effort. The wall-clock cap is optional because it makes results
/// depend on machine speed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub iterations: usize,
    pub wall_ms: Option<u64>,
}

impl Budget {
    pub const fn iterations(iterations: usize) -> Self {
        Self { iterations, wall_ms: None }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Self::iterations(2_000)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchRun {
    pub solution: EvrptwSolution,
    pub objective_s: f64,
    pub construction_s: f64,
    pub iterations: usize,
    /// Best objective after each iteration (nonincreasing).
    pub history: Vec<f64>,
}

/// Nearest-neighbour construction. UAVs take turns extending their own
/// route with the closest task they can still bring home; a UAV that cannot
/// recharges at the destination first.
pub(crate) fn construct(model: &EvrptwModel) -> Result<Vec<Tok>> {
    model.check_feasible()?;
    let m = model.num_tasks();
    let d = model.dest();
    let cap = model.capacity;
    let fleet = model.fleet;
    let mut routes: Vec<Vec<Tok>> = vec![Vec::new(); fleet];
    let mut pos = vec![0usize; fleet];
    let mut fuel = vec![cap; fleet];
    let mut left: Vec<usize> = (1..=m).collect();
    while !left.is_empty() {
        let mut progress = false;
        for k in 0..fleet {
            if left.is_empty() {
                break;
            }
            let pick = left
                .iter()
                .enumerate()
                .filter(|(_, &j)| model.fuel(pos[k], j) + model.fuel(j, d) <= fuel[k] + 1e-9)
                .min_by(|a, b| model.time(pos[k], *a.1).total_cmp(&model.time(pos[k], *b.1)))
                .map(|(i, _)| i);
            if let Some(i) = pick {
                let j = left.remove(i);
                fuel[k] -= model.fuel(pos[k], j);
                pos[k] = j;
                routes[k].push(Tok::Task(j));
                progress = true;
            } else if !(pos[k] == d && fuel[k] == cap) {
                routes[k].push(Tok::Break);
                pos[k] = d;
                fuel[k] = cap;
                progress = true;
            }
        }
        if !progress {
            let j = left[0];
            let task = model.nodes.get(j).map_or(j - 1, |&n| n - 1);
            return Err(Error::Infeasible { task, reason: "no UAV can serve it".into() });
        }
    }
    let mut tour = Vec::new();
    for (k, r) in routes.into_iter().enumerate() {
        if k > 0 {
            tour.push(Tok::Sep);
        }
        tour.extend(r);
    }
    normalize(&mut tour);
    if decode(model, &tour, |_, _| {}).is_none() {
        return Err(Error::ContractViolation("construction produced an infeasible route".into()));
    }
    Ok(tour)
}

#[derive(Clone, Copy, Debug)]
enum Move {
    Relocate(usize, usize),
    Swap(usize, usize),
    TwoOpt(usize, usize),
    InsertBreak(usize),
    RemoveBreak(usize),
}

fn apply(tour: &[Tok], mv: Move) -> Vec<Tok> {
    let mut t = tour.to_vec();
    match mv {
        Move::Relocate(i, j) => {
            let x = t.remove(i);
            t.insert(j, x);
        }
        Move::Swap(i, j) => t.swap(i, j),
        Move::TwoOpt(i, j) => t[i..=j].reverse(),
        Move::InsertBreak(p) => t.insert(p, Tok::Break),
        Move::RemoveBreak(i) => {
            t.remove(i);
        }
    }
    t
}

/// Tokens a move relocates (used as tabu attributes).
fn moved(tour: &[Tok], mv: Move) -> [Option<Tok>; 2] {
    match mv {
        Move::Relocate(i, _) => [Some(tour[i]), None],
        Move::Swap(i, j) | Move::TwoOpt(i, j) => [Some(tour[i]), Some(tour[j])],
        Move::InsertBreak(_) | Move::RemoveBreak(_) => [None, None],
    }
}

fn neighbourhood(tour: &[Tok], break_room: bool) -> Vec<Move> {
    let n = tour.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.push(Move::Relocate(i, j));
            }
        }
        for j in i + 1..n {
            if tour[i] != tour[j] {
                out.push(Move::Swap(i, j));
            }
            if j > i + 1 {
                out.push(Move::TwoOpt(i, j));
            }
        }
        if tour[i] == Tok::Break {
            out.push(Move::RemoveBreak(i));
        }
    }
    if break_room {
        for p in 0..=n {
            out.push(Move::InsertBreak(p));
        }
    }
    out
}

fn random_move(tour: &[Tok], break_room: bool, rng: &mut ChaCha8Rng) -> Option<Move> {
    let n = tour.len();
    let kind = rng.random_range(0..5);
    match kind {
        3 if break_room => Some(Move::InsertBreak(rng.random_range(0..=n))),
        4 => {
            let breaks: Vec<usize> = (0..n).filter(|&i| tour[i] == Tok::Break).collect();
            (!breaks.is_empty()).then(|| Move::RemoveBreak(breaks[rng.random_range(0..breaks.len())]))
        }
        _ if n >= 2 => {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let (a, b) = (i.min(j), i.max(j));
            Some(match kind {
                0 => Move::Relocate(i, j),
                1 => Move::Swap(a, b),
                _ if b > a + 1 => Move::TwoOpt(a, b),
                _ => Move::Swap(a, b),
            })
        }
        _ => None,
    }
}

fn break_count(tour: &[Tok]) -> usize {
    tour.iter().filter(|&&t| t == Tok::Break).count()
}

struct Tracker {
    best: Vec<Tok>,
    best_cost: f64,
    history: Vec<f64>,
    started: Instant,
    budget: Budget,
}

impl Tracker {
    fn offer(&mut self, tour: &[Tok], cost: f64) {
        if cost < self.best_cost - 1e-12 {
            self.best_cost = cost;
            self.best = tour.to_vec();
        }
    }

    fn tick(&mut self) -> bool {
        self.history.push(self.best_cost);
        let out_of_time = self
            .budget
            .wall_ms
            .is_some_and(|ms| self.started.elapsed().as_millis() as u64 >= ms);
        self.history.len() < self.budget.iterations && !out_of_time
    }
}

/// Improves a nearest-neighbour construction with the chosen metaheuristic.
/// Deterministic for a fixed `(model, method, budget.iterations, seed)`
/// when no wall-clock cap is set.
pub fn solve_evrptw(model: &EvrptwModel, method: Method, budget: Budget, seed: u64) -> Result<SearchRun> {
    let start = construct(model)?;
    let construction_s = decode(model, &start, |_, _| {}).expect("construction is feasible");
    let mut tr = Tracker {
        best: start.clone(),
        best_cost: construction_s,
        history: Vec::with_capacity(budget.iterations),
        started: Instant::now(),
        budget,
    };
    if budget.iterations > 0 && model.num_tasks() > 0 {
        match method {
            Method::Gls => gls(model, start, &mut tr),
            Method::Tabu => tabu(model, start, &mut tr),
            Method::Anneal => anneal(model, start, &mut tr, seed),
        }
    }
    let iterations = tr.history.len();
    Ok(SearchRun {
        solution: expand(model, &tr.best),
        objective_s: tr.best_cost,
        construction_s,
        iterations,
        history: tr.history,
    })
}

fn gls(model: &EvrptwModel, mut cur: Vec<Tok>, tr: &mut Tracker) {
    let p = model.points.len();
    let lambda = GLS_LAMBDA_FRACTION * model.mean_arc_time();
    let mut penalty = vec![0u32; p * p];
    let limit = model.num_tasks();
    let augmented = |tour: &[Tok], penalty: &[u32]| -> Option<(f64, f64)> {
        let mut pen = 0u32;
        let c = decode(model, tour, |i, j| pen += penalty[i * p + j])?;
        Some((c, c + lambda * pen as f64))
    };
    let (_, mut cur_aug) = augmented(&cur, &penalty).expect("feasible start");
    loop {
        let mut best_move: Option<(f64, Vec<Tok>)> = None;
        for mv in neighbourhood(&cur, break_count(&cur) < limit) {
            let mut cand = apply(&cur, mv);
            normalize(&mut cand);
            if let Some((c, aug)) = augmented(&cand, &penalty) {
                tr.offer(&cand, c);
                if aug < cur_aug - 1e-9 && best_move.as_ref().is_none_or(|(b, _)| aug < *b) {
                    best_move = Some((aug, cand));
                }
            }
        }
        match best_move {
            Some((aug, cand)) => {
                cur = cand;
                cur_aug = aug;
            }
            None => {
                // Local optimum: penalise the arcs with the highest utility.
                let mut arcs = Vec::new();
                decode(model, &cur, |i, j| {
                    if i != j {
                        arcs.push((i, j))
                    }
                });
                let utils: Vec<f64> =
                    arcs.iter().map(|&(i, j)| model.time(i, j) / (1.0 + penalty[i * p + j] as f64)).collect();
                let top = utils.iter().copied().fold(0.0, f64::max);
                for (a, u) in arcs.iter().zip(&utils) {
                    if *u >= top - 1e-12 {
                        penalty[a.0 * p + a.1] += 1;
                    }
                }
                cur_aug = augmented(&cur, &penalty).expect("current stays feasible").1;
            }
        }
        if !tr.tick() {
            return;
        }
    }
}

fn tabu(model: &EvrptwModel, mut cur: Vec<Tok>, tr: &mut Tracker) {
    let tenure = model.num_vertices().div_ceil(2);
    let limit = model.num_tasks();
    // Iteration until which each task may not be moved.
    let mut frozen = vec![0usize; model.num_tasks() + 1];
    let mut it = 0usize;
    loop {
        it += 1;
        let mut choice: Option<(f64, Vec<Tok>, [Option<Tok>; 2])> = None;
        for mv in neighbourhood(&cur, break_count(&cur) < limit) {
            let attrs = moved(&cur, mv);
            let mut cand = apply(&cur, mv);
            normalize(&mut cand);
            let Some(c) = decode(model, &cand, |_, _| {}) else { continue };
            let is_tabu = attrs.iter().flatten().any(|t| matches!(t, Tok::Task(j) if frozen[*j] >= it));
            let aspire = c < tr.best_cost - 1e-9;
            tr.offer(&cand, c);
            if (!is_tabu || aspire) && choice.as_ref().is_none_or(|(b, _, _)| c < *b - 1e-12) {
                choice = Some((c, cand, attrs));
            }
        }
        if let Some((_, cand, attrs)) = choice {
            for t in attrs.iter().flatten() {
                if let Tok::Task(j) = t {
                    frozen[*j] = it + tenure;
                }
            }
            cur = cand;
        }
        if !tr.tick() {
            return;
        }
    }
}

fn anneal(model: &EvrptwModel, mut cur: Vec<Tok>, tr: &mut Tracker, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = model.num_tasks();
    let mut cur_cost = decode(model, &cur, |_, _| {}).expect("feasible start");
    let mut temp = SA_T0_FRACTION * cur_cost;
    loop {
        if let Some(mv) = random_move(&cur, break_count(&cur) < limit, &mut rng) {
            let mut cand = apply(&cur, mv);
            normalize(&mut cand);
            if let Some(c) = decode(model, &cand, |_, _| {}) {
                let delta = c - cur_cost;
                let accept = delta <= 0.0 || (temp > 0.0 && rng.random::<f64>() < (-delta / temp).exp());
                if accept {
                    cur = cand;
                    cur_cost = c;
                    tr.offer(&cur, cur_cost);
                }
            }
        }
        temp *= SA_COOLING;
        if !tr.tick() {
            return;
        }
    }
}
