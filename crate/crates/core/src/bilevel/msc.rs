//! Minimum set cover of task points by ground refuelling stops.

use crate::error::{Error, Result};
use crate::scenario::{Point, Scenario, TaskKind};

/// Candidate count (ground task points, depot excluded) up to which the
/// exact branch-and-bound runs.
pub const EXACT_CANDIDATE_LIMIT: usize = 20;

/// Chosen stops as mission node ids (depot = 0, task `k` = `k + 1`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cover {
    pub stops: Vec<usize>,
    pub exact: bool,
}

struct Instance {
    candidates: Vec<usize>,
    /// Bitmask over `candidates` per task.
    covers: Vec<u64>,
}

fn build(scenario: &Scenario, radius_m: f64) -> Result<Instance> {
    let mut candidates = vec![0usize];
    let mut positions = vec![scenario.depot()];
    for t in &scenario.tasks {
        if t.kind == TaskKind::Ground {
            candidates.push(t.id + 1);
            positions.push(t.pos());
        }
    }
    if candidates.len() > 64 {
        return Err(Error::SizeLimit(format!("{} refuel candidates (max 64)", candidates.len())));
    }
    let mut covers = Vec::with_capacity(scenario.tasks.len());
    for t in &scenario.tasks {
        let mask = positions
            .iter()
            .enumerate()
            .filter(|(_, p)| t.pos().dist(**p) <= radius_m)
            .fold(0u64, |m, (c, _)| m | 1 << c);
        if mask == 0 {
            return Err(Error::Infeasible {
                task: t.id,
                reason: format!("is farther than {radius_m:.1} m from every ground point"),
            });
        }
        covers.push(mask);
    }
    Ok(Instance { candidates, covers })
}

/// Fewest stops such that every task lies within `radius_m` of one of them.
///
/// Exact branch-and-bound when there are at most [`EXACT_CANDIDATE_LIMIT`]
/// ground task points, greedy with redundancy pruning and 2-for-1 swaps
/// otherwise.
pub fn solve_msc(scenario: &Scenario, radius_m: f64) -> Result<Cover> {
    let inst = build(scenario, radius_m)?;
    let exact = inst.candidates.len() - 1 <= EXACT_CANDIDATE_LIMIT;
    let chosen = if exact { exact_cover(&inst) } else { greedy_swap(&inst) };
    Ok(Cover { stops: to_nodes(&inst, chosen), exact })
}

/// Greedy-plus-swap cover regardless of size (exposed for cross-checks).
pub fn solve_msc_greedy(scenario: &Scenario, radius_m: f64) -> Result<Cover> {
    let inst = build(scenario, radius_m)?;
    Ok(Cover { stops: to_nodes(&inst, greedy_swap(&inst)), exact: false })
}

fn to_nodes(inst: &Instance, chosen: u64) -> Vec<usize> {
    (0..inst.candidates.len())
        .filter(|c| chosen >> c & 1 == 1)
        .map(|c| inst.candidates[c])
        .collect()
}

fn covers_all(inst: &Instance, chosen: u64) -> bool {
    inst.covers.iter().all(|&m| m & chosen != 0)
}

fn greedy(inst: &Instance) -> u64 {
    let mut chosen = 0u64;
    let mut uncovered: Vec<u64> = inst.covers.clone();
    while !uncovered.is_empty() {
        let best = (0..inst.candidates.len())
            .max_by_key(|&c| (uncovered.iter().filter(|&&m| m >> c & 1 == 1).count(), std::cmp::Reverse(c)))
            .expect("nonempty candidates");
        chosen |= 1 << best;
        uncovered.retain(|&m| m >> best & 1 == 0);
    }
    chosen
}

fn prune(inst: &Instance, mut chosen: u64) -> u64 {
    for c in (0..inst.candidates.len()).rev() {
        let without = chosen & !(1 << c);
        if chosen >> c & 1 == 1 && covers_all(inst, without) {
            chosen = without;
        }
    }
    chosen
}

fn greedy_swap(inst: &Instance) -> u64 {
    let n = inst.candidates.len();
    let mut chosen = prune(inst, greedy(inst));
    'improve: loop {
        let set: Vec<usize> = (0..n).filter(|c| chosen >> c & 1 == 1).collect();
        for (i, &a) in set.iter().enumerate() {
            for &b in &set[i + 1..] {
                let base = chosen & !(1 << a) & !(1 << b);
                for c in 0..n {
                    if base >> c & 1 == 0 && covers_all(inst, base | 1 << c) {
                        chosen = prune(inst, base | 1 << c);
                        continue 'improve;
                    }
                }
            }
        }
        return chosen;
    }
}

fn exact_cover(inst: &Instance) -> u64 {
    let mut best = prune(inst, greedy(inst));
    let mut best_count = best.count_ones();
    let max_cover = (0..inst.candidates.len())
        .map(|c| inst.covers.iter().filter(|&&m| m >> c & 1 == 1).count())
        .max()
        .unwrap_or(1)
        .max(1);
    branch(inst, 0, &mut best, &mut best_count, max_cover);
    best
}

fn branch(inst: &Instance, chosen: u64, best: &mut u64, best_count: &mut u32, max_cover: usize) {
    let uncovered: Vec<u64> = inst.covers.iter().copied().filter(|&m| m & chosen == 0).collect();
    if uncovered.is_empty() {
        if chosen.count_ones() < *best_count {
            *best = chosen;
            *best_count = chosen.count_ones();
        }
        return;
    }
    let bound = chosen.count_ones() as usize + uncovered.len().div_ceil(max_cover);
    if bound >= *best_count as usize {
        return;
    }
    // Branch on the hardest task: the one with the fewest covering stops.
    let pivot = *uncovered.iter().min_by_key(|m| m.count_ones()).expect("nonempty");
    for c in 0..inst.candidates.len() {
        if pivot >> c & 1 == 1 {
            branch(inst, chosen | 1 << c, best, best_count, max_cover);
        }
    }
}

/// Assigns each task to its nearest stop within `radius_m` (ties to the
/// lower node id).
pub fn assign_nearest(scenario: &Scenario, stops: &[usize], radius_m: f64) -> Result<Vec<usize>> {
    let pos = |node: usize| -> Point {
        if node == 0 {
            scenario.depot()
        } else {
            scenario.tasks[node - 1].pos()
        }
    };
    scenario
        .tasks
        .iter()
        .map(|t| {
            stops
                .iter()
                .map(|&s| (t.pos().dist(pos(s)), s))
                .filter(|&(d, _)| d <= radius_m)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, s)| s)
                .ok_or_else(|| Error::Infeasible { task: t.id, reason: "is not covered by any stop".into() })
        })
        .collect()
}
