//! Ordering refuelling stops into a closed UGV tour from the depot.

/// Stop count (depot excluded) up to which Held-Karp is used.
pub const HELD_KARP_LIMIT: usize = 15;

/// Closed tour length through `route` (returning to `route[0]`).
pub fn tour_length(route: &[usize], dist: impl Fn(usize, usize) -> f64) -> f64 {
    if route.len() < 2 {
        return 0.0;
    }
    let legs: f64 = route.windows(2).map(|w| dist(w[0], w[1])).sum();
    legs + dist(route[route.len() - 1], route[0])
}

/// Orders `stops` into a closed tour starting at `depot`.
///
/// Exact for up to [`HELD_KARP_LIMIT`] stops, nearest neighbour followed by
/// 2-opt above that. The depot is dropped from `stops` if present.
pub fn solve_tsp_stops(stops: &[usize], depot: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let rest: Vec<usize> = stops.iter().copied().filter(|&s| s != depot).collect();
    let mut route = vec![depot];
    if rest.len() <= HELD_KARP_LIMIT {
        route.extend(held_karp(depot, &rest, &dist));
    } else {
        route.extend(nearest_neighbour(depot, &rest, &dist));
        two_opt(&mut route, &dist);
    }
    route
}

/// Nearest neighbour plus 2-opt regardless of size.
pub fn solve_tsp_heuristic(stops: &[usize], depot: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let rest: Vec<usize> = stops.iter().copied().filter(|&s| s != depot).collect();
    let mut route = vec![depot];
    route.extend(nearest_neighbour(depot, &rest, &dist));
    two_opt(&mut route, &dist);
    route
}

fn held_karp(depot: usize, rest: &[usize], dist: &impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let n = rest.len();
    if n == 0 {
        return Vec::new();
    }
    let full = 1usize << n;
    let mut cost = vec![f64::INFINITY; full * n];
    let mut parent = vec![usize::MAX; full * n];
    for j in 0..n {
        cost[(1 << j) * n + j] = dist(depot, rest[j]);
    }
    for set in 1..full {
        for j in 0..n {
            if set >> j & 1 == 0 {
                continue;
            }
            let here = cost[set * n + j];
            if !here.is_finite() {
                continue;
            }
            for k in 0..n {
                if set >> k & 1 == 1 {
                    continue;
                }
                let next = set | 1 << k;
                let c = here + dist(rest[j], rest[k]);
                if c < cost[next * n + k] {
                    cost[next * n + k] = c;
                    parent[next * n + k] = j;
                }
            }
        }
    }
    let last_set = full - 1;
    let mut last = (0..n)
        .min_by(|&a, &b| {
            let ca = cost[last_set * n + a] + dist(rest[a], depot);
            let cb = cost[last_set * n + b] + dist(rest[b], depot);
            ca.total_cmp(&cb)
        })
        .expect("n > 0");
    let mut order = Vec::with_capacity(n);
    let mut set = last_set;
    loop {
        order.push(rest[last]);
        let p = parent[set * n + last];
        set &= !(1 << last);
        if p == usize::MAX {
            break;
        }
        last = p;
    }
    order.reverse();
    order
}

fn nearest_neighbour(depot: usize, rest: &[usize], dist: &impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut left = rest.to_vec();
    let mut out = Vec::with_capacity(left.len());
    let mut here = depot;
    while !left.is_empty() {
        let (i, _) = left
            .iter()
            .enumerate()
            .min_by(|a, b| dist(here, *a.1).total_cmp(&dist(here, *b.1)))
            .expect("nonempty");
        here = left.remove(i);
        out.push(here);
    }
    out
}

fn two_opt(route: &mut [usize], dist: &impl Fn(usize, usize) -> f64) {
    let n = route.len();
    if n < 4 {
        return;
    }
    let mut improved = true;
    while improved {
        improved = false;
        for i in 1..n - 1 {
            for j in i + 1..n {
                let a = route[i - 1];
                let b = route[i];
                let c = route[j];
                let d = route[(j + 1) % n];
                let delta = dist(a, c) + dist(b, d) - dist(a, b) - dist(c, d);
                if delta < -1e-9 {
                    route[i..=j].reverse();
                    improved = true;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point::new(rng.random_range(0.0..20_000.0), rng.random_range(0.0..20_000.0)))
            .collect()
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn single_stop() {
        assert_eq!(solve_tsp_stops(&[4], 0, |a, b| (a as f64 - b as f64).abs()), vec![0, 4]);
        assert_eq!(solve_tsp_stops(&[], 0, |_, _| 1.0), vec![0]);
    }

    #[test]
    fn held_karp_matches_enumeration() {
        for seed in 0..20 {
            let pts = random_points(6, seed);
            let d = |a: usize, b: usize| pts[a].dist(pts[b]);
            let stops: Vec<usize> = (1..6).collect();
            let route = solve_tsp_stops(&stops, 0, d);
            assert_eq!(route[0], 0);
            let best = permutations(&stops)
                .into_iter()
                .map(|p| {
                    let mut r = vec![0];
                    r.extend(p);
                    tour_length(&r, d)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((tour_length(&route, d) - best).abs() < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn held_karp_never_longer_than_two_opt() {
        for seed in 0..10 {
            let pts = random_points(13, seed);
            let d = |a: usize, b: usize| pts[a].dist(pts[b]);
            let stops: Vec<usize> = (1..13).collect();
            let exact = tour_length(&solve_tsp_stops(&stops, 0, d), d);
            let heur = tour_length(&solve_tsp_heuristic(&stops, 0, d), d);
            assert!(exact <= heur + 1e-9);
        }
    }
}
