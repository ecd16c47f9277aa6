//! Problem instances: task points, the road network, team and energy model,
//! plus the seeded instance generator.

use std::collections::HashMap;

use petgraph::graph::{NodeIndex, UnGraph};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the random generator behind every seeded routine. Written into
/// scenario and checkpoint files so runs can be replayed elsewhere.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Side of the square operational area (m).
pub const AREA_SIDE_M: f64 = 20_000.0;
/// Radius around ground points inside which aerial points are sampled (m).
pub const SAMPLING_RADIUS_M: f64 = 7_000.0;
/// Spread of the centred gaussian task distribution (m).
pub const GAUSSIAN_SIGMA_M: f64 = 3_000.0;
/// Scale of the centred rayleigh task distribution (m).
pub const RAYLEIGH_SIGMA_M: f64 = 5_000.0;

const MAX_REJECTIONS: usize = 10_000;

/// A 2D position in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Aerial,
    Ground,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub kind: TaskKind,
}

impl TaskPoint {
    pub fn pos(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Cubic power profile of the UAV and its battery capacity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuelModel {
    pub c3: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub capacity_kj: f64,
}

impl Default for FuelModel {
    fn default() -> Self {
        Self {
            c3: 0.0461,
            c2: -0.5834,
            c1: -1.8761,
            c0: 229.6,
            capacity_kj: 287.7,
        }
    }
}

/// Result of [`FuelModel::power_and_fuel`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FuelReport {
    pub power_w: f64,
    pub fuel_cost_kj: f64,
    pub endurance_s: f64,
}

impl FuelModel {
    /// Power draw in watts at airspeed `v` (m/s).
    pub fn power(&self, v: f64) -> f64 {
        ((self.c3 * v + self.c2) * v + self.c1) * v + self.c0
    }

    /// Energy (kJ) needed to fly `distance` metres at constant speed `v`.
    pub fn fuel_cost(&self, v: f64, distance: f64) -> f64 {
        self.power(v) * (distance / v) / 1000.0
    }

    /// Seconds of flight on a full battery at speed `v`.
    pub fn endurance_s(&self, v: f64) -> f64 {
        self.capacity_kj * 1000.0 / self.power(v)
    }

    pub fn power_and_fuel(&self, v: f64, distance: f64) -> Result<FuelReport> {
        if !(v > 0.0) {
            return Err(Error::InvalidSpeed(v));
        }
        if !(distance >= 0.0) {
            return Err(Error::Validation(format!("negative distance {distance}")));
        }
        Ok(FuelReport {
            power_w: self.power(v),
            fuel_cost_kj: self.fuel_cost(v, distance),
            endurance_s: self.endurance_s(v),
        })
    }

    /// Half of the flight range on a full battery: every task must lie this
    /// close to a refuelling point for an out-and-back sortie to exist.
    pub fn coverage_radius_m(&self, v: f64) -> f64 {
        0.5 * self.endurance_s(v) * v
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_kj > 0.0) {
            return Err(Error::Validation("fuel capacity must be positive".into()));
        }
        let mut v = 0.0;
        while v <= 20.0 + 1e-9 {
            if !(self.power(v) > 0.0) {
                return Err(Error::Validation(format!("power profile non-positive at {v} m/s")));
            }
            v += 0.1;
        }
        Ok(())
    }
}

/// Team composition and kinematics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamConfig {
    pub num_uavs: usize,
    pub num_ugvs: usize,
    pub v_a: f64,
    pub v_g: f64,
    /// Fixed duration of one UAV recharge on a UGV (s).
    pub recharge_time_s: f64,
}

impl Default for TeamConfig {
    fn default() -> Self {
        Self {
            num_uavs: 1,
            num_ugvs: 1,
            v_a: 10.0,
            v_g: 4.5,
            recharge_time_s: 300.0,
        }
    }
}

impl TeamConfig {
    pub fn new(num_uavs: usize, num_ugvs: usize) -> Self {
        Self {
            num_uavs,
            num_ugvs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_uavs == 0 || self.num_ugvs == 0 {
            return Err(Error::Validation("team needs at least one UAV and one UGV".into()));
        }
        if !(self.v_g > 0.0) {
            return Err(Error::InvalidSpeed(self.v_g));
        }
        if !(self.v_a > self.v_g) {
            return Err(Error::Validation(format!(
                "UAV speed {} must exceed UGV speed {}",
                self.v_a, self.v_g
            )));
        }
        if !(self.recharge_time_s >= 0.0) {
            return Err(Error::Validation("recharge time must be non-negative".into()));
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.num_uavs + self.num_ugvs
    }
}

/// Undirected road graph. Edge lengths are the Euclidean distance between
/// their endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub nodes: Vec<Point>,
    pub edges: Vec<[usize; 2]>,
}

impl RoadNetwork {
    /// The fixed generation network: a 9x9 grid at 2.5 km pitch plus a
    /// 16-node ring road of radius 6 km, each ring node tied to its nearest
    /// grid node. Node 0 is the centre of the area and hosts the depot.
    pub fn grid_ring(area_side_m: f64) -> Self {
        const GRID: usize = 9;
        const RING: usize = 16;
        let pitch = area_side_m / (GRID - 1) as f64;
        let centre = (GRID / 2, GRID / 2);

        let mut nodes = Vec::with_capacity(GRID * GRID + RING);
        let mut grid_index = HashMap::new();
        grid_index.insert(centre, 0);
        nodes.push(Point::new(centre.0 as f64 * pitch, centre.1 as f64 * pitch));
        for i in 0..GRID {
            for j in 0..GRID {
                if (i, j) != centre {
                    grid_index.insert((i, j), nodes.len());
                    nodes.push(Point::new(i as f64 * pitch, j as f64 * pitch));
                }
            }
        }
        let mut edges = Vec::new();
        for i in 0..GRID {
            for j in 0..GRID {
                let a = grid_index[&(i, j)];
                if i + 1 < GRID {
                    edges.push([a, grid_index[&(i + 1, j)]]);
                }
                if j + 1 < GRID {
                    edges.push([a, grid_index[&(i, j + 1)]]);
                }
            }
        }
        let grid_count = nodes.len();
        let mid = area_side_m / 2.0;
        let radius = 0.3 * area_side_m;
        for k in 0..RING {
            // Offset by half a step so ring nodes never coincide with grid nodes.
            let angle = (k as f64 + 0.5) * std::f64::consts::TAU / RING as f64;
            let p = Point::new(mid + radius * angle.cos(), mid + radius * angle.sin());
            let idx = nodes.len();
            nodes.push(p);
            let nearest = (0..grid_count)
                .min_by(|&a, &b| nodes[a].dist(p).total_cmp(&nodes[b].dist(p)))
                .expect("grid is nonempty");
            edges.push([idx, nearest]);
            if k > 0 {
                edges.push([idx - 1, idx]);
            }
        }
        edges.push([grid_count + RING - 1, grid_count]);
        Self { nodes, edges }
    }

    pub fn edge_length(&self, edge: [usize; 2]) -> f64 {
        self.nodes[edge[0]].dist(self.nodes[edge[1]])
    }

    fn graph(&self) -> UnGraph<(), f64> {
        let mut g = UnGraph::with_capacity(self.nodes.len(), self.edges.len());
        for _ in &self.nodes {
            g.add_node(());
        }
        for &e in &self.edges {
            g.add_edge(NodeIndex::new(e[0]), NodeIndex::new(e[1]), self.edge_length(e));
        }
        g
    }

    /// Shortest-path lengths from `source` to every node (`INFINITY` when
    /// unreachable).
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let g = self.graph();
        let found = petgraph::algo::dijkstra(&g, NodeIndex::new(source), None, |e| *e.weight());
        let mut out = vec![f64::INFINITY; self.nodes.len()];
        for (n, d) in found {
            out[n.index()] = d;
        }
        out
    }

    /// Shortest-path length between two road nodes.
    pub fn path_length(&self, from: usize, to: usize) -> Result<f64> {
        let d = self.distances_from(from)[to];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::DisconnectedNetwork { from, to })
        }
    }

    /// Road nodes along a shortest path from `from` to `to`, both included.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let g = self.graph();
        petgraph::algo::astar(&g, NodeIndex::new(from), |n| n.index() == to, |e| *e.weight(), |_| 0.0)
            .map(|(_, path)| path.into_iter().map(NodeIndex::index).collect())
    }

    pub fn is_connected(&self) -> bool {
        self.nodes.is_empty() || self.distances_from(0).iter().all(|d| d.is_finite())
    }

    /// Index of the road node at exactly `p`, if any.
    pub fn node_at(&self, p: Point) -> Option<usize> {
        self.nodes.iter().position(|&n| n == p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Validation("road network has no nodes".into()));
        }
        for e in &self.edges {
            if e[0] >= self.nodes.len() || e[1] >= self.nodes.len() {
                return Err(Error::Validation(format!("edge {e:?} references a missing node")));
            }
        }
        if !self.is_connected() {
            return Err(Error::Validation("road network is not connected".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TravelMode {
    Euclidean,
    Road,
}

/// Travel time in seconds. Straight-line for flight; road mode takes road
/// node indices and routes along shortest paths.
pub fn travel_time(
    a: Point,
    b: Point,
    speed: f64,
    mode: TravelMode,
    road: Option<&RoadNetwork>,
) -> Result<f64> {
    if !(speed > 0.0) {
        return Err(Error::InvalidSpeed(speed));
    }
    match mode {
        TravelMode::Euclidean => Ok(a.dist(b) / speed),
        TravelMode::Road => {
            let road = road.ok_or_else(|| Error::Validation("road mode needs a network".into()))?;
            let from = road
                .node_at(a)
                .ok_or_else(|| Error::Validation(format!("({}, {}) is not a road node", a.x, a.y)))?;
            let to = road
                .node_at(b)
                .ok_or_else(|| Error::Validation(format!("({}, {}) is not a road node", b.x, b.y)))?;
            Ok(road.path_length(from, to)? / speed)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution2D {
    Uniform,
    Gaussian,
    Rayleigh,
}

impl std::str::FromStr for Distribution2D {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "gaussian" => Ok(Self::Gaussian),
            "rayleigh" => Ok(Self::Rayleigh),
            other => Err(Error::Validation(format!("unknown distribution '{other}'"))),
        }
    }
}

/// A complete problem instance. The depot is road node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area_side_m: f64,
    pub seed: u64,
    pub fuel: FuelModel,
    pub team: TeamConfig,
    pub road: RoadNetwork,
    pub tasks: Vec<TaskPoint>,
}

impl Scenario {
    pub const DEPOT_ROAD_NODE: usize = 0;

    pub fn depot(&self) -> Point {
        self.road.nodes[Self::DEPOT_ROAD_NODE]
    }

    pub fn num_aerial(&self) -> usize {
        self.tasks.iter().filter(|t| t.kind == TaskKind::Aerial).count()
    }

    pub fn num_ground(&self) -> usize {
        self.tasks.iter().filter(|t| t.kind == TaskKind::Ground).count()
    }

    /// Ground positions usable as refuelling points: depot plus ground tasks.
    pub fn refuel_points(&self) -> Vec<Point> {
        std::iter::once(self.depot())
            .chain(self.tasks.iter().filter(|t| t.kind == TaskKind::Ground).map(TaskPoint::pos))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.fuel.validate()?;
        self.team.validate()?;
        self.road.validate()?;
        for (i, t) in self.tasks.iter().enumerate() {
            if t.id != i {
                return Err(Error::Validation(format!("task ids must be dense from 0 (found {} at {i})", t.id)));
            }
            if !(t.x.is_finite() && t.y.is_finite()) {
                return Err(Error::NonFinite(format!("task {i} coordinates")));
            }
            if t.x < 0.0 || t.y < 0.0 || t.x > self.area_side_m || t.y > self.area_side_m {
                return Err(Error::Validation(format!("task {i} lies outside the area")));
            }
            if t.kind == TaskKind::Ground {
                match self.road.node_at(t.pos()) {
                    None => return Err(Error::Validation(format!("ground task {i} is not on a road node"))),
                    Some(Self::DEPOT_ROAD_NODE) => {
                        return Err(Error::Validation(format!("ground task {i} sits on the depot")))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// Appends task points, assigning fresh dense ids. Returns the new ids.
    pub fn add_tasks(&mut self, points: &[(Point, TaskKind)]) -> Vec<usize> {
        points
            .iter()
            .map(|&(p, kind)| {
                let id = self.tasks.len();
                self.tasks.push(TaskPoint { id, x: p.x, y: p.y, kind });
                id
            })
            .collect()
    }
}

/// Draws one point from the non-uniform distributions, centred on the area
/// midpoint, clipped to the area by rejection.
pub fn sample_centred<R: Rng>(rng: &mut R, dist: Distribution2D, area_side_m: f64) -> Option<Point> {
    let mid = area_side_m / 2.0;
    for _ in 0..MAX_REJECTIONS {
        let p = match dist {
            Distribution2D::Gaussian => {
                let n = Normal::new(0.0, GAUSSIAN_SIGMA_M).expect("sigma is positive");
                Point::new(mid + n.sample(rng), mid + n.sample(rng))
            }
            Distribution2D::Rayleigh => {
                let u: f64 = rng.random();
                let r = RAYLEIGH_SIGMA_M * (-2.0 * (1.0 - u).ln()).sqrt();
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                Point::new(mid + r * theta.cos(), mid + r * theta.sin())
            }
            Distribution2D::Uniform => Point::new(
                rng.random::<f64>() * area_side_m,
                rng.random::<f64>() * area_side_m,
            ),
        };
        if in_area(p, area_side_m) {
            return Some(p);
        }
    }
    None
}

fn in_area(p: Point, side: f64) -> bool {
    (0.0..=side).contains(&p.x) && (0.0..=side).contains(&p.y)
}

fn sample_in_disk<R: Rng>(rng: &mut R, centre: Point, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    Point::new(centre.x + r * theta.cos(), centre.y + r * theta.sin())
}

/// Samples one aerial point within [`SAMPLING_RADIUS_M`] of some anchor.
pub fn sample_aerial<R: Rng>(
    rng: &mut R,
    dist: Distribution2D,
    anchors: &[Point],
    area_side_m: f64,
) -> Result<Point> {
    for _ in 0..MAX_REJECTIONS {
        let candidate = match dist {
            Distribution2D::Uniform => {
                let anchor = anchors[rng.random_range(0..anchors.len())];
                sample_in_disk(rng, anchor, SAMPLING_RADIUS_M)
            }
            _ => match sample_centred(rng, dist, area_side_m) {
                Some(p) => p,
                None => continue,
            },
        };
        if in_area(candidate, area_side_m)
            && anchors.iter().any(|a| a.dist(candidate) <= SAMPLING_RADIUS_M)
        {
            return Ok(candidate);
        }
    }
    Err(Error::GenerationFailure(format!(
        "no admissible aerial point after {MAX_REJECTIONS} draws"
    )))
}

/// Generates a seeded instance on the fixed grid-ring road network.
pub fn generate_scenario(
    n_aerial: usize,
    n_ground: usize,
    dist: Distribution2D,
    team: TeamConfig,
    seed: u64,
) -> Result<Scenario> {
    if n_aerial == 0 || n_ground == 0 {
        return Err(Error::Validation("need at least one aerial and one ground point".into()));
    }
    team.validate()?;
    let road = RoadNetwork::grid_ring(AREA_SIDE_M);
    let candidates = road.nodes.len() - 1;
    if n_ground > candidates {
        return Err(Error::GenerationFailure(format!(
            "{n_ground} ground points requested but the road network has {candidates} candidate nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground_nodes: Vec<usize> = index::sample(&mut rng, candidates, n_ground)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    let mut tasks = Vec::with_capacity(n_aerial + n_ground);
    for &node in &ground_nodes {
        let p = road.nodes[node];
        tasks.push(TaskPoint { id: tasks.len(), x: p.x, y: p.y, kind: TaskKind::Ground });
    }
    // Anchors for the uniform sampler are the ground task points; the centred
    // distributions only need to land within reach of a refuelling point.
    let ground_points: Vec<Point> = ground_nodes.iter().map(|&n| road.nodes[n]).collect();
    let mut refuel_points = ground_points.clone();
    refuel_points.push(road.nodes[Scenario::DEPOT_ROAD_NODE]);
    for _ in 0..n_aerial {
        let anchors = if dist == Distribution2D::Uniform { &ground_points } else { &refuel_points };
        let p = sample_aerial(&mut rng, dist, anchors, AREA_SIDE_M)?;
        tasks.push(TaskPoint { id: tasks.len(), x: p.x, y: p.y, kind: TaskKind::Aerial });
    }
    Ok(Scenario {
        area_side_m: AREA_SIDE_M,
        seed,
        fuel: FuelModel::default(),
        team,
        road,
        tasks,
    })
}
