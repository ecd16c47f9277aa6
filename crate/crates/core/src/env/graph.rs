use crate::error::{Error, Result};
use crate::scenario::{FuelModel, Point, Scenario, TaskKind, TeamConfig};

/// What sits at a mission node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Depot,
    Aerial,
    Ground,
}

impl NodeKind {
    pub fn is_ground(self) -> bool {
        matches!(self, NodeKind::Depot | NodeKind::Ground)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissionNode {
    pub pos: Point,
    pub kind: NodeKind,
    /// Road node index for ground nodes.
    pub road_node: Option<usize>,
}

/// Precomputed geometry of a scenario.
///
/// Node 0 is the depot and node `k + 1` is task `k`. Flight distances are
/// straight lines; ground distances follow shortest road paths and are only
/// defined between ground nodes.
#[derive(Clone, Debug)]
pub struct MissionGraph {
    pub nodes: Vec<MissionNode>,
    pub ground: Vec<usize>,
    pub fuel: FuelModel,
    pub team: TeamConfig,
    air: Vec<f64>,
    road: Vec<f64>,
    air_fuel: Vec<f64>,
    to_ground_fuel: Vec<f64>,
}

impl MissionGraph {
    pub const DEPOT: usize = 0;

    pub fn new(scenario: &Scenario, team: TeamConfig) -> Result<Self> {
        team.validate()?;
        let mut nodes = Vec::with_capacity(scenario.tasks.len() + 1);
        nodes.push(MissionNode {
            pos: scenario.depot(),
            kind: NodeKind::Depot,
            road_node: Some(Scenario::DEPOT_ROAD_NODE),
        });
        for t in &scenario.tasks {
            let (kind, road_node) = match t.kind {
                TaskKind::Aerial => (NodeKind::Aerial, None),
                TaskKind::Ground => {
                    let r = scenario.road.node_at(t.pos()).ok_or_else(|| {
                        Error::Validation(format!("ground task {} is not on a road node", t.id))
                    })?;
                    (NodeKind::Ground, Some(r))
                }
            };
            nodes.push(MissionNode { pos: t.pos(), kind, road_node });
        }
        let n = nodes.len();
        let ground: Vec<usize> = (0..n).filter(|&i| nodes[i].kind.is_ground()).collect();

        let mut air = vec![0.0; n * n];
        let mut air_fuel = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = nodes[i].pos.dist(nodes[j].pos);
                air[i * n + j] = d;
                air_fuel[i * n + j] = scenario.fuel.fuel_cost(team.v_a, d);
            }
        }
        let mut road = vec![f64::INFINITY; n * n];
        for &i in &ground {
            let from = nodes[i].road_node.expect("ground node on road");
            let dists = scenario.road.distances_from(from);
            for &j in &ground {
                let to = nodes[j].road_node.expect("ground node on road");
                if !dists[to].is_finite() {
                    return Err(Error::DisconnectedNetwork { from, to });
                }
                road[i * n + j] = dists[to];
            }
        }
        let to_ground_fuel = (0..n)
            .map(|j| {
                ground
                    .iter()
                    .map(|&g| air_fuel[j * n + g])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok(Self {
            nodes,
            ground,
            fuel: scenario.fuel,
            team,
            air,
            road,
            air_fuel,
            to_ground_fuel,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn task_node(task: usize) -> usize {
        task + 1
    }

    pub fn node_task(node: usize) -> Option<usize> {
        node.checked_sub(1)
    }

    pub fn is_ground(&self, node: usize) -> bool {
        self.nodes[node].kind.is_ground()
    }

    /// Straight-line distance (m).
    pub fn air_dist(&self, i: usize, j: usize) -> f64 {
        self.air[i * self.len() + j]
    }

    pub fn air_time(&self, i: usize, j: usize) -> f64 {
        self.air_dist(i, j) / self.team.v_a
    }

    /// Energy to fly from `i` to `j` (kJ).
    pub fn air_fuel(&self, i: usize, j: usize) -> f64 {
        self.air_fuel[i * self.len() + j]
    }

    /// Cheapest flight from `j` to any ground node (kJ).
    pub fn fuel_to_ground(&self, j: usize) -> f64 {
        self.to_ground_fuel[j]
    }

    /// Shortest road distance between two ground nodes (m); infinite when
    /// either endpoint is aerial.
    pub fn road_dist(&self, i: usize, j: usize) -> f64 {
        self.road[i * self.len() + j]
    }

    pub fn road_time(&self, i: usize, j: usize) -> f64 {
        self.road_dist(i, j) / self.team.v_g
    }

    pub fn capacity(&self) -> f64 {
        self.fuel.capacity_kj
    }
}
