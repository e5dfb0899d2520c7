//! Problem instances: definition, random generation and JSON (de)serialization.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::init::nearest_neighbor_capacitated;

/// Problem variant. TSPTW is single-vehicle with time windows only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cvrp,
    Tsptw,
    Cvrptw,
}

impl Variant {
    pub fn has_capacity(self) -> bool {
        matches!(self, Variant::Cvrp | Variant::Cvrptw)
    }

    pub fn has_time_windows(self) -> bool {
        matches!(self, Variant::Tsptw | Variant::Cvrptw)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Cvrp => write!(f, "cvrp"),
            Variant::Tsptw => write!(f, "tsptw"),
            Variant::Cvrptw => write!(f, "cvrptw"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cvrp" => Ok(Variant::Cvrp),
            "tsptw" => Ok(Variant::Tsptw),
            "cvrptw" => Ok(Variant::Cvrptw),
            other => Err(InstanceError::Validation(format!("unknown variant `{other}`"))),
        }
    }
}

/// A depot or customer node. Node 0 is always the depot.
///
/// Time-window fields are present only for customers of time-windowed
/// variants; the depot is never window-constrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub demand: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tw_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tw_end: Option<f64>,
}

impl Node {
    pub fn window(&self) -> Option<(f64, f64)> {
        match (self.tw_start, self.tw_end) {
            (Some(s), Some(e)) => Some((s, e)),
            _ => None,
        }
    }
}

/// The immutable problem definition shared by all states of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    pub num_vehicles: usize,
    pub nodes: Vec<Node>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("infeasible instance: {0}")]
    Infeasible(String),
}

impl ProblemInstance {
    pub fn num_customers(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn depot(&self) -> &Node {
        &self.nodes[0]
    }

    /// Euclidean distance between two node ids; travel time at unit speed.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let na = &self.nodes[a];
        let nb = &self.nodes[b];
        let dx = na.x - nb.x;
        let dy = na.y - nb.y;
        (dx * dx + dy * dy).sqrt()
    }

    /// Sum of distances over all unordered node pairs; bounds any single
    /// route length and hence any step reward.
    pub fn pairwise_distance_sum(&self) -> f64 {
        let n = self.nodes.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += self.distance(i, j);
            }
        }
        total
    }

    /// Checks all structural invariants; `load_instance` and the generator
    /// both go through here.
    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.nodes.is_empty() {
            return Err(InstanceError::Validation("instance has no nodes".into()));
        }
        if self.num_vehicles == 0 {
            return Err(InstanceError::Validation("num_vehicles must be >= 1".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(InstanceError::Validation(format!(
                    "node ids must be 0..N without gaps; index {i} has id {}",
                    node.id
                )));
            }
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(InstanceError::Validation(format!(
                    "node {i}: coordinates must be finite"
                )));
            }
            if !(node.demand >= 0.0) {
                return Err(InstanceError::Validation(format!(
                    "node {i}: demand must be non-negative"
                )));
            }
            match (node.tw_start, node.tw_end) {
                (Some(s), Some(e)) => {
                    if !s.is_finite() || !e.is_finite() || s > e {
                        return Err(InstanceError::Validation(format!(
                            "node {i}: invalid time window [{s}, {e}]"
                        )));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(InstanceError::Validation(format!(
                        "node {i}: tw_start and tw_end must be given together"
                    )));
                }
            }
        }
        if self.nodes[0].demand != 0.0 {
            return Err(InstanceError::Validation("depot demand must be 0".into()));
        }
        if self.nodes[0].window().is_some() {
            return Err(InstanceError::Validation(
                "depot must not carry a time window".into(),
            ));
        }

        let max_demand = self
            .nodes
            .iter()
            .skip(1)
            .map(|n| n.demand)
            .fold(0.0f64, f64::max);
        match self.variant {
            Variant::Cvrp | Variant::Cvrptw => {
                let cap = self.capacity.ok_or_else(|| {
                    InstanceError::Validation("missing field `capacity` for capacitated variant".into())
                })?;
                if !(cap > 0.0) {
                    return Err(InstanceError::Validation("capacity must be positive".into()));
                }
                if cap < max_demand {
                    return Err(InstanceError::Validation(format!(
                        "capacity {cap} is below the maximum customer demand {max_demand}"
                    )));
                }
            }
            Variant::Tsptw => {
                if self.num_vehicles != 1 {
                    return Err(InstanceError::Validation(
                        "tsptw requires num_vehicles = 1".into(),
                    ));
                }
                if max_demand != 0.0 {
                    return Err(InstanceError::Validation(
                        "tsptw requires all demands to be 0".into(),
                    ));
                }
            }
        }

        for node in self.nodes.iter().skip(1) {
            match (self.variant.has_time_windows(), node.window().is_some()) {
                (true, false) => {
                    return Err(InstanceError::Validation(format!(
                        "node {}: time window required for variant {}",
                        node.id, self.variant
                    )));
                }
                (false, true) => {
                    return Err(InstanceError::Validation(format!(
                        "node {}: time window not allowed for variant {}",
                        node.id, self.variant
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Generates a random instance, deterministic in all arguments.
///
/// Coordinates are uniform on the unit square, demands integer-uniform in
/// 1..=9 for capacitated variants, and each customer's time window is
/// centered at `dist(depot, i) * u` with `u ~ U[1,2)` and width
/// `w ~ U[0.2,1.0)`, clipped at zero, so every window is individually
/// reachable. For capacitated variants the vehicle count is fixed by the
/// nearest-neighbor construction and stored on the instance.
pub fn generate_instance(
    variant: Variant,
    num_customers: usize,
    capacity: Option<f64>,
    seed: u64,
) -> Result<ProblemInstance, InstanceError> {
    if num_customers == 0 {
        return Err(InstanceError::Config("num_customers must be >= 1".into()));
    }
    if variant.has_capacity() {
        match capacity {
            Some(c) if c > 0.0 => {}
            Some(c) => {
                return Err(InstanceError::Config(format!(
                    "capacity must be positive for {variant}, got {c}"
                )));
            }
            None => {
                return Err(InstanceError::Config(format!(
                    "capacity required for {variant}"
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(num_customers + 1);
    for id in 0..=num_customers {
        let x = rng.gen_range(0.0..1.0);
        let y = rng.gen_range(0.0..1.0);
        nodes.push(Node {
            id,
            x,
            y,
            demand: 0.0,
            tw_start: None,
            tw_end: None,
        });
    }
    if variant.has_capacity() {
        for node in nodes.iter_mut().skip(1) {
            node.demand = rng.gen_range(1..=9) as f64;
        }
    }
    if variant.has_time_windows() {
        let (dx0, dy0) = (nodes[0].x, nodes[0].y);
        for i in 1..=num_customers {
            let dist = ((nodes[i].x - dx0).powi(2) + (nodes[i].y - dy0).powi(2)).sqrt();
            let u = rng.gen_range(1.0..2.0);
            let w = rng.gen_range(0.2..1.0);
            let center = dist * u;
            nodes[i].tw_start = Some((center - w / 2.0).max(0.0));
            nodes[i].tw_end = Some(center + w / 2.0);
        }
    }

    let (capacity, num_vehicles) = match variant {
        Variant::Tsptw => (None, 1),
        Variant::Cvrp | Variant::Cvrptw => {
            let cap = capacity.unwrap();
            let seq = nearest_neighbor_capacitated(&nodes, cap)?;
            let vehicles = seq.iter().filter(|&&n| n == 0).count() - 1;
            (Some(cap), vehicles)
        }
    };

    let instance = ProblemInstance {
        variant,
        capacity,
        num_vehicles,
        nodes,
    };
    instance.validate()?;
    Ok(instance)
}

/// Serializes an instance to pretty JSON. Round-trips exactly: the writer
/// emits shortest decimal representations that parse back to identical
/// floating-point values.
pub fn save_instance(instance: &ProblemInstance, path: &Path) -> Result<(), InstanceError> {
    let text = serde_json::to_string_pretty(instance)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance, InstanceError> {
    let text = fs::read_to_string(path)?;
    let instance: ProblemInstance = serde_json::from_str(&text)?;
    instance.validate()?;
    Ok(instance)
}
