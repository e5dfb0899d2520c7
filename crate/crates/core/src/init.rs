//! Initial solutions via nearest-neighbor construction.

use std::sync::Arc;

use crate::instance::{InstanceError, Node, ProblemInstance, Variant};
use crate::route::{EnvError, RouteState};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Env(#[from] EnvError),
    #[error("instance declares {declared} vehicles but construction needs {built}")]
    VehicleMismatch { declared: usize, built: usize },
}

fn euclid(a: &Node, b: &Node) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

/// Capacitated nearest-neighbor construction over raw nodes.
///
/// From the current node the nearest pending candidate is taken, distance
/// ties broken by lower node id. The depot itself is a candidate whenever
/// the vehicle is away from it; choosing it (or hitting a customer whose
/// demand exceeds the remaining capacity) sends the vehicle home and
/// restores capacity. The result is always capacity-feasible.
pub fn nearest_neighbor_capacitated(nodes: &[Node], capacity: f64) -> Result<Vec<usize>, InstanceError> {
    for node in nodes.iter().skip(1) {
        if node.demand > capacity {
            return Err(InstanceError::Infeasible(format!(
                "customer {} demand {} exceeds vehicle capacity {capacity}",
                node.id, node.demand
            )));
        }
    }
    let mut pending: Vec<usize> = (1..nodes.len()).collect();
    let mut seq = vec![0usize];
    let mut current = 0usize;
    let mut remaining = capacity;
    while !pending.is_empty() {
        let mut best: Option<(f64, usize)> = None;
        for &cand in &pending {
            let d = euclid(&nodes[current], &nodes[cand]);
            if best.map_or(true, |(bd, bid)| d < bd || (d == bd && cand < bid)) {
                best = Some((d, cand));
            }
        }
        if current != 0 {
            let d = euclid(&nodes[current], &nodes[0]);
            if best.map_or(true, |(bd, _)| d <= bd) {
                best = Some((d, 0));
            }
        }
        let (_, chosen) = best.expect("pending nonempty");
        if chosen == 0 || nodes[chosen].demand > remaining {
            seq.push(0);
            current = 0;
            remaining = capacity;
        } else {
            seq.push(chosen);
            pending.retain(|&n| n != chosen);
            remaining -= nodes[chosen].demand;
            current = chosen;
        }
    }
    seq.push(0);
    Ok(seq)
}

/// Nearest-neighbor tour over all customers with no interior depot visits.
pub fn nearest_neighbor_tour(nodes: &[Node]) -> Vec<usize> {
    let mut pending: Vec<usize> = (1..nodes.len()).collect();
    let mut seq = vec![0usize];
    let mut current = 0usize;
    while !pending.is_empty() {
        let mut best: Option<(f64, usize)> = None;
        for &cand in &pending {
            let d = euclid(&nodes[current], &nodes[cand]);
            if best.map_or(true, |(bd, bid)| d < bd || (d == bd && cand < bid)) {
                best = Some((d, cand));
            }
        }
        let (_, chosen) = best.expect("pending nonempty");
        seq.push(chosen);
        pending.retain(|&n| n != chosen);
        current = chosen;
    }
    seq.push(0);
    seq
}

/// Initial route for capacitated variants. Requires the instance's vehicle
/// count to match what the construction produces (generated instances do
/// by construction).
pub fn initial_route_capacitated(instance: &Arc<ProblemInstance>) -> Result<RouteState, InitError> {
    let cap = instance
        .capacity
        .ok_or_else(|| InitError::Infeasible("capacitated variant without capacity".into()))?;
    let seq = nearest_neighbor_capacitated(&instance.nodes, cap)
        .map_err(|e| InitError::Infeasible(e.to_string()))?;
    let built = seq.iter().filter(|&&n| n == 0).count() - 1;
    if built != instance.num_vehicles {
        return Err(InitError::VehicleMismatch {
            declared: instance.num_vehicles,
            built,
        });
    }
    Ok(RouteState::new(Arc::clone(instance), seq)?)
}

/// Initial route for TSPTW: a single nearest-neighbor tour.
pub fn initial_route_tsptw(instance: &Arc<ProblemInstance>) -> Result<RouteState, InitError> {
    let seq = nearest_neighbor_tour(&instance.nodes);
    Ok(RouteState::new(Arc::clone(instance), seq)?)
}

/// Variant dispatch; CVRPTW reuses the capacitated construction with time
/// windows ignored, leaving window repair to the search.
pub fn initial_state(instance: &Arc<ProblemInstance>) -> Result<RouteState, InitError> {
    match instance.variant {
        Variant::Tsptw => initial_route_tsptw(instance),
        Variant::Cvrp | Variant::Cvrptw => initial_route_capacitated(instance),
    }
}
