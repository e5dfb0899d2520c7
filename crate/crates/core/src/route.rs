//! Route states, 2-exchange actions and the target/cost evaluators.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{ProblemInstance, Variant};

/// Orientation of the time-window cost.
///
/// `Conventional` charges earliness as `max(tw_start - arrival, 0)` and
/// lateness as `max(arrival - tw_end, 0)`. `Literal` keeps the transposed
/// max() arguments (earliness `max(arrival - tw_start, 0)`, lateness
/// `max(tw_end - arrival, 0)`) for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TwCostForm {
    #[default]
    Conventional,
    Literal,
}

/// Flags controlling how constraint costs are assembled.
///
/// With the default `double_count_earliness = false`, early arrivals are
/// charged once as waiting time inside the target, not again as cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CostModel {
    pub tw_form: TwCostForm,
    pub double_count_earliness: bool,
}

/// Soft constraints a variant is subject to, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Capacity,
    TimeWindow,
}

impl Constraint {
    pub fn name(self) -> &'static str {
        match self {
            Constraint::Capacity => "capacity",
            Constraint::TimeWindow => "time_window",
        }
    }
}

pub fn active_constraints(variant: Variant) -> &'static [Constraint] {
    match variant {
        Variant::Cvrp => &[Constraint::Capacity],
        Variant::Tsptw => &[Constraint::TimeWindow],
        Variant::Cvrptw => &[Constraint::Capacity, Constraint::TimeWindow],
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid route state: {0}")]
    InvalidState(String),
    #[error("operation unsupported for variant {0}")]
    UnsupportedVariant(Variant),
    #[error("illegal action: {0}")]
    IllegalAction(String),
}

/// A complete route sequence: starts and ends at the depot, with one
/// interior depot token per additional vehicle. Immutable; `apply_swap`
/// returns a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteState {
    instance: Arc<ProblemInstance>,
    seq: Vec<usize>,
}

impl fmt::Display for RouteState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.seq.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl RouteState {
    pub fn new(instance: Arc<ProblemInstance>, seq: Vec<usize>) -> Result<Self, EnvError> {
        let n_customers = instance.num_customers();
        let expected_len = n_customers + instance.num_vehicles + 1;
        if seq.len() != expected_len {
            return Err(EnvError::InvalidState(format!(
                "sequence length {} does not match {} customers and {} vehicles",
                seq.len(),
                n_customers,
                instance.num_vehicles
            )));
        }
        if seq.first() != Some(&0) || seq.last() != Some(&0) {
            return Err(EnvError::InvalidState(
                "sequence must start and end at the depot".into(),
            ));
        }
        let depot_tokens = seq.iter().filter(|&&n| n == 0).count();
        if depot_tokens != instance.num_vehicles + 1 {
            return Err(EnvError::InvalidState(format!(
                "expected {} depot tokens, found {depot_tokens}",
                instance.num_vehicles + 1
            )));
        }
        let mut seen = vec![false; n_customers + 1];
        for &node in &seq {
            if node > n_customers {
                return Err(EnvError::InvalidState(format!("unknown node id {node}")));
            }
            if node != 0 {
                if seen[node] {
                    return Err(EnvError::InvalidState(format!(
                        "customer {node} appears more than once"
                    )));
                }
                seen[node] = true;
            }
        }
        if let Some(missing) = (1..=n_customers).find(|&c| !seen[c]) {
            return Err(EnvError::InvalidState(format!("customer {missing} missing")));
        }
        Ok(RouteState { instance, seq })
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn instance_ref(&self) -> &Arc<ProblemInstance> {
        &self.instance
    }

    pub fn sequence(&self) -> &[usize] {
        &self.seq
    }

    /// Number of swap-eligible positions (everything but the two endpoint
    /// depot tokens).
    pub fn interior_len(&self) -> usize {
        self.seq.len() - 2
    }

    /// Total Euclidean travel distance over the full sequence.
    pub fn total_distance(&self) -> f64 {
        self.seq
            .windows(2)
            .map(|w| self.instance.distance(w[0], w[1]))
            .sum()
    }

    /// Arrival time at each sequence position. The clock starts at zero for
    /// every vehicle and a vehicle departing a customer waits until the
    /// window opens: departure = max(arrival, tw_start).
    pub fn arrival_times(&self) -> Result<Vec<f64>, EnvError> {
        if !self.instance.variant.has_time_windows() {
            return Err(EnvError::UnsupportedVariant(self.instance.variant));
        }
        let mut times = vec![0.0; self.seq.len()];
        let mut clock = 0.0;
        for k in 1..self.seq.len() {
            let prev = self.seq[k - 1];
            let node = self.seq[k];
            let arrival = clock + self.instance.distance(prev, node);
            times[k] = arrival;
            if node == 0 {
                clock = 0.0;
            } else {
                let open = self.instance.nodes[node].tw_start.unwrap_or(0.0);
                clock = arrival.max(open);
            }
        }
        Ok(times)
    }

    /// Total time spent waiting for windows to open. Counted in the target
    /// for time-windowed variants.
    pub fn waiting_time(&self) -> Result<f64, EnvError> {
        Ok(self.tw_terms()?.earliness)
    }

    fn tw_terms(&self) -> Result<TwTerms, EnvError> {
        let times = self.arrival_times()?;
        let mut terms = TwTerms::default();
        for (k, &node) in self.seq.iter().enumerate() {
            if node == 0 {
                continue;
            }
            let (start, end) = self.instance.nodes[node].window().unwrap_or((0.0, f64::INFINITY));
            let arrival = times[k];
            terms.earliness += (start - arrival).max(0.0);
            terms.lateness += (arrival - end).max(0.0);
            terms.literal_early += (arrival - start).max(0.0);
            terms.literal_late += (end - arrival).max(0.0);
        }
        Ok(terms)
    }

    /// Time-window violation cost in the conventional orientation:
    /// earliness plus lateness over all customers.
    pub fn tw_cost(&self) -> Result<f64, EnvError> {
        let t = self.tw_terms()?;
        Ok(t.earliness + t.lateness)
    }

    /// The transposed form exactly as printed: `max(arrival - tw_start, 0)
    /// + max(tw_end - arrival, 0)` per customer.
    pub fn tw_cost_literal(&self) -> Result<f64, EnvError> {
        let t = self.tw_terms()?;
        Ok(t.literal_early + t.literal_late)
    }

    /// Normalized capacity excess: per vehicle, `max(0, (load - Cap)/Cap)`.
    /// Slack never offsets violation in another vehicle.
    pub fn cap_cost(&self) -> Result<f64, EnvError> {
        if !self.instance.variant.has_capacity() {
            return Err(EnvError::UnsupportedVariant(self.instance.variant));
        }
        let cap = self.instance.capacity.expect("validated capacitated instance");
        let mut total = 0.0;
        let mut load = 0.0;
        for &node in &self.seq[1..] {
            if node == 0 {
                total += ((load - cap) / cap).max(0.0);
                load = 0.0;
            } else {
                load += self.instance.nodes[node].demand;
            }
        }
        Ok(total)
    }

    /// Per-constraint cost vector in `active_constraints` order.
    pub fn cost_vector(&self, cm: &CostModel) -> Vec<f64> {
        active_constraints(self.instance.variant)
            .iter()
            .map(|c| match c {
                Constraint::Capacity => self.cap_cost().expect("capacitated variant"),
                Constraint::TimeWindow => {
                    let (early, late) = self.tw_cost_components(cm);
                    early + late
                }
            })
            .collect()
    }

    /// The (earliness, lateness) cost components under the configured form.
    /// Under the default model earliness is already counted as waiting in
    /// the target, so the earliness component is zero.
    pub fn tw_cost_components(&self, cm: &CostModel) -> (f64, f64) {
        let t = self.tw_terms().expect("time-windowed variant");
        match cm.tw_form {
            TwCostForm::Conventional => {
                let early = if cm.double_count_earliness { t.earliness } else { 0.0 };
                (early, t.lateness)
            }
            TwCostForm::Literal => (t.literal_early, t.literal_late),
        }
    }

    /// Target, per-constraint costs and their sum.
    pub fn objective(&self, cm: &CostModel) -> Objective {
        let travel = self.total_distance();
        let waiting = if self.instance.variant.has_time_windows() {
            self.waiting_time().expect("time-windowed variant")
        } else {
            0.0
        };
        let target = travel + waiting;
        let costs = self.cost_vector(cm);
        let obj = target + costs.iter().sum::<f64>();
        Objective {
            travel,
            waiting,
            target,
            costs,
            obj,
        }
    }

    /// All legal swaps: every unordered pair of interior positions,
    /// interior depot tokens included.
    pub fn enumerate_actions(&self) -> Vec<SwapAction> {
        let last = self.seq.len() - 2;
        let mut actions = Vec::new();
        for i in 1..=last {
            for j in (i + 1)..=last {
                actions.push(SwapAction { i, j });
            }
        }
        actions
    }

    fn check_action(&self, action: SwapAction) -> Result<(), EnvError> {
        let last = self.seq.len() - 2;
        if action.i == action.j {
            return Err(EnvError::IllegalAction("positions must differ".into()));
        }
        if action.i < 1 || action.j < 1 || action.i > last || action.j > last {
            return Err(EnvError::IllegalAction(format!(
                "positions ({}, {}) outside interior 1..={last}",
                action.i, action.j
            )));
        }
        Ok(())
    }

    /// Exchanges the entries at the action's positions. The step signal
    /// reports the reduction of distance and of each constraint cost
    /// (positive = improvement).
    pub fn apply_swap(
        &self,
        action: SwapAction,
        cm: &CostModel,
    ) -> Result<(RouteState, StepSignal), EnvError> {
        self.check_action(action)?;
        let mut seq = self.seq.clone();
        seq.swap(action.i, action.j);
        let next = RouteState {
            instance: Arc::clone(&self.instance),
            seq,
        };
        let reward = self.total_distance() - next.total_distance();
        let costs: Vec<f64> = self
            .cost_vector(cm)
            .iter()
            .zip(next.cost_vector(cm).iter())
            .map(|(before, after)| before - after)
            .collect();
        Ok((next, StepSignal { reward, costs }))
    }
}

#[derive(Debug, Default)]
struct TwTerms {
    earliness: f64,
    lateness: f64,
    literal_early: f64,
    literal_late: f64,
}

/// A 2-exchange: swap the sequence entries at interior positions `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapAction {
    pub i: usize,
    pub j: usize,
}

impl SwapAction {
    pub fn new(a: usize, b: usize) -> Result<Self, EnvError> {
        if a == b {
            return Err(EnvError::IllegalAction("positions must differ".into()));
        }
        Ok(SwapAction {
            i: a.min(b),
            j: a.max(b),
        })
    }
}

/// Immediate reward and per-constraint cost reductions for one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSignal {
    pub reward: f64,
    pub costs: Vec<f64>,
}

/// Objective decomposition of a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub travel: f64,
    pub waiting: f64,
    pub target: f64,
    /// Per active constraint, `active_constraints` order.
    pub costs: Vec<f64>,
    pub obj: f64,
}
