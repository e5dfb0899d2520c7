//! The multi-timescale constrained policy optimization loop: fast Adam
//! updates for the policy and baseline, slow clamped subgradient steps for
//! the Lagrangian multipliers.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adam::Adam;
use crate::exec::{map_indexed, ExecMode};
use crate::instance::{ProblemInstance, Variant};
use crate::model::{log_prob_and_grads, ModelDims, ModelError, ModelParams, NeuralPolicy, SelectMode};
use crate::route::{active_constraints, CostModel, Objective, TwCostForm};
use crate::trajectory::{
    compute_returns, constrained_return, rollout, ReturnConfig, ReturnError, ReturnForm, RolloutError,
    Shaping, ShapingRule, Trajectory,
};

/// Per-constraint multipliers, thresholds and their step size.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub lambdas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub alpha_lambda: f64,
}

impl LagrangianState {
    pub fn new(num_constraints: usize, lambda_init: f64, epsilon: f64, alpha_lambda: f64) -> Self {
        LagrangianState {
            lambdas: vec![lambda_init; num_constraints],
            epsilons: vec![epsilon; num_constraints],
            alpha_lambda,
        }
    }

    /// `lambda <- max(0, lambda - alpha * grad)` per constraint.
    pub fn apply_step(&mut self, gradient: &[f64]) {
        for (lambda, g) in self.lambdas.iter_mut().zip(gradient.iter()) {
            *lambda = (*lambda - self.alpha_lambda * g).max(0.0);
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric abort at update {update}: {detail}")]
    NumericAbort { update: usize, detail: String },
    #[error("rollout failed: {0}")]
    Rollout(String),
    #[error("{0}")]
    Return(#[from] ReturnError),
    #[error("window index {given} does not maximize the return at t={t} (expected {expected})")]
    WindowMismatch { t: usize, given: usize, expected: usize },
}

impl From<RolloutError> for TrainError {
    fn from(e: RolloutError) -> Self {
        TrainError::Rollout(e.to_string())
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numeric { step, detail } => TrainError::NumericAbort {
                update: step,
                detail,
            },
            other => TrainError::Rollout(other.to_string()),
        }
    }
}

/// Everything that defines a training run. Mirrored one-to-one by the TOML
/// config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub total_updates: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Rollout length; absent means 200/300/400 picked by instance size.
    #[serde(default)]
    pub steps_per_episode: Option<usize>,
    #[serde(default = "default_alpha_theta")]
    pub alpha_theta: f64,
    #[serde(default = "default_alpha_theta")]
    pub alpha_omega: f64,
    #[serde(default = "default_alpha_lambda")]
    pub alpha_lambda: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda_init")]
    pub lambda_init: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_lambda_every")]
    pub lambda_update_every: usize,
    #[serde(default = "default_phi_start")]
    pub phi_start: f64,
    #[serde(default = "default_phi_end")]
    pub phi_end: f64,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_eps_greedy")]
    pub epsilon_greedy: f64,
    #[serde(default = "default_true")]
    pub shaping: bool,
    #[serde(default)]
    pub shaping_rule: ShapingRule,
    #[serde(default)]
    pub return_form: ReturnForm,
    #[serde(default)]
    pub tw_cost_form: TwCostForm,
    #[serde(default)]
    pub double_count_earliness: bool,
    #[serde(default = "default_true")]
    pub use_baseline: bool,
}

fn default_batch_size() -> usize {
    32
}
fn default_alpha_theta() -> f64 {
    0.0005
}
fn default_alpha_lambda() -> f64 {
    0.0001
}
fn default_gamma() -> f64 {
    0.95
}
fn default_lambda_init() -> f64 {
    1.0
}
fn default_lambda_every() -> usize {
    10
}
fn default_phi_start() -> f64 {
    0.5
}
fn default_phi_end() -> f64 {
    0.1
}
fn default_hidden_dim() -> usize {
    64
}
fn default_eps_greedy() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(variant: Variant, seed: u64, total_updates: usize) -> Self {
        TrainConfig {
            variant,
            seed,
            total_updates,
            batch_size: default_batch_size(),
            steps_per_episode: None,
            alpha_theta: default_alpha_theta(),
            alpha_omega: default_alpha_theta(),
            alpha_lambda: default_alpha_lambda(),
            gamma: default_gamma(),
            lambda_init: default_lambda_init(),
            epsilon: 0.0,
            lambda_update_every: default_lambda_every(),
            phi_start: default_phi_start(),
            phi_end: default_phi_end(),
            hidden_dim: default_hidden_dim(),
            epsilon_greedy: default_eps_greedy(),
            shaping: true,
            shaping_rule: ShapingRule::default(),
            return_form: ReturnForm::default(),
            tw_cost_form: TwCostForm::default(),
            double_count_earliness: false,
            use_baseline: true,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            tw_form: self.tw_cost_form,
            double_count_earliness: self.double_count_earliness,
        }
    }

    /// Default rollout budgets by instance size.
    pub fn default_steps(num_customers: usize) -> usize {
        if num_customers <= 20 {
            200
        } else if num_customers <= 50 {
            300
        } else {
            400
        }
    }

    pub fn resolve_steps(&self, instances: &[Arc<ProblemInstance>]) -> usize {
        self.steps_per_episode.unwrap_or_else(|| {
            let max_n = instances.iter().map(|i| i.num_customers()).max().unwrap_or(20);
            Self::default_steps(max_n)
        })
    }

    /// Rejection probability schedule: linear decay over the first half of
    /// training, constant afterwards.
    pub fn phi_at(&self, update: usize) -> f64 {
        let half = (self.total_updates / 2).max(1);
        let frac = (update as f64 / half as f64).min(1.0);
        self.phi_start + (self.phi_end - self.phi_start) * frac
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if let Some(steps) = self.steps_per_episode {
            if steps == 0 {
                return Err(TrainError::Config("steps_per_episode must be >= 1".into()));
            }
        }
        for (name, v) in [
            ("alpha_theta", self.alpha_theta),
            ("alpha_omega", self.alpha_omega),
            ("alpha_lambda", self.alpha_lambda),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(TrainError::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        // The multipliers move on a strictly slower timescale.
        if self.alpha_lambda >= self.alpha_theta {
            return Err(TrainError::Config(format!(
                "alpha_lambda ({}) must be strictly smaller than alpha_theta ({})",
                self.alpha_lambda, self.alpha_theta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Config(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.lambda_init < 0.0 || self.epsilon < 0.0 {
            return Err(TrainError::Config(
                "lambda_init and epsilon must be non-negative".into(),
            ));
        }
        for (name, v) in [("phi_start", self.phi_start), ("phi_end", self.phi_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TrainError::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_greedy) {
            return Err(TrainError::Config("epsilon_greedy must be in [0, 1]".into()));
        }
        if self.hidden_dim == 0 || self.lambda_update_every == 0 {
            return Err(TrainError::Config(
                "hidden_dim and lambda_update_every must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Multiplier subgradient at window start `t`, one component per
/// constraint: `-gamma^(t_tilde - t) * sum_{i=t}^{t_tilde} (excess_i - eps)`
/// where the excess is the per-step cost increase. `t_tilde` must be the
/// maximizing window end computed with the same multipliers.
pub fn lambda_gradient(
    traj: &Trajectory,
    t: usize,
    cfg: &ReturnConfig,
    t_tilde: usize,
) -> Result<Vec<f64>, TrainError> {
    let (_, expected) = constrained_return(traj, t, cfg)?;
    if expected != t_tilde {
        return Err(TrainError::WindowMismatch {
            t,
            given: t_tilde,
            expected,
        });
    }
    let decay = cfg.gamma.powi((t_tilde - t) as i32);
    let dim = cfg.lambdas.len();
    let mut grad = vec![0.0; dim];
    for tr in &traj.transitions[t..=t_tilde] {
        for c in 0..dim {
            let increase = -tr.costs[c];
            grad[c] -= decay * (increase - cfg.epsilons[c]);
        }
    }
    Ok(grad)
}

/// One CSV log row per update.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub update: usize,
    pub mean_obj: f64,
    pub mean_tgt: f64,
    pub mean_costs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub policy_loss: f64,
    pub baseline_mse: f64,
    pub phi: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub constraint_names: Vec<&'static str>,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["update".to_string(), "mean_obj".into(), "mean_tgt".into()];
        for name in &self.constraint_names {
            cols.push(format!("cost_{name}"));
        }
        for name in &self.constraint_names {
            cols.push(format!("lambda_{name}"));
        }
        cols.extend(["policy_loss".into(), "baseline_mse".into(), "phi".into(), "seconds".into()]);
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for row in &self.rows {
            let mut cols = vec![
                row.update.to_string(),
                format!("{:.6}", row.mean_obj),
                format!("{:.6}", row.mean_tgt),
            ];
            for c in &row.mean_costs {
                cols.push(format!("{c:.6}"));
            }
            for l in &row.lambdas {
                cols.push(format!("{l:.6}"));
            }
            cols.push(format!("{:.6}", row.policy_loss));
            cols.push(format!("{:.6}", row.baseline_mse));
            cols.push(format!("{:.4}", row.phi));
            cols.push(format!("{:.4}", row.seconds));
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub lagrangian: LagrangianState,
    pub log: TrainLog,
}

struct BatchItem {
    policy_grad: Vec<f64>,
    baseline_grad: Vec<f64>,
    lambda_grad: Vec<f64>,
    policy_loss: f64,
    baseline_mse: f64,
    best: Objective,
}

fn stream_rng(seed: u64, update: usize, batch_size: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((update * batch_size + b + 1) as u64);
    rng
}

/// Best objective among the initial state and every visited state.
fn best_visited(traj: &Trajectory, cm: &CostModel) -> Objective {
    let mut best = traj.transitions[0].state.objective(cm);
    for state in traj.transitions[1..]
        .iter()
        .map(|t| &t.state)
        .chain(std::iter::once(&traj.terminal_state))
    {
        let o = state.objective(cm);
        if o.obj < best.obj {
            best = o;
        }
    }
    best
}

fn run_batch_item(
    instances: &[Arc<ProblemInstance>],
    params: &ModelParams,
    cfg: &TrainConfig,
    ret_cfg: &ReturnConfig,
    steps: usize,
    phi: f64,
    update: usize,
    b: usize,
) -> Result<BatchItem, TrainError> {
    let mut rng = stream_rng(cfg.seed, update, cfg.batch_size, b);
    let instance = &instances[rng.gen_range(0..instances.len())];
    let cm = cfg.cost_model();
    let policy = NeuralPolicy::new(params, SelectMode::EpsilonGreedy(cfg.epsilon_greedy));
    let shaping = cfg.shaping.then_some(Shaping {
        phi,
        rule: cfg.shaping_rule,
    });
    let traj = rollout(instance, &policy, steps, shaping, &cm, &mut rng)?;
    let returns = compute_returns(&traj, ret_cfg)?;
    let g_values: Vec<f64> = returns.iter().map(|&(g, _)| g).collect();
    let grads = log_prob_and_grads(&traj, params, &g_values, cfg.use_baseline)?;

    let dim = ret_cfg.lambdas.len();
    let mut lambda_grad = vec![0.0; dim];
    for (t, &(_, t_tilde)) in returns.iter().enumerate() {
        let g = lambda_gradient(&traj, t, ret_cfg, t_tilde)?;
        for c in 0..dim {
            lambda_grad[c] += g[c];
        }
    }
    for g in lambda_grad.iter_mut() {
        *g /= returns.len() as f64;
    }

    Ok(BatchItem {
        policy_grad: grads.policy,
        baseline_grad: grads.baseline,
        lambda_grad,
        policy_loss: grads.policy_loss,
        baseline_mse: grads.baseline_mse,
        best: best_visited(&traj, &cm),
    })
}

/// Runs the full training loop. Deterministic in `config.seed` regardless
/// of the execution mode: every batch element draws from its own RNG
/// stream and reduction is in index order.
pub fn train(
    instances: &[Arc<ProblemInstance>],
    config: &TrainConfig,
    exec: ExecMode,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if instances.is_empty() {
        return Err(TrainError::Config("instance set is empty".into()));
    }
    if let Some(bad) = instances.iter().find(|i| i.variant != config.variant) {
        return Err(TrainError::Config(format!(
            "instance variant {} does not match config variant {}",
            bad.variant, config.variant
        )));
    }
    let steps = config.resolve_steps(instances);
    let constraints = active_constraints(config.variant);
    let dims = ModelDims::new(config.hidden_dim);
    let mut params = ModelParams::init(dims, config.seed);
    let mut lagrangian = LagrangianState::new(
        constraints.len(),
        config.lambda_init,
        config.epsilon,
        config.alpha_lambda,
    );
    let mut adam_theta = Adam::new(dims.param_count(), config.alpha_theta);
    let mut adam_omega = Adam::new(dims.param_count(), config.alpha_omega);
    let mut rows = Vec::with_capacity(config.total_updates);

    for update in 0..config.total_updates {
        let started = Instant::now();
        let phi = config.phi_at(update);
        let ret_cfg = ReturnConfig::new(
            config.gamma,
            lagrangian.lambdas.clone(),
            lagrangian.epsilons.clone(),
            config.return_form,
        );

        let items: Vec<Result<BatchItem, TrainError>> = map_indexed(config.batch_size, exec, |b| {
            run_batch_item(instances, &params, config, &ret_cfg, steps, phi, update, b)
        });

        let count = config.batch_size as f64;
        let mut policy_grad = vec![0.0; dims.param_count()];
        let mut baseline_grad = vec![0.0; dims.param_count()];
        let mut lambda_grad = vec![0.0; constraints.len()];
        let mut policy_loss = 0.0;
        let mut baseline_mse = 0.0;
        let mut mean_obj = 0.0;
        let mut mean_tgt = 0.0;
        let mut mean_costs = vec![0.0; constraints.len()];
        for item in items {
            let item = item.map_err(|e| match e {
                TrainError::NumericAbort { detail, .. } => TrainError::NumericAbort { update, detail },
                other => other,
            })?;
            for (acc, g) in policy_grad.iter_mut().zip(item.policy_grad.iter()) {
                *acc += g / count;
            }
            for (acc, g) in baseline_grad.iter_mut().zip(item.baseline_grad.iter()) {
                *acc += g / count;
            }
            for (acc, g) in lambda_grad.iter_mut().zip(item.lambda_grad.iter()) {
                *acc += g / count;
            }
            policy_loss += item.policy_loss / count;
            baseline_mse += item.baseline_mse / count;
            mean_obj += item.best.obj / count;
            mean_tgt += item.best.target / count;
            for (acc, c) in mean_costs.iter_mut().zip(item.best.costs.iter()) {
                *acc += c / count;
            }
        }

        if !policy_loss.is_finite() || !baseline_mse.is_finite() {
            return Err(TrainError::NumericAbort {
                update,
                detail: format!(
                    "loss not finite (policy={policy_loss}, baseline={baseline_mse}, lambdas={:?})",
                    lagrangian.lambdas
                ),
            });
        }

        adam_theta.step(params.flat_mut(), &policy_grad);
        adam_omega.step(params.flat_mut(), &baseline_grad);
        if (update + 1) % config.lambda_update_every == 0 {
            lagrangian.apply_step(&lambda_grad);
        }

        rows.push(LogRow {
            update,
            mean_obj,
            mean_tgt,
            mean_costs,
            lambdas: lagrangian.lambdas.clone(),
            policy_loss,
            baseline_mse,
            phi,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutcome {
        params,
        lagrangian,
        log: TrainLog {
            constraint_names: constraints.iter().map(|c| c.name()).collect(),
            rows,
        },
    })
}
