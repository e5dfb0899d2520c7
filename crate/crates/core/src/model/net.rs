//! Forward pass: featurization, the attention encoder and both heads.

use rand::Rng;
use rand::RngCore;

use super::{ModelError, ModelParams};
use crate::route::RouteState;
use crate::trajectory::{ActionSampler, Policy, PolicyDecision, PolicyError};
use crate::route::SwapAction;

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-position input features for the interior of the sequence.
fn featurize(state: &RouteState) -> (usize, Vec<f64>) {
    let inst = state.instance();
    let seq = state.sequence();
    let len = seq.len();
    let n = len - 2;
    let arrivals = inst
        .variant
        .has_time_windows()
        .then(|| state.arrival_times().expect("time-windowed variant"));
    let cap = inst.capacity.unwrap_or(0.0);
    let mut x = Vec::with_capacity(n * super::FEATURE_DIM);
    for (pos, &node_id) in seq.iter().enumerate().take(len - 1).skip(1) {
        let node = &inst.nodes[node_id];
        let (tw_start, tw_end) = node.window().unwrap_or((0.0, 0.0));
        x.push(node.x);
        x.push(node.y);
        x.push(if cap > 0.0 { node.demand / cap } else { 0.0 });
        x.push(tw_start);
        x.push(tw_end);
        x.push(arrivals.as_ref().map_or(0.0, |a| a[pos]));
        x.push(if node_id == 0 { 1.0 } else { 0.0 });
        x.push(pos as f64 / len as f64);
    }
    (n, x)
}

/// Forward-pass cache for one state. Interior positions are indexed
/// 0..n-1, corresponding to sequence positions 1..=n.
pub struct Encoding {
    pub(crate) n: usize,
    pub(crate) d: usize,
    pub(crate) x: Vec<f64>,
    pub(crate) e: Vec<f64>,
    pub(crate) q: Vec<f64>,
    pub(crate) k: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) attn: Vec<f64>,
    pub(crate) h: Vec<f64>,
    pub(crate) pooled: Vec<f64>,
    pub(crate) scores: Vec<f64>,
    pub(crate) vhat: f64,
    /// Policy keys, `P_k h_j` for every interior position.
    pub(crate) pk: Vec<f64>,
}

/// Scores, value estimate and attention state for `state` under `params`.
pub fn encode(state: &RouteState, params: &ModelParams) -> Encoding {
    let dims = params.dims();
    let d = dims.hidden_dim;
    let f = dims.feature_dim;
    let layout = dims.layout();
    let (n, x) = featurize(state);

    let w_emb = params.block(layout.w_emb, d * f);
    let b_emb = params.block(layout.b_emb, d);
    let mut e = vec![0.0; n * d];
    for p in 0..n {
        let xp = &x[p * f..(p + 1) * f];
        let ep = &mut e[p * d..(p + 1) * d];
        for a in 0..d {
            let row = &w_emb[a * f..(a + 1) * f];
            let mut acc = b_emb[a];
            for (w, xv) in row.iter().zip(xp.iter()) {
                acc += w * xv;
            }
            ep[a] = acc;
        }
    }

    let matmul = |w: &[f64], input: &[f64], out: &mut [f64]| {
        // out[p] = W * input[p] for every position.
        for p in 0..n {
            let ip = &input[p * d..(p + 1) * d];
            let op = &mut out[p * d..(p + 1) * d];
            for a in 0..d {
                let row = &w[a * d..(a + 1) * d];
                let mut acc = 0.0;
                for (wv, iv) in row.iter().zip(ip.iter()) {
                    acc += wv * iv;
                }
                op[a] = acc;
            }
        }
    };
    let mut q = vec![0.0; n * d];
    let mut k = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    matmul(params.block(layout.w_q, d * d), &e, &mut q);
    matmul(params.block(layout.w_k, d * d), &e, &mut k);
    matmul(params.block(layout.w_v, d * d), &e, &mut v);

    let scale = 1.0 / (d as f64).sqrt();
    let mut attn = vec![0.0; n * n];
    for p in 0..n {
        let qp = &q[p * d..(p + 1) * d];
        let row = &mut attn[p * n..(p + 1) * n];
        for (j, slot) in row.iter_mut().enumerate() {
            let kj = &k[j * d..(j + 1) * d];
            *slot = qp.iter().zip(kj.iter()).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax_in_place(row);
    }

    // h = e + attn * v (residual around the attention mix)
    let mut h = e.clone();
    for p in 0..n {
        let row = &attn[p * n..(p + 1) * n];
        let hp = &mut h[p * d..(p + 1) * d];
        for (j, &weight) in row.iter().enumerate() {
            let vj = &v[j * d..(j + 1) * d];
            for (slot, value) in hp.iter_mut().zip(vj.iter()) {
                *slot += weight * value;
            }
        }
    }

    let mut pooled = vec![0.0; d];
    for p in 0..n {
        for (slot, value) in pooled.iter_mut().zip(h[p * d..(p + 1) * d].iter()) {
            *slot += value;
        }
    }
    for slot in pooled.iter_mut() {
        *slot /= n as f64;
    }

    let w_score = params.block(layout.w_score, d);
    let b_score = params.block(layout.b_score, 1)[0];
    let scores: Vec<f64> = (0..n)
        .map(|p| {
            let hp = &h[p * d..(p + 1) * d];
            b_score + w_score.iter().zip(hp.iter()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();

    let w_val = params.block(layout.w_val, d);
    let b_val = params.block(layout.b_val, 1)[0];
    let vhat = b_val + w_val.iter().zip(pooled.iter()).map(|(a, b)| a * b).sum::<f64>();

    let mut pk = vec![0.0; n * d];
    matmul(params.block(layout.p_k, d * d), &h, &mut pk);

    Encoding {
        n,
        d,
        x,
        e,
        q,
        k,
        v,
        attn,
        h,
        pooled,
        scores,
        vhat,
        pk,
    }
}

/// Second-node probabilities for a chosen first node.
#[derive(Debug, Clone)]
pub struct ActionDistribution {
    /// Baseline per-position scores, interior index order.
    pub first_node_scores: Vec<f64>,
    /// Probabilities over partners, interior index order; exactly 0 at the
    /// first node itself.
    pub second_node_probs: Vec<f64>,
}

impl Encoding {
    pub fn interior_len(&self) -> usize {
        self.n
    }

    /// Baseline score per interior position.
    pub fn position_scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    /// State-value estimate used as the REINFORCE baseline.
    pub fn state_value(&self) -> f64 {
        self.vhat
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.h
    }

    /// Attention logits over partners of `first` (interior index), with the
    /// first node excluded. Returns (logits aligned to interior indices,
    /// query vector); the logit at `first` is NEG_INFINITY.
    pub(crate) fn policy_logits(&self, params: &ModelParams, first: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.d;
        let layout = params.dims().layout();
        let p_q = params.block(layout.p_q, d * d);
        let hi = &self.h[first * d..(first + 1) * d];
        let mut pq = vec![0.0; d];
        for (a, slot) in pq.iter_mut().enumerate() {
            let row = &p_q[a * d..(a + 1) * d];
            *slot = row.iter().zip(hi.iter()).map(|(w, h)| w * h).sum();
        }
        let scale = 1.0 / (d as f64).sqrt();
        let logits: Vec<f64> = (0..self.n)
            .map(|j| {
                if j == first {
                    f64::NEG_INFINITY
                } else {
                    let kj = &self.pk[j * d..(j + 1) * d];
                    pq.iter().zip(kj.iter()).map(|(a, b)| a * b).sum::<f64>() * scale
                }
            })
            .collect();
        (logits, pq)
    }

    /// Distribution over second nodes given the first (sequence position).
    pub fn second_node_distribution(&self, params: &ModelParams, first_pos: usize) -> ActionDistribution {
        let first = first_pos - 1;
        let (logits, _) = self.policy_logits(params, first);
        let legal: Vec<f64> = logits.iter().cloned().filter(|l| l.is_finite()).collect();
        let lse = log_sum_exp(&legal);
        let probs: Vec<f64> = logits
            .iter()
            .map(|&l| if l.is_finite() { (l - lse).exp() } else { 0.0 })
            .collect();
        ActionDistribution {
            first_node_scores: self.scores.clone(),
            second_node_probs: probs,
        }
    }

    /// Log-probability of picking `second_pos` after `first_pos` (sequence
    /// positions).
    pub fn log_prob(&self, params: &ModelParams, first_pos: usize, second_pos: usize) -> f64 {
        let (logits, _) = self.policy_logits(params, first_pos - 1);
        let legal: Vec<f64> = logits.iter().cloned().filter(|l| l.is_finite()).collect();
        logits[second_pos - 1] - log_sum_exp(&legal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectMode {
    Greedy,
    EpsilonGreedy(f64),
}

/// First sub-action: pick a position by baseline score. Greedy breaks ties
/// toward the lowest sequence position. Returns a sequence position.
pub fn select_first_node(
    enc: &Encoding,
    mode: SelectMode,
    rng: &mut dyn RngCore,
) -> Result<usize, ModelError> {
    if enc.n < 2 {
        return Err(ModelError::NoAction);
    }
    if let SelectMode::EpsilonGreedy(eps) = mode {
        if rng.gen_range(0.0..1.0) < eps {
            return Ok(rng.gen_range(0..enc.n) + 1);
        }
    }
    let mut best = 0usize;
    for (idx, &score) in enc.scores.iter().enumerate() {
        if score > enc.scores[best] {
            best = idx;
        }
    }
    Ok(best + 1)
}

/// The trained policy: baseline-scored first node, attention-sampled
/// second node.
pub struct NeuralPolicy<'a> {
    pub params: &'a ModelParams,
    pub first_node: SelectMode,
}

impl<'a> NeuralPolicy<'a> {
    pub fn new(params: &'a ModelParams, first_node: SelectMode) -> Self {
        NeuralPolicy { params, first_node }
    }
}

struct NeuralSampler<'a> {
    params: &'a ModelParams,
    enc: Encoding,
    mode: SelectMode,
}

impl ActionSampler for NeuralSampler<'_> {
    fn sample(&self, rng: &mut dyn RngCore) -> PolicyDecision {
        let first_pos = select_first_node(&self.enc, self.mode, rng).expect("checked in plan");
        let first = first_pos - 1;
        let (logits, _) = self.enc.policy_logits(self.params, first);
        let legal: Vec<f64> = logits.iter().cloned().filter(|l| l.is_finite()).collect();
        let lse = log_sum_exp(&legal);
        let draw: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut second = if first == 0 { 1 } else { 0 };
        for (j, &logit) in logits.iter().enumerate() {
            if !logit.is_finite() {
                continue;
            }
            acc += (logit - lse).exp();
            if draw < acc {
                second = j;
                break;
            }
        }
        let log_prob = logits[second] - lse;
        let action = SwapAction::new(first_pos, second + 1).expect("distinct positions");
        PolicyDecision {
            action,
            log_prob,
            first_pos,
        }
    }
}

impl Policy for NeuralPolicy<'_> {
    fn plan<'s>(&'s self, state: &RouteState) -> Result<Box<dyn ActionSampler + 's>, PolicyError> {
        if state.interior_len() < 2 {
            return Err(PolicyError::NoAction);
        }
        let enc = encode(state, self.params);
        Ok(Box::new(NeuralSampler {
            params: self.params,
            enc,
            mode: self.first_node,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::initial_state;
    use crate::instance::{generate_instance, Node, ProblemInstance, Variant};
    use crate::model::ModelDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn test_state(seed: u64) -> RouteState {
        let inst = Arc::new(generate_instance(Variant::Cvrptw, 6, Some(30.0), seed).unwrap());
        initial_state(&inst).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_embeddings_and_uniform_policy() {
        let state = test_state(1);
        let params = ModelParams::zeros(ModelDims::new(8));
        let enc = encode(&state, &params);
        assert!(enc.embeddings().iter().all(|&h| h == 0.0));
        assert!(enc.position_scores().iter().all(|&s| s == 0.0));
        assert_eq!(enc.state_value(), 0.0);
        let dist = enc.second_node_distribution(&params, 1);
        let n = enc.interior_len();
        for (j, &p) in dist.second_node_probs.iter().enumerate() {
            if j == 0 {
                assert_eq!(p, 0.0);
            } else {
                assert!((p - 1.0 / (n - 1) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let state = test_state(2);
        let params = ModelParams::init(ModelDims::new(16), 7);
        let a = encode(&state, &params);
        let b = encode(&state, &params);
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.vhat.to_bits(), b.vhat.to_bits());
        assert_eq!(a.h, b.h);
    }

    #[test]
    fn identical_nodes_get_identical_scores_after_swap() {
        // Two customers with identical coordinates and demand: swapping
        // them leaves the feature matrix, and hence the scores, unchanged.
        let mut nodes = vec![Node {
            id: 0,
            x: 0.5,
            y: 0.5,
            demand: 0.0,
            tw_start: None,
            tw_end: None,
        }];
        for i in 1..=3 {
            nodes.push(Node {
                id: i,
                x: if i == 3 { 0.9 } else { 0.2 },
                y: if i == 3 { 0.8 } else { 0.2 },
                demand: 2.0,
                tw_start: None,
                tw_end: None,
            });
        }
        let inst = Arc::new(ProblemInstance {
            variant: Variant::Cvrp,
            capacity: Some(30.0),
            num_vehicles: 1,
            nodes,
        });
        inst.validate().unwrap();
        let params = ModelParams::init(ModelDims::new(16), 3);
        let a = RouteState::new(Arc::clone(&inst), vec![0, 1, 3, 2, 0]).unwrap();
        let b = RouteState::new(inst, vec![0, 2, 3, 1, 0]).unwrap();
        let ea = encode(&a, &params);
        let eb = encode(&b, &params);
        for (sa, sb) in ea.scores.iter().zip(eb.scores.iter()) {
            assert!((sa - sb).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_picks_argmax_and_breaks_ties_low() {
        let state = test_state(3);
        let params = ModelParams::zeros(ModelDims::new(8));
        let mut enc = encode(&state, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // All-equal scores: the first interior position wins.
        assert_eq!(select_first_node(&enc, SelectMode::Greedy, &mut rng).unwrap(), 1);
        enc.scores[2] = 1.0;
        assert_eq!(select_first_node(&enc, SelectMode::Greedy, &mut rng).unwrap(), 3);
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let state = test_state(4);
        let params = ModelParams::init(ModelDims::new(8), 1);
        let enc = encode(&state, &params);
        let n = enc.interior_len();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            let pos = select_first_node(&enc, SelectMode::EpsilonGreedy(1.0), &mut rng).unwrap();
            counts[pos - 1] += 1;
        }
        let expected = draws as f64 / n as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let diff = c as f64 - expected;
                diff * diff / expected
            })
            .sum();
        // df = n-1; generous 99.9% cutoff for df <= 8.
        assert!(chi2 < 26.13, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn greedy_invariant_under_positive_affine_scores() {
        let state = test_state(5);
        let dims = ModelDims::new(16);
        let params = ModelParams::init(dims, 9);
        let mut scaled = params.clone();
        let layout = dims.layout();
        let d = dims.hidden_dim;
        for w in &mut scaled.flat_mut()[layout.w_score..layout.w_score + d] {
            *w *= 3.5;
        }
        scaled.flat_mut()[layout.b_score] = scaled.flat()[layout.b_score] * 3.5 + 1.25;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = select_first_node(&encode(&state, &params), SelectMode::Greedy, &mut rng).unwrap();
        let b = select_first_node(&encode(&state, &scaled), SelectMode::Greedy, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probabilities_sum_to_one_with_masked_first() {
        let state = test_state(6);
        let params = ModelParams::init(ModelDims::new(16), 2);
        let enc = encode(&state, &params);
        for first_pos in 1..=enc.interior_len() {
            let dist = enc.second_node_distribution(&params, first_pos);
            let sum: f64 = dist.second_node_probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(dist.second_node_probs[first_pos - 1], 0.0);
        }
    }

    #[test]
    fn single_legal_partner_gets_probability_one() {
        let inst = Arc::new(generate_instance(Variant::Cvrp, 2, Some(30.0), 8).unwrap());
        let state = initial_state(&inst).unwrap();
        assert_eq!(state.interior_len(), 2);
        let params = ModelParams::init(ModelDims::new(8), 0);
        let enc = encode(&state, &params);
        let dist = enc.second_node_distribution(&params, 1);
        assert_eq!(dist.second_node_probs[0], 0.0);
        assert!((dist.second_node_probs[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut a = vec![0.4, -1.2, 2.0, 0.0];
        let mut b: Vec<f64> = a.iter().map(|v| v + 123.45).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_state_has_no_action() {
        let inst = Arc::new(generate_instance(Variant::Cvrp, 1, Some(30.0), 0).unwrap());
        let state = initial_state(&inst).unwrap();
        let params = ModelParams::init(ModelDims::new(8), 0);
        let enc = encode(&state, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            select_first_node(&enc, SelectMode::Greedy, &mut rng),
            Err(ModelError::NoAction)
        ));
        let policy = NeuralPolicy::new(&params, SelectMode::Greedy);
        assert!(policy.plan(&state).is_err());
    }

    #[test]
    fn seeded_checkpoint_reproduces_greedy_actions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let state = test_state(9);
        let params = ModelParams::init(ModelDims::new(16), 42);
        params.save(&path, Variant::Cvrptw, 42).unwrap();
        let (loaded, _) = ModelParams::load(&path).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(5);
        let mut rng_b = ChaCha8Rng::seed_from_u64(5);
        let pa = NeuralPolicy::new(&params, SelectMode::Greedy);
        let pb = NeuralPolicy::new(&loaded, SelectMode::Greedy);
        let da = pa.plan(&state).unwrap().sample(&mut rng_a);
        let db = pb.plan(&state).unwrap().sample(&mut rng_b);
        assert_eq!(da.action, db.action);
        assert_eq!(da.log_prob.to_bits(), db.log_prob.to_bits());
    }
}
