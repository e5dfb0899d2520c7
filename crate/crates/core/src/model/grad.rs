//! Hand-written gradients for the policy and baseline losses.
//!
//! Both losses share the encoder trunk; per transition the forward cache
//! is built once and backpropagated twice, once per loss, into separate
//! flat gradient vectors. The advantage multiplying the policy log-prob is
//! treated as a constant (no gradient through the baseline).

use super::net::{encode, softmax_in_place, Encoding};
use super::{ModelError, ModelParams};
use crate::trajectory::Trajectory;

/// Gradients of the two losses plus their scalar values for logging.
///
/// `policy` is the gradient of `-sum_t advantage_t * log pi(a_t|s_t)`
/// (descending it ascends the return); `baseline` is the gradient of the
/// mean squared error of the state-value and chosen-position score heads.
#[derive(Debug)]
pub struct GradBundle {
    pub policy: Vec<f64>,
    pub baseline: Vec<f64>,
    pub policy_loss: f64,
    pub baseline_mse: f64,
}

/// Backpropagates `g_h` (dLoss/dH, n*d) through the trunk into `out`.
fn backward_trunk(enc: &Encoding, params: &ModelParams, g_h: &[f64], out: &mut [f64]) {
    let n = enc.n;
    let d = enc.d;
    let dims = params.dims();
    let f = dims.feature_dim;
    let layout = dims.layout();
    let scale = 1.0 / (d as f64).sqrt();

    // h = e + attn*v: split into the residual and the attention branch.
    let mut g_e = g_h.to_vec();
    let g_z = g_h;

    // z = attn * v
    let mut g_attn = vec![0.0; n * n];
    let mut g_v = vec![0.0; n * d];
    for p in 0..n {
        let gzp = &g_z[p * d..(p + 1) * d];
        let arow = &enc.attn[p * n..(p + 1) * n];
        for j in 0..n {
            let vj = &enc.v[j * d..(j + 1) * d];
            let mut acc = 0.0;
            for (gz, vv) in gzp.iter().zip(vj.iter()) {
                acc += gz * vv;
            }
            g_attn[p * n + j] = acc;
            let aw = arow[j];
            let gvj = &mut g_v[j * d..(j + 1) * d];
            for (gv, gz) in gvj.iter_mut().zip(gzp.iter()) {
                *gv += aw * gz;
            }
        }
    }

    // attn rows are softmaxes of the scaled scores.
    let mut g_s = vec![0.0; n * n];
    for p in 0..n {
        let arow = &enc.attn[p * n..(p + 1) * n];
        let grow = &g_attn[p * n..(p + 1) * n];
        let dot: f64 = arow.iter().zip(grow.iter()).map(|(a, g)| a * g).sum();
        for j in 0..n {
            g_s[p * n + j] = arow[j] * (grow[j] - dot);
        }
    }

    // s[p][j] = dot(q[p], k[j]) * scale
    let mut g_q = vec![0.0; n * d];
    let mut g_k = vec![0.0; n * d];
    for p in 0..n {
        for j in 0..n {
            let gs = g_s[p * n + j] * scale;
            if gs == 0.0 {
                continue;
            }
            let kj = &enc.k[j * d..(j + 1) * d];
            let qp = &enc.q[p * d..(p + 1) * d];
            let gqp = &mut g_q[p * d..(p + 1) * d];
            for (gq, kv) in gqp.iter_mut().zip(kj.iter()) {
                *gq += gs * kv;
            }
            let gkj = &mut g_k[j * d..(j + 1) * d];
            for (gk, qv) in gkj.iter_mut().zip(qp.iter()) {
                *gk += gs * qv;
            }
        }
    }

    // q/k/v = W * e; accumulate weight grads and push into g_e.
    let linear_back = |w_off: usize, g_out: &[f64], g_e: &mut [f64], out: &mut [f64]| {
        let w = params.block(w_off, d * d);
        for p in 0..n {
            let go = &g_out[p * d..(p + 1) * d];
            let ep = &enc.e[p * d..(p + 1) * d];
            for a in 0..d {
                let g = go[a];
                if g == 0.0 {
                    continue;
                }
                let wrow = &w[a * d..(a + 1) * d];
                let grow = &mut out[w_off + a * d..w_off + (a + 1) * d];
                for b in 0..d {
                    grow[b] += g * ep[b];
                }
                let gep = &mut g_e[p * d..(p + 1) * d];
                for (ge, wv) in gep.iter_mut().zip(wrow.iter()) {
                    *ge += g * wv;
                }
            }
        }
    };
    linear_back(layout.w_q, &g_q, &mut g_e, out);
    linear_back(layout.w_k, &g_k, &mut g_e, out);
    linear_back(layout.w_v, &g_v, &mut g_e, out);

    // e = W_emb * x + b_emb
    for p in 0..n {
        let gep = &g_e[p * d..(p + 1) * d];
        let xp = &enc.x[p * f..(p + 1) * f];
        for a in 0..d {
            let g = gep[a];
            if g == 0.0 {
                continue;
            }
            let wrow = &mut out[layout.w_emb + a * f..layout.w_emb + (a + 1) * f];
            for (slot, xv) in wrow.iter_mut().zip(xp.iter()) {
                *slot += g * xv;
            }
            out[layout.b_emb + a] += g;
        }
    }
}

/// Replays a trajectory and accumulates the loss gradients, using the
/// precomputed returns `g_values` (one per transition).
pub fn log_prob_and_grads(
    traj: &Trajectory,
    params: &ModelParams,
    g_values: &[f64],
    use_baseline: bool,
) -> Result<GradBundle, ModelError> {
    assert_eq!(g_values.len(), traj.transitions.len());
    let dims = params.dims();
    let d = dims.hidden_dim;
    let layout = dims.layout();
    let total = layout.total;
    let horizon = traj.transitions.len() as f64;

    let mut g_policy = vec![0.0; total];
    let mut g_baseline = vec![0.0; total];
    let mut policy_loss = 0.0;
    let mut baseline_mse = 0.0;

    for (step, tr) in traj.transitions.iter().enumerate() {
        let enc = encode(&tr.state, params);
        let n = enc.n;
        let first_pos = tr.chosen_q_index;
        let first = first_pos - 1;
        let second_pos = if tr.action.i == first_pos {
            tr.action.j
        } else {
            tr.action.i
        };
        let second = second_pos - 1;

        let (logits, pq) = enc.policy_logits(params, first);
        let mut probs = logits.clone();
        probs[first] = f64::NEG_INFINITY;
        softmax_in_place(&mut probs);
        let legal: Vec<f64> = logits.iter().cloned().filter(|l| l.is_finite()).collect();
        let max = legal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + legal.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_prob = logits[second] - lse;

        let g_value = g_values[step];
        let advantage = if use_baseline { g_value - enc.vhat } else { g_value };

        if !log_prob.is_finite() || !enc.vhat.is_finite() || !advantage.is_finite() {
            return Err(ModelError::Numeric {
                step,
                detail: format!("log_prob={log_prob}, vhat={}", enc.vhat),
            });
        }

        policy_loss -= advantage * log_prob;
        let v_err = enc.vhat - g_value;
        let q_err = enc.scores[first] - g_value;
        baseline_mse += (v_err * v_err + q_err * q_err) / horizon;

        // ---- policy loss backward ----
        {
            let mut g_h = vec![0.0; n * d];
            let p_q = params.block(layout.p_q, d * d);
            let p_k = params.block(layout.p_k, d * d);
            let scale = 1.0 / (d as f64).sqrt();
            // dLoss/dlogit_j = -advantage * (1[j=second] - prob_j)
            let mut g_pq = vec![0.0; d];
            for j in 0..n {
                if j == first {
                    continue;
                }
                let gz = -advantage * ((j == second) as u8 as f64 - probs[j]);
                if gz == 0.0 {
                    continue;
                }
                // logit_j = dot(pq, pk_j) * scale
                let pkj = &enc.pk[j * d..(j + 1) * d];
                for (slot, pk_v) in g_pq.iter_mut().zip(pkj.iter()) {
                    *slot += gz * pk_v * scale;
                }
                // pk_j = P_k h_j
                let g_pkj_scale = gz * scale;
                let hj = &enc.h[j * d..(j + 1) * d];
                for a in 0..d {
                    let g = g_pkj_scale * pq[a];
                    let wrow = &mut g_policy[layout.p_k + a * d..layout.p_k + (a + 1) * d];
                    for (slot, hv) in wrow.iter_mut().zip(hj.iter()) {
                        *slot += g * hv;
                    }
                    let krow = &p_k[a * d..(a + 1) * d];
                    let ghj = &mut g_h[j * d..(j + 1) * d];
                    for (slot, wv) in ghj.iter_mut().zip(krow.iter()) {
                        *slot += g * wv;
                    }
                }
            }
            // pq = P_q h_first
            let hi = &enc.h[first * d..(first + 1) * d];
            for a in 0..d {
                let g = g_pq[a];
                if g == 0.0 {
                    continue;
                }
                let wrow = &mut g_policy[layout.p_q + a * d..layout.p_q + (a + 1) * d];
                for (slot, hv) in wrow.iter_mut().zip(hi.iter()) {
                    *slot += g * hv;
                }
                let qrow = &p_q[a * d..(a + 1) * d];
                let ghi = &mut g_h[first * d..(first + 1) * d];
                for (slot, wv) in ghi.iter_mut().zip(qrow.iter()) {
                    *slot += g * wv;
                }
            }
            backward_trunk(&enc, params, &g_h, &mut g_policy);
        }

        // ---- baseline loss backward ----
        {
            let mut g_h = vec![0.0; n * d];
            let w_val = params.block(layout.w_val, d);
            let w_score = params.block(layout.w_score, d);
            let dv = 2.0 * v_err / horizon;
            for (a, &pooled_a) in enc.pooled.iter().enumerate() {
                g_baseline[layout.w_val + a] += dv * pooled_a;
            }
            g_baseline[layout.b_val] += dv;
            let per_pos = dv / n as f64;
            for p in 0..n {
                let gh = &mut g_h[p * d..(p + 1) * d];
                for (slot, wv) in gh.iter_mut().zip(w_val.iter()) {
                    *slot += per_pos * wv;
                }
            }
            let du = 2.0 * q_err / horizon;
            let hi = &enc.h[first * d..(first + 1) * d];
            for (a, &hv) in hi.iter().enumerate() {
                g_baseline[layout.w_score + a] += du * hv;
            }
            g_baseline[layout.b_score] += du;
            let ghi = &mut g_h[first * d..(first + 1) * d];
            for (slot, wv) in ghi.iter_mut().zip(w_score.iter()) {
                *slot += du * wv;
            }
            backward_trunk(&enc, params, &g_h, &mut g_baseline);
        }
    }

    for (name, grad) in [("policy", &g_policy), ("baseline", &g_baseline)] {
        if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
            return Err(ModelError::Numeric {
                step: traj.transitions.len() - 1,
                detail: format!("{name} gradient component {pos} is not finite"),
            });
        }
    }

    Ok(GradBundle {
        policy: g_policy,
        baseline: g_baseline,
        policy_loss,
        baseline_mse,
    })
}
