//! Hand-derived backpropagation through the readout, decoder GRU, attention
//! scorer, initial-state projection, bidirectional encoder, and both
//! embedding tables.

use crate::error::Result;
use crate::linalg::{axpy, dot, Mat};
use crate::model::forward::{forced_forward, GruStepCache};
use crate::model::{Gradient, GruWeights, ModelParams};

/// Backward through one GRU step. `d_state` is the loss gradient at the new
/// state; gradients are accumulated into `grad`, `d_input`, and `d_prev`.
#[allow(clippy::too_many_arguments)]
fn gru_backward(
    w: &GruWeights,
    grad: &mut GruWeights,
    input: &[f64],
    prev: &[f64],
    cache: &GruStepCache,
    d_state: &[f64],
    d_input: &mut [f64],
    d_prev: &mut [f64],
) {
    let h = prev.len();
    let z = &cache.update;
    let r = &cache.reset;
    let cand = &cache.cand;

    // state = (1-z)*prev + z*cand
    let mut d_z = vec![0.0; h];
    let mut d_cand = vec![0.0; h];
    for i in 0..h {
        d_z[i] = d_state[i] * (cand[i] - prev[i]);
        d_cand[i] = d_state[i] * z[i];
        d_prev[i] += d_state[i] * (1.0 - z[i]);
    }

    // cand = tanh(w_cand*input + u_cand*(r.prev) + b_cand)
    let d_pre_cand: Vec<f64> = d_cand
        .iter()
        .zip(cand)
        .map(|(d, c)| d * (1.0 - c * c))
        .collect();
    let gated: Vec<f64> = r.iter().zip(prev).map(|(rv, pv)| rv * pv).collect();
    grad.w_cand.add_outer(&d_pre_cand, input);
    grad.u_cand.add_outer(&d_pre_cand, &gated);
    axpy(1.0, &d_pre_cand, &mut grad.b_cand.data);
    w.w_cand.matvec_t_add(&d_pre_cand, d_input);
    let mut d_gated = vec![0.0; h];
    w.u_cand.matvec_t_add(&d_pre_cand, &mut d_gated);
    let mut d_r = vec![0.0; h];
    for i in 0..h {
        d_r[i] = d_gated[i] * prev[i];
        d_prev[i] += d_gated[i] * r[i];
    }

    // z = sigmoid(...)
    let d_pre_z: Vec<f64> = d_z
        .iter()
        .zip(z)
        .map(|(d, zv)| d * zv * (1.0 - zv))
        .collect();
    grad.w_update.add_outer(&d_pre_z, input);
    grad.u_update.add_outer(&d_pre_z, prev);
    axpy(1.0, &d_pre_z, &mut grad.b_update.data);
    w.w_update.matvec_t_add(&d_pre_z, d_input);
    w.u_update.matvec_t_add(&d_pre_z, d_prev);

    // r = sigmoid(...)
    let d_pre_r: Vec<f64> = d_r
        .iter()
        .zip(r)
        .map(|(d, rv)| d * rv * (1.0 - rv))
        .collect();
    grad.w_reset.add_outer(&d_pre_r, input);
    grad.u_reset.add_outer(&d_pre_r, prev);
    axpy(1.0, &d_pre_r, &mut grad.b_reset.data);
    w.w_reset.matvec_t_add(&d_pre_r, d_input);
    w.u_reset.matvec_t_add(&d_pre_r, d_prev);
}

/// d log P(scored | x) / d theta for an explicit scored sequence (no EOS is
/// appended here; sampled hypotheses may legitimately end without one).
pub(crate) fn grad_scored(params: &ModelParams, x: &[u32], scored: &[u32]) -> (f64, Gradient) {
    let cfg = &params.config;
    let w = &params.weights;
    let cache = forced_forward(params, x, scored);

    let e_dim = cfg.embed_dim;
    let h = cfg.hidden_dim;
    let a_dim = cfg.attn_dim;
    let r_dim = cfg.readout_dim();
    let n = x.len();

    let mut grad = Gradient::zeros(cfg);
    let gw = &mut grad.weights;

    let mut d_s_carry = vec![0.0; h];
    let mut d_annot = vec![vec![0.0; 2 * h]; n];

    for j in (0..cache.steps.len()).rev() {
        let step = &cache.steps[j];
        let s_prev: &[f64] = if j == 0 {
            &cache.enc.s0
        } else {
            &cache.steps[j - 1].gru.state
        };
        let emb_prev = w.tgt_embed.row(step.prev_token as usize);

        // softmax cross term: d logits = onehot(scored_j) - probs
        let mut d_logits: Vec<f64> = step.probs.iter().map(|p| -p).collect();
        d_logits[scored[j] as usize] += 1.0;

        gw.out_proj.add_outer(&d_logits, &step.readout);
        axpy(1.0, &d_logits, &mut gw.out_bias.data);

        let mut d_readout = vec![0.0; r_dim];
        w.out_proj.matvec_t_add(&d_logits, &mut d_readout);
        let d_pre_ro: Vec<f64> = d_readout
            .iter()
            .zip(&step.readout)
            .map(|(d, t)| d * (1.0 - t * t))
            .collect();

        gw.ro_state.add_outer(&d_pre_ro, &step.gru.state);
        gw.ro_context.add_outer(&d_pre_ro, &step.context);
        gw.ro_embed.add_outer(&d_pre_ro, emb_prev);
        axpy(1.0, &d_pre_ro, &mut gw.ro_bias.data);

        let mut d_state = d_s_carry.clone();
        w.ro_state.matvec_t_add(&d_pre_ro, &mut d_state);

        let mut d_context = vec![0.0; 2 * h];
        w.ro_context.matvec_t_add(&d_pre_ro, &mut d_context);
        let mut d_emb_prev = vec![0.0; e_dim];
        w.ro_embed.matvec_t_add(&d_pre_ro, &mut d_emb_prev);

        // decoder GRU
        let mut input = Vec::with_capacity(e_dim + 2 * h);
        input.extend_from_slice(emb_prev);
        input.extend_from_slice(&step.context);
        let mut d_input = vec![0.0; e_dim + 2 * h];
        let mut d_s_prev = vec![0.0; h];
        gru_backward(
            &w.dec,
            &mut gw.dec,
            &input,
            s_prev,
            &step.gru,
            &d_state,
            &mut d_input,
            &mut d_s_prev,
        );
        axpy(1.0, &d_input[..e_dim], &mut d_emb_prev);
        axpy(1.0, &d_input[e_dim..], &mut d_context);

        // context = sum_i a_i * annotation_i
        let mut d_attn = vec![0.0; n];
        for i in 0..n {
            d_attn[i] = dot(&d_context, &cache.enc.annotations[i]);
            axpy(step.attn_row[i], &d_context, &mut d_annot[i]);
        }

        // softmax over attention scores
        let weighted: f64 = step.attn_row.iter().zip(&d_attn).map(|(a, d)| a * d).sum();
        let score_vec = w.att_score.row(0);
        for i in 0..n {
            let d_score = step.attn_row[i] * (d_attn[i] - weighted);
            // score_i = sum_k v_k * tanh(wa_state_k + ua_annot_ik)
            for k in 0..a_dim {
                let q = (step.wa_state[k] + cache.enc.ua_annot[i][k]).tanh();
                gw.att_score.data[k] += d_score * q;
                let d_pre = d_score * score_vec[k] * (1.0 - q * q);
                if d_pre == 0.0 {
                    continue;
                }
                axpy(d_pre, s_prev, gw.att_state.row_mut(k));
                axpy(d_pre, &cache.enc.annotations[i], gw.att_annot.row_mut(k));
                axpy(d_pre, w.att_state.row(k), &mut d_s_prev);
                axpy(d_pre, w.att_annot.row(k), &mut d_annot[i]);
            }
        }

        axpy(
            1.0,
            &d_emb_prev,
            gw.tgt_embed.row_mut(step.prev_token as usize),
        );
        d_s_carry = d_s_prev;
    }

    // s0 = tanh(init_state * bwd_state_0 + init_bias)
    let d_pre0: Vec<f64> = d_s_carry
        .iter()
        .zip(&cache.enc.s0)
        .map(|(d, s)| d * (1.0 - s * s))
        .collect();
    gw.init_state.add_outer(&d_pre0, &cache.enc.bwd[0].state);
    axpy(1.0, &d_pre0, &mut gw.init_bias.data);
    {
        let mut d_bwd0 = vec![0.0; h];
        w.init_state.matvec_t_add(&d_pre0, &mut d_bwd0);
        axpy(1.0, &d_bwd0, &mut d_annot[0][h..]);
    }

    // encoder, forward direction: recurrence runs left to right
    let zero_state = vec![0.0; h];
    let mut d_h_carry = vec![0.0; h];
    for i in (0..n).rev() {
        let mut d_h = d_annot[i][..h].to_vec();
        axpy(1.0, &d_h_carry, &mut d_h);
        let prev: &[f64] = if i == 0 {
            &zero_state
        } else {
            &cache.enc.fwd[i - 1].state
        };
        let emb = w.src_embed.row(x[i] as usize);
        let mut d_input = vec![0.0; e_dim];
        let mut d_prev = vec![0.0; h];
        gru_backward(
            &w.enc_fwd,
            &mut gw.enc_fwd,
            emb,
            prev,
            &cache.enc.fwd[i],
            &d_h,
            &mut d_input,
            &mut d_prev,
        );
        axpy(1.0, &d_input, gw.src_embed.row_mut(x[i] as usize));
        d_h_carry = d_prev;
    }

    // encoder, backward direction: recurrence runs right to left
    let mut d_h_carry = vec![0.0; h];
    for i in 0..n {
        let mut d_h = d_annot[i][h..].to_vec();
        axpy(1.0, &d_h_carry, &mut d_h);
        let prev: &[f64] = if i == n - 1 {
            &zero_state
        } else {
            &cache.enc.bwd[i + 1].state
        };
        let emb = w.src_embed.row(x[i] as usize);
        let mut d_input = vec![0.0; e_dim];
        let mut d_prev = vec![0.0; h];
        gru_backward(
            &w.enc_bwd,
            &mut gw.enc_bwd,
            emb,
            prev,
            &cache.enc.bwd[i],
            &d_h,
            &mut d_input,
            &mut d_prev,
        );
        axpy(1.0, &d_input, gw.src_embed.row_mut(x[i] as usize));
        d_h_carry = d_prev;
    }

    (cache.log_prob, grad)
}

/// log P(y, EOS | x) and its gradient with respect to every parameter block.
pub fn grad_logprob(params: &ModelParams, x: &[u32], y: &[u32]) -> Result<(f64, Gradient)> {
    super::forward::check_pair(params, x, y)?;
    let mut scored = y.to_vec();
    scored.push(params.config.eos);
    Ok(grad_scored(params, x, &scored))
}

/// Central finite-difference gradient of `f` with respect to one scalar
/// parameter, used by the test oracles.
pub fn finite_difference<F>(params: &ModelParams, block: &str, index: usize, step: f64, f: F) -> f64
where
    F: Fn(&ModelParams) -> f64,
{
    let mut plus = params.clone();
    bump(&mut plus, block, index, step);
    let mut minus = params.clone();
    bump(&mut minus, block, index, -step);
    (f(&plus) - f(&minus)) / (2.0 * step)
}

fn bump(params: &mut ModelParams, block: &str, index: usize, delta: f64) {
    for (name, m) in params.weights.blocks_mut() {
        if name == block {
            m.data[index] += delta;
            return;
        }
    }
    panic!("unknown block {block}");
}

/// Look up a gradient entry by block name, for the test oracles.
pub fn grad_entry(grad: &Gradient, block: &str, index: usize) -> f64 {
    for (name, m) in grad.weights.blocks() {
        if name == block {
            return m.data[index];
        }
    }
    panic!("unknown block {block}");
}

/// Block names and sizes, convenient for exhaustive oracle sweeps.
pub fn block_shapes(params: &ModelParams) -> Vec<(&'static str, usize)> {
    params
        .weights
        .blocks()
        .into_iter()
        .map(|(n, m): (&'static str, &Mat)| (n, m.data.len()))
        .collect()
}
