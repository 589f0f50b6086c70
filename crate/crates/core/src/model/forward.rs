//! Encoder and decoder forward passes.
//!
//! Two routes share the same step primitives: [`forward_logprob`] force-decodes
//! a full target sequence in one pass (caching every intermediate for the
//! backward pass), while [`Decoder`] exposes a stateless one-step API that
//! sampling, greedy, and beam search drive incrementally.

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, sigmoid};
use crate::model::{AttentionMatrix, GruWeights, ModelParams};

/// Activations of one GRU step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct GruStepCache {
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub cand: Vec<f64>,
    pub state: Vec<f64>,
}

/// One GRU cell step: state = (1-z)*prev + z*cand.
pub(crate) fn gru_step(w: &GruWeights, input: &[f64], prev: &[f64]) -> GruStepCache {
    let h = prev.len();
    let mut update = w.b_update.data.clone();
    w.w_update.matvec_add(input, &mut update);
    w.u_update.matvec_add(prev, &mut update);
    for v in &mut update {
        *v = sigmoid(*v);
    }

    let mut reset = w.b_reset.data.clone();
    w.w_reset.matvec_add(input, &mut reset);
    w.u_reset.matvec_add(prev, &mut reset);
    for v in &mut reset {
        *v = sigmoid(*v);
    }

    let gated: Vec<f64> = reset.iter().zip(prev).map(|(r, p)| r * p).collect();
    let mut cand = w.b_cand.data.clone();
    w.w_cand.matvec_add(input, &mut cand);
    w.u_cand.matvec_add(&gated, &mut cand);
    for v in &mut cand {
        *v = v.tanh();
    }

    let mut state = vec![0.0; h];
    for i in 0..h {
        state[i] = (1.0 - update[i]) * prev[i] + update[i] * cand[i];
    }
    GruStepCache {
        update,
        reset,
        cand,
        state,
    }
}

/// Everything the encoder produces for one source sentence.
#[derive(Debug, Clone)]
pub(crate) struct EncoderCache {
    /// forward-direction GRU steps, index i = source position
    pub fwd: Vec<GruStepCache>,
    /// backward-direction GRU steps, index i = source position
    pub bwd: Vec<GruStepCache>,
    /// [fwd_i; bwd_i] per source position
    pub annotations: Vec<Vec<f64>>,
    /// att_annot * annotation_i, precomputed per source position
    pub ua_annot: Vec<Vec<f64>>,
    /// initial decoder state tanh(init_state * bwd_0 + init_bias)
    pub s0: Vec<f64>,
}

pub(crate) fn encode(params: &ModelParams, x: &[u32]) -> EncoderCache {
    let cfg = &params.config;
    let w = &params.weights;
    let h = cfg.hidden_dim;
    let n = x.len();

    let mut fwd = Vec::with_capacity(n);
    let mut prev = vec![0.0; h];
    for &tok in x {
        let step = gru_step(&w.enc_fwd, w.src_embed.row(tok as usize), &prev);
        prev = step.state.clone();
        fwd.push(step);
    }

    let mut bwd: Vec<Option<GruStepCache>> = (0..n).map(|_| None).collect();
    let mut prev = vec![0.0; h];
    for i in (0..n).rev() {
        let step = gru_step(&w.enc_bwd, w.src_embed.row(x[i] as usize), &prev);
        prev = step.state.clone();
        bwd[i] = Some(step);
    }
    let bwd: Vec<GruStepCache> = bwd.into_iter().map(|s| s.unwrap()).collect();

    let annotations: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut a = Vec::with_capacity(2 * h);
            a.extend_from_slice(&fwd[i].state);
            a.extend_from_slice(&bwd[i].state);
            a
        })
        .collect();

    let ua_annot: Vec<Vec<f64>> = annotations
        .iter()
        .map(|a| {
            let mut out = vec![0.0; cfg.attn_dim];
            w.att_annot.matvec(a, &mut out);
            out
        })
        .collect();

    let mut s0 = w.init_bias.data.clone();
    w.init_state.matvec_add(&bwd[0].state, &mut s0);
    for v in &mut s0 {
        *v = v.tanh();
    }

    EncoderCache {
        fwd,
        bwd,
        annotations,
        ua_annot,
        s0,
    }
}

/// Raw pieces of one decoder step before the output nonlinearity is resolved
/// into probabilities.
pub(crate) struct RawStep {
    pub attn_row: Vec<f64>,
    pub context: Vec<f64>,
    /// att_state * s_prev, reused by the backward pass
    pub wa_state: Vec<f64>,
    pub gru: GruStepCache,
    pub readout: Vec<f64>,
    pub logits: Vec<f64>,
}

/// One decoder step from state `s_prev` after emitting `prev_token`:
/// attention over the annotations, context, GRU update, readout, logits.
pub(crate) fn decode_step(
    params: &ModelParams,
    enc: &EncoderCache,
    s_prev: &[f64],
    prev_token: u32,
) -> RawStep {
    let cfg = &params.config;
    let w = &params.weights;
    let n = enc.annotations.len();

    let mut wa_state = vec![0.0; cfg.attn_dim];
    w.att_state.matvec(s_prev, &mut wa_state);

    let mut attn_row = vec![0.0; n];
    let score_vec = w.att_score.row(0);
    for (i, slot) in attn_row.iter_mut().enumerate() {
        let mut q = 0.0;
        for (k, ua) in enc.ua_annot[i].iter().enumerate() {
            q += score_vec[k] * (wa_state[k] + ua).tanh();
        }
        *slot = q;
    }
    crate::linalg::softmax_inplace(&mut attn_row);

    let mut context = vec![0.0; 2 * cfg.hidden_dim];
    for (i, a) in attn_row.iter().enumerate() {
        crate::linalg::axpy(*a, &enc.annotations[i], &mut context);
    }

    let emb = w.tgt_embed.row(prev_token as usize);
    let mut input = Vec::with_capacity(cfg.embed_dim + 2 * cfg.hidden_dim);
    input.extend_from_slice(emb);
    input.extend_from_slice(&context);
    let gru = gru_step(&w.dec, &input, s_prev);

    let mut readout = w.ro_bias.data.clone();
    w.ro_state.matvec_add(&gru.state, &mut readout);
    w.ro_context.matvec_add(&context, &mut readout);
    w.ro_embed.matvec_add(emb, &mut readout);
    for v in &mut readout {
        *v = v.tanh();
    }

    let mut logits = w.out_bias.data.clone();
    w.out_proj.matvec_add(&readout, &mut logits);

    RawStep {
        attn_row,
        context,
        wa_state,
        gru,
        readout,
        logits,
    }
}

/// One forced-decoding step with the softmax resolved.
#[derive(Debug, Clone)]
pub(crate) struct DecoderStepCache {
    pub prev_token: u32,
    pub attn_row: Vec<f64>,
    pub context: Vec<f64>,
    pub wa_state: Vec<f64>,
    pub gru: GruStepCache,
    pub readout: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Full forward cache for one (source, scored-target) pair.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub enc: EncoderCache,
    pub steps: Vec<DecoderStepCache>,
    pub log_prob: f64,
}

/// Force-decode `scored` (which already ends in EOS unless truncated),
/// caching every activation.
pub(crate) fn forced_forward(params: &ModelParams, x: &[u32], scored: &[u32]) -> ForwardCache {
    let cfg = &params.config;
    let enc = encode(params, x);
    let mut steps = Vec::with_capacity(scored.len());
    let mut s_prev = enc.s0.clone();
    let mut prev_token = cfg.bos;
    let mut log_prob = 0.0;

    for &tok in scored {
        let raw = decode_step(params, &enc, &s_prev, prev_token);
        let lse = log_sum_exp(&raw.logits);
        let logp = raw.logits[tok as usize] - lse;
        let mut probs = raw.logits;
        crate::linalg::softmax_inplace(&mut probs);
        log_prob += logp;
        s_prev = raw.gru.state.clone();
        steps.push(DecoderStepCache {
            prev_token,
            attn_row: raw.attn_row,
            context: raw.context,
            wa_state: raw.wa_state,
            gru: raw.gru,
            readout: raw.readout,
            probs,
        });
        prev_token = tok;
    }

    ForwardCache {
        enc,
        steps,
        log_prob,
    }
}

pub(crate) fn check_pair(params: &ModelParams, x: &[u32], y: &[u32]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Shape("source and target must be non-empty".into()));
    }
    let cfg = &params.config;
    if let Some(&t) = x.iter().find(|&&t| t as usize >= cfg.src_vocab) {
        return Err(Error::Shape(format!(
            "source token {t} out of vocabulary range {}",
            cfg.src_vocab
        )));
    }
    if let Some(&t) = y.iter().find(|&&t| t as usize >= cfg.tgt_vocab) {
        return Err(Error::Shape(format!(
            "target token {t} out of vocabulary range {}",
            cfg.tgt_vocab
        )));
    }
    Ok(())
}

/// log P(y, EOS | x) under forced decoding, plus the attention matrix with
/// one row per scored step (|y| + 1 rows, the last for EOS).
pub fn forward_logprob(
    params: &ModelParams,
    x: &[u32],
    y: &[u32],
) -> Result<(f64, AttentionMatrix)> {
    check_pair(params, x, y)?;
    let mut scored = y.to_vec();
    scored.push(params.config.eos);
    let cache = forced_forward(params, x, &scored);
    let mut attention = AttentionMatrix::new(x.len());
    for step in &cache.steps {
        attention.push_row(step.attn_row.clone());
    }
    Ok((cache.log_prob, attention))
}

/// Incremental decoding session over one source sentence. The struct itself
/// is immutable after construction; per-hypothesis state lives in
/// [`DecoderState`], so many hypotheses can share one `Decoder`.
pub struct Decoder<'a> {
    params: &'a ModelParams,
    enc: EncoderCache,
    source_len: usize,
}

/// Recurrent state of one partial hypothesis.
#[derive(Debug, Clone)]
pub struct DecoderState {
    s: Vec<f64>,
    prev_token: u32,
}

/// Post-step recurrent state that still needs the emitted token bound via
/// [`Decoder::advance`] before it can be stepped again.
#[derive(Debug, Clone)]
pub struct PendingState {
    s: Vec<f64>,
}

/// Result of advancing one step: normalized log-probabilities over the target
/// vocabulary, the attention row used, and the state after the step.
pub struct StepOutput {
    pub log_probs: Vec<f64>,
    pub attention: Vec<f64>,
    pub state: PendingState,
}

impl<'a> Decoder<'a> {
    pub fn new(params: &'a ModelParams, x: &[u32]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Shape("source must be non-empty".into()));
        }
        if let Some(&t) = x.iter().find(|&&t| t as usize >= params.config.src_vocab) {
            return Err(Error::Shape(format!(
                "source token {t} out of vocabulary range {}",
                params.config.src_vocab
            )));
        }
        let enc = encode(params, x);
        Ok(Decoder {
            params,
            enc,
            source_len: x.len(),
        })
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn vocab_size(&self) -> usize {
        self.params.config.tgt_vocab
    }

    pub fn eos(&self) -> u32 {
        self.params.config.eos
    }

    pub fn start_state(&self) -> DecoderState {
        DecoderState {
            s: self.enc.s0.clone(),
            prev_token: self.params.config.bos,
        }
    }

    /// Advance one step from `state`, conditioning on the token that state
    /// last emitted.
    pub fn step(&self, state: &DecoderState) -> StepOutput {
        let raw = decode_step(self.params, &self.enc, &state.s, state.prev_token);
        let lse = log_sum_exp(&raw.logits);
        let mut log_probs = raw.logits;
        for v in &mut log_probs {
            *v -= lse;
        }
        StepOutput {
            log_probs,
            attention: raw.attn_row,
            state: PendingState { s: raw.gru.state },
        }
    }

    /// Bind the emitted token into the post-step state.
    pub fn advance(&self, pending: PendingState, token: u32) -> DecoderState {
        debug_assert!((token as usize) < self.params.config.tgt_vocab);
        DecoderState {
            s: pending.s,
            prev_token: token,
        }
    }
}
