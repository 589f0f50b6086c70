//! The attention encoder-decoder translation model.
//!
//! A single-layer bidirectional GRU encoder produces one annotation vector
//! per source token; an MLP attention scorer and a single-layer GRU decoder
//! consume them. The decoder readout combines state, context, and previous
//! target embedding before the output projection. Depth is fixed; all
//! parameters are `f64`.
//!
//! Submodules provide forced-decoding log-probabilities with attention
//! extraction ([`forward`]), full hand-derived backpropagation ([`backward`]),
//! ancestral sampling ([`sample`]), beam search ([`beam`]), and checkpoint
//! serialization ([`checkpoint`]).

pub mod backward;
pub mod beam;
pub mod checkpoint;
pub mod forward;
pub mod sample;

pub use backward::grad_logprob;
pub use beam::{beam_search, greedy_decode};
pub use forward::{forward_logprob, Decoder, DecoderState, PendingState, StepOutput};
pub use sample::sample_translations;

use crate::corpus::{BOS_ID, EOS_ID};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::{stream_rng, Pcg64};

/// Model dimensions plus the token ids the decoder treats as sentence
/// delimiters. `bos`/`eos` default to the corpus conventions but stay
/// configurable so tiny synthetic vocabularies work too.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub bos: u32,
    pub eos: u32,
}

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            embed_dim,
            hidden_dim,
            attn_dim: hidden_dim,
            bos: BOS_ID,
            eos: EOS_ID,
        }
    }

    /// Readout dimension; tied to the embedding dimension.
    pub fn readout_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_vocab == 0
            || self.tgt_vocab == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.attn_dim == 0
        {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if (self.bos as usize) >= self.tgt_vocab || (self.eos as usize) >= self.tgt_vocab {
            return Err(Error::Config(
                "bos/eos ids must lie inside the target vocabulary".into(),
            ));
        }
        Ok(())
    }
}

/// Weights of one gated recurrent cell: per gate an input matrix `w`
/// (hidden x input), a recurrent matrix `u` (hidden x hidden), and a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_update: Mat,
    pub u_update: Mat,
    pub b_update: Mat,
    pub w_reset: Mat,
    pub u_reset: Mat,
    pub b_reset: Mat,
    pub w_cand: Mat,
    pub u_cand: Mat,
    pub b_cand: Mat,
}

impl GruWeights {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruWeights {
            w_update: Mat::zeros(hidden_dim, input_dim),
            u_update: Mat::zeros(hidden_dim, hidden_dim),
            b_update: Mat::zeros(hidden_dim, 1),
            w_reset: Mat::zeros(hidden_dim, input_dim),
            u_reset: Mat::zeros(hidden_dim, hidden_dim),
            b_reset: Mat::zeros(hidden_dim, 1),
            w_cand: Mat::zeros(hidden_dim, input_dim),
            u_cand: Mat::zeros(hidden_dim, hidden_dim),
            b_cand: Mat::zeros(hidden_dim, 1),
        }
    }
}

/// All weight blocks, shared between [`ModelParams`], [`Gradient`], and
/// optimizer state so they are shape-congruent by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// src_vocab x embed
    pub src_embed: Mat,
    /// tgt_vocab x embed
    pub tgt_embed: Mat,
    pub enc_fwd: GruWeights,
    pub enc_bwd: GruWeights,
    /// attn x hidden, applied to the previous decoder state
    pub att_state: Mat,
    /// attn x 2*hidden, applied to each annotation
    pub att_annot: Mat,
    /// 1 x attn score vector
    pub att_score: Mat,
    /// hidden x hidden, maps the backward encoder state at position 1 to the
    /// initial decoder state
    pub init_state: Mat,
    pub init_bias: Mat,
    /// decoder cell; input is [target embedding; context]
    pub dec: GruWeights,
    /// readout x hidden
    pub ro_state: Mat,
    /// readout x 2*hidden
    pub ro_context: Mat,
    /// readout x embed
    pub ro_embed: Mat,
    pub ro_bias: Mat,
    /// tgt_vocab x readout
    pub out_proj: Mat,
    pub out_bias: Mat,
}

impl ParamSet {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let e = cfg.embed_dim;
        let h = cfg.hidden_dim;
        let a = cfg.attn_dim;
        let r = cfg.readout_dim();
        ParamSet {
            src_embed: Mat::zeros(cfg.src_vocab, e),
            tgt_embed: Mat::zeros(cfg.tgt_vocab, e),
            enc_fwd: GruWeights::zeros(e, h),
            enc_bwd: GruWeights::zeros(e, h),
            att_state: Mat::zeros(a, h),
            att_annot: Mat::zeros(a, 2 * h),
            att_score: Mat::zeros(1, a),
            init_state: Mat::zeros(h, h),
            init_bias: Mat::zeros(h, 1),
            dec: GruWeights::zeros(e + 2 * h, h),
            ro_state: Mat::zeros(r, h),
            ro_context: Mat::zeros(r, 2 * h),
            ro_embed: Mat::zeros(r, e),
            ro_bias: Mat::zeros(r, 1),
            out_proj: Mat::zeros(cfg.tgt_vocab, r),
            out_bias: Mat::zeros(cfg.tgt_vocab, 1),
        }
    }

    pub fn blocks(&self) -> Vec<(&'static str, &Mat)> {
        fn gru<'a>(prefix: &'static str, g: &'a GruWeights, out: &mut Vec<(&'static str, &'a Mat)>) {
            let names: [(&'static str, &'a Mat); 9] = match prefix {
                "enc_fwd" => [
                    ("enc_fwd.w_update", &g.w_update),
                    ("enc_fwd.u_update", &g.u_update),
                    ("enc_fwd.b_update", &g.b_update),
                    ("enc_fwd.w_reset", &g.w_reset),
                    ("enc_fwd.u_reset", &g.u_reset),
                    ("enc_fwd.b_reset", &g.b_reset),
                    ("enc_fwd.w_cand", &g.w_cand),
                    ("enc_fwd.u_cand", &g.u_cand),
                    ("enc_fwd.b_cand", &g.b_cand),
                ],
                "enc_bwd" => [
                    ("enc_bwd.w_update", &g.w_update),
                    ("enc_bwd.u_update", &g.u_update),
                    ("enc_bwd.b_update", &g.b_update),
                    ("enc_bwd.w_reset", &g.w_reset),
                    ("enc_bwd.u_reset", &g.u_reset),
                    ("enc_bwd.b_reset", &g.b_reset),
                    ("enc_bwd.w_cand", &g.w_cand),
                    ("enc_bwd.u_cand", &g.u_cand),
                    ("enc_bwd.b_cand", &g.b_cand),
                ],
                _ => [
                    ("dec.w_update", &g.w_update),
                    ("dec.u_update", &g.u_update),
                    ("dec.b_update", &g.b_update),
                    ("dec.w_reset", &g.w_reset),
                    ("dec.u_reset", &g.u_reset),
                    ("dec.b_reset", &g.b_reset),
                    ("dec.w_cand", &g.w_cand),
                    ("dec.u_cand", &g.u_cand),
                    ("dec.b_cand", &g.b_cand),
                ],
            };
            out.extend(names);
        }

        let mut out = Vec::with_capacity(40);
        out.push(("src_embed", &self.src_embed));
        out.push(("tgt_embed", &self.tgt_embed));
        gru("enc_fwd", &self.enc_fwd, &mut out);
        gru("enc_bwd", &self.enc_bwd, &mut out);
        out.push(("att_state", &self.att_state));
        out.push(("att_annot", &self.att_annot));
        out.push(("att_score", &self.att_score));
        out.push(("init_state", &self.init_state));
        out.push(("init_bias", &self.init_bias));
        gru("dec", &self.dec, &mut out);
        out.push(("ro_state", &self.ro_state));
        out.push(("ro_context", &self.ro_context));
        out.push(("ro_embed", &self.ro_embed));
        out.push(("ro_bias", &self.ro_bias));
        out.push(("out_proj", &self.out_proj));
        out.push(("out_bias", &self.out_bias));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        fn gru<'a>(
            prefix: &'static str,
            g: &'a mut GruWeights,
            out: &mut Vec<(&'static str, &'a mut Mat)>,
        ) {
            let (wu, uu, bu, wr, ur, br, wc, uc, bc) = (
                &mut g.w_update,
                &mut g.u_update,
                &mut g.b_update,
                &mut g.w_reset,
                &mut g.u_reset,
                &mut g.b_reset,
                &mut g.w_cand,
                &mut g.u_cand,
                &mut g.b_cand,
            );
            match prefix {
                "enc_fwd" => out.extend([
                    ("enc_fwd.w_update", wu),
                    ("enc_fwd.u_update", uu),
                    ("enc_fwd.b_update", bu),
                    ("enc_fwd.w_reset", wr),
                    ("enc_fwd.u_reset", ur),
                    ("enc_fwd.b_reset", br),
                    ("enc_fwd.w_cand", wc),
                    ("enc_fwd.u_cand", uc),
                    ("enc_fwd.b_cand", bc),
                ]),
                "enc_bwd" => out.extend([
                    ("enc_bwd.w_update", wu),
                    ("enc_bwd.u_update", uu),
                    ("enc_bwd.b_update", bu),
                    ("enc_bwd.w_reset", wr),
                    ("enc_bwd.u_reset", ur),
                    ("enc_bwd.b_reset", br),
                    ("enc_bwd.w_cand", wc),
                    ("enc_bwd.u_cand", uc),
                    ("enc_bwd.b_cand", bc),
                ]),
                _ => out.extend([
                    ("dec.w_update", wu),
                    ("dec.u_update", uu),
                    ("dec.b_update", bu),
                    ("dec.w_reset", wr),
                    ("dec.u_reset", ur),
                    ("dec.b_reset", br),
                    ("dec.w_cand", wc),
                    ("dec.u_cand", uc),
                    ("dec.b_cand", bc),
                ]),
            }
        }

        let ParamSet {
            src_embed,
            tgt_embed,
            enc_fwd,
            enc_bwd,
            att_state,
            att_annot,
            att_score,
            init_state,
            init_bias,
            dec,
            ro_state,
            ro_context,
            ro_embed,
            ro_bias,
            out_proj,
            out_bias,
        } = self;
        let mut out = Vec::with_capacity(40);
        out.push(("src_embed", src_embed));
        out.push(("tgt_embed", tgt_embed));
        gru("enc_fwd", enc_fwd, &mut out);
        gru("enc_bwd", enc_bwd, &mut out);
        out.push(("att_state", att_state));
        out.push(("att_annot", att_annot));
        out.push(("att_score", att_score));
        out.push(("init_state", init_state));
        out.push(("init_bias", init_bias));
        gru("dec", dec, &mut out);
        out.push(("ro_state", ro_state));
        out.push(("ro_context", ro_context));
        out.push(("ro_embed", ro_embed));
        out.push(("ro_bias", ro_bias));
        out.push(("out_proj", out_proj));
        out.push(("out_bias", out_bias));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, m)| m.data.len()).sum()
    }

    /// self += a * other, block by block.
    pub fn axpy(&mut self, a: f64, other: &ParamSet) {
        let other_blocks = other.blocks();
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other_blocks) {
            crate::linalg::axpy(a, &src.data, &mut dst.data);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for (_, m) in self.blocks_mut() {
            for v in &mut m.data {
                *v *= a;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, m)| m.is_finite())
    }
}

/// The full model: configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: ParamSet,
}

/// d(log P)/d(theta), shape-congruent with the model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: ParamSet,
}

impl Gradient {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Gradient {
            weights: ParamSet::zeros(cfg),
        }
    }
}

/// Deterministically initialize parameters: every weight matrix is drawn
/// uniformly from (-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = column
/// count, biases start at zero.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut weights = ParamSet::zeros(cfg);
    let mut rng = stream_rng(seed, "init", 0);
    for (name, m) in weights.blocks_mut() {
        if name.ends_with("bias") || name.contains(".b_") {
            continue; // biases stay zero
        }
        fill_uniform(m, &mut rng);
    }
    Ok(ModelParams {
        config: cfg.clone(),
        weights,
    })
}

fn fill_uniform(m: &mut Mat, rng: &mut Pcg64) {
    let scale = 1.0 / (m.cols as f64).sqrt();
    for v in &mut m.data {
        *v = rng.uniform_symmetric(scale);
    }
}

/// Per-hypothesis attention probabilities: one row per scored target step,
/// one column per source token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    target_len: usize,
    source_len: usize,
    data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn new(source_len: usize) -> Self {
        AttentionMatrix {
            target_len: 0,
            source_len,
            data: Vec::new(),
        }
    }

    pub fn from_rows(source_len: usize, rows: Vec<Vec<f64>>) -> Self {
        let mut m = AttentionMatrix::new(source_len);
        for r in rows {
            m.push_row(r);
        }
        m
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.source_len, "attention row width mismatch");
        self.data.extend(row);
        self.target_len += 1;
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.source_len..(j + 1) * self.source_len]
    }

    /// Attention mass received by each source position, summed over target
    /// steps.
    pub fn source_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.source_len];
        for j in 0..self.target_len {
            for (s, a) in sums.iter_mut().zip(self.row(j)) {
                *s += a;
            }
        }
        sums
    }

    /// Each row sums to one (within tol) and all entries are non-negative.
    pub fn is_normalized(&self, tol: f64) -> bool {
        (0..self.target_len).all(|j| {
            let row = self.row(j);
            row.iter().all(|a| *a >= 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }
}

/// One candidate translation: the scored token sequence (EOS-terminated
/// unless generation hit the length cap), its total log-probability, and the
/// attention recorded while scoring it. Attention rows match the token count.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub attention: AttentionMatrix,
}

/// Deduplicated candidate translations for one source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub source: Vec<u32>,
    pub hypotheses: Vec<Hypothesis>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_for_fixed_seed() {
        let cfg = ModelConfig::new(11, 13, 6, 5);
        let a = init_params(&cfg, 42).unwrap();
        let b = init_params(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_zeroes_biases_and_bounds_weights() {
        let cfg = ModelConfig::new(7, 9, 4, 3);
        let p = init_params(&cfg, 1).unwrap();
        assert!(p.weights.dec.b_update.data.iter().all(|v| *v == 0.0));
        assert!(p.weights.out_bias.data.iter().all(|v| *v == 0.0));
        assert!(p.weights.init_bias.data.iter().all(|v| *v == 0.0));
        let scale = 1.0 / (p.weights.att_state.cols as f64).sqrt();
        assert!(p.weights.att_state.data.iter().all(|v| v.abs() < scale));
        assert!(p.weights.att_state.data.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn production_and_toy_scale_shapes_are_accepted() {
        // production-scale dims; just shape bookkeeping, no allocation
        // concerns at a few hundred MB
        let cfg = ModelConfig::new(30_000, 30_000, 620, 1000);
        assert!(cfg.validate().is_ok());
        let weights = ParamSet::zeros(&ModelConfig::new(10, 10, 620, 1000));
        assert_eq!(weights.att_annot.cols, 2000);

        let cfg = ModelConfig::new(100, 100, 32, 64);
        let p = init_params(&cfg, 0).unwrap();
        assert_eq!(p.weights.src_embed.rows, 100);
        assert_eq!(p.weights.dec.w_update.cols, 32 + 128);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(init_params(&ModelConfig::new(0, 5, 2, 2), 0).is_err());
        let mut cfg = ModelConfig::new(5, 2, 2, 2);
        cfg.eos = 5;
        assert!(init_params(&cfg, 0).is_err());
    }

    #[test]
    fn axpy_and_scale_operate_blockwise() {
        let cfg = ModelConfig::new(5, 6, 3, 2);
        let mut a = ParamSet::zeros(&cfg);
        let b = init_params(&cfg, 9).unwrap().weights;
        a.axpy(2.0, &b);
        a.axpy(-2.0, &b);
        assert!(a.blocks().iter().all(|(_, m)| m.data.iter().all(|v| v.abs() < 1e-15)));
        let mut c = b.clone();
        c.scale(0.0);
        assert!(c.blocks().iter().all(|(_, m)| m.data.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn block_lists_line_up() {
        let cfg = ModelConfig::new(5, 6, 3, 2);
        let mut p = ParamSet::zeros(&cfg);
        let names: Vec<_> = p.blocks().iter().map(|(n, _)| *n).collect();
        let names_mut: Vec<_> = p.blocks_mut().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names.len(), 40);
    }

    #[test]
    fn attention_matrix_source_sums() {
        let m = AttentionMatrix::from_rows(2, vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
        assert_eq!(m.source_sums(), vec![0.75, 1.25]);
        assert!(m.is_normalized(1e-9));
    }
}
