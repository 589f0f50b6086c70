//! Ancestral sampling of candidate translations.

use crate::error::{Error, Result};
use crate::model::forward::Decoder;
use crate::model::{AttentionMatrix, Hypothesis, ModelParams, SampleSet};
use crate::par;
use crate::rng::{stream_rng, Pcg64};

/// Draw `k` temperature-1 samples from the model, truncate at `max_len`
/// tokens, and deduplicate. Every retained hypothesis carries the exact
/// log-probability and attention recorded while it was generated. Each draw
/// uses its own RNG stream derived from `(seed, draw index)`, so results are
/// reproducible and independent of evaluation order.
pub fn sample_translations(
    params: &ModelParams,
    x: &[u32],
    k: usize,
    max_len: usize,
    seed: u64,
) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let decoder = Decoder::new(params, x)?;

    let draws = par::map_range(k, |draw| {
        let mut rng = stream_rng(seed, "sampling", draw as u64);
        sample_one(&decoder, max_len, &mut rng)
    });

    let mut hypotheses: Vec<Hypothesis> = Vec::new();
    for hyp in draws {
        if !hypotheses.iter().any(|h| h.tokens == hyp.tokens) {
            hypotheses.push(hyp);
        }
    }
    Ok(SampleSet {
        source: x.to_vec(),
        hypotheses,
    })
}

fn sample_one(decoder: &Decoder, max_len: usize, rng: &mut Pcg64) -> Hypothesis {
    let eos = decoder.eos();
    let mut state = decoder.start_state();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut attention = AttentionMatrix::new(decoder.source_len());

    for _ in 0..max_len {
        let out = decoder.step(&state);
        let token = draw_categorical(&out.log_probs, rng);
        log_prob += out.log_probs[token as usize];
        attention.push_row(out.attention);
        tokens.push(token);
        if token == eos {
            break;
        }
        state = decoder.advance(out.state, token);
    }

    Hypothesis {
        tokens,
        log_prob,
        attention,
    }
}

/// Inverse-CDF draw over a normalized log-probability vector.
fn draw_categorical(log_probs: &[f64], rng: &mut Pcg64) -> u32 {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i as u32;
        }
    }
    (log_probs.len() - 1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn toy_params(seed: u64) -> ModelParams {
        init_params(&ModelConfig::new(6, 7, 4, 5), seed).unwrap()
    }

    #[test]
    fn sampling_is_reproducible_and_capped() {
        let p = toy_params(9);
        let a = sample_translations(&p, &[4, 5], 80, 10, 123).unwrap();
        let b = sample_translations(&p, &[4, 5], 80, 10, 123).unwrap();
        assert_eq!(a, b);
        assert!(!a.hypotheses.is_empty());
        assert!(a.hypotheses.len() <= 80);
        let c = sample_translations(&p, &[4, 5], 80, 10, 124).unwrap();
        assert!(c.hypotheses.len() <= 80);
    }

    #[test]
    fn hypotheses_are_distinct_and_well_formed() {
        let p = toy_params(2);
        let set = sample_translations(&p, &[4, 5, 4], 40, 6, 7).unwrap();
        for (i, h) in set.hypotheses.iter().enumerate() {
            assert!(h.log_prob <= 0.0);
            assert_eq!(h.attention.target_len(), h.tokens.len());
            assert!(h.attention.is_normalized(1e-9));
            assert!(h.tokens.len() <= 6);
            // EOS only ever terminal
            for &t in &h.tokens[..h.tokens.len() - 1] {
                assert_ne!(t, p.config.eos);
            }
            for other in &set.hypotheses[i + 1..] {
                assert_ne!(h.tokens, other.tokens);
            }
        }
    }

    #[test]
    fn degenerate_distribution_collapses_to_one_sample() {
        // a huge bias on one output token makes the softmax deterministic
        let cfg = ModelConfig::new(5, 6, 3, 3);
        let mut p = init_params(&cfg, 1).unwrap();
        for v in &mut p.weights.out_proj.data {
            *v = 0.0;
        }
        p.weights.out_bias.data[cfg.eos as usize] = 60.0;
        let set = sample_translations(&p, &[4], 100, 8, 5).unwrap();
        assert_eq!(set.hypotheses.len(), 1);
        assert_eq!(set.hypotheses[0].tokens, vec![cfg.eos]);
    }
}
