//! Length-unnormalized beam search.

use crate::error::{Error, Result};
use crate::model::forward::{Decoder, DecoderState};
use crate::model::{AttentionMatrix, Hypothesis, ModelParams};
use crate::par;

struct Live {
    tokens: Vec<u32>,
    log_prob: f64,
    attn_rows: Vec<Vec<f64>>,
    state: DecoderState,
}

/// Standard beam search over summed log-probabilities. Each step expands
/// every live hypothesis over the whole vocabulary and keeps the
/// `beam_size` best extensions; extensions ending in EOS retire to the
/// finished pool, and anything still alive at `max_len` tokens is finalized
/// as-is. Ties break toward the lexicographically smaller token sequence.
/// Returns at most `beam_size` hypotheses, best first.
pub fn beam_search(
    params: &ModelParams,
    x: &[u32],
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if beam_size == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let decoder = Decoder::new(params, x)?;
    let vocab = decoder.vocab_size();
    let eos = decoder.eos();

    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        attn_rows: Vec::new(),
        state: decoder.start_state(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        // Once the finished pool alone fills the beam and strictly beats the
        // best live prefix, no extension (log-probs only shrink scores) can
        // displace anything.
        if finished.len() >= beam_size {
            let mut scores: Vec<f64> = finished.iter().map(|h| h.log_prob).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let kth = scores[beam_size - 1];
            let best_live = live
                .iter()
                .map(|l| l.log_prob)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_live < kth {
                break;
            }
        }

        let states: Vec<&DecoderState> = live.iter().map(|l| &l.state).collect();
        let outs = par::map_collect(&states, |s| decoder.step(s));

        // candidate = (score, live index, token); live is kept sorted
        // lexicographically, so this triple orders exactly like the full
        // extended sequences
        let mut candidates: Vec<(f64, usize, u32)> = Vec::with_capacity(live.len() * vocab);
        for (li, (l, out)) in live.iter().zip(&outs).enumerate() {
            for t in 0..vocab {
                candidates.push((l.log_prob + out.log_probs[t], li, t as u32));
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(beam_size);
        // restore lexicographic order among the survivors
        candidates.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.cmp(&b.2)));

        let mut next_live = Vec::with_capacity(beam_size);
        for (score, li, token) in candidates {
            let src = &live[li];
            let out = &outs[li];
            let mut tokens = src.tokens.clone();
            tokens.push(token);
            let mut attn_rows = src.attn_rows.clone();
            attn_rows.push(out.attention.clone());
            if token == eos {
                finished.push(Hypothesis {
                    tokens,
                    log_prob: score,
                    attention: AttentionMatrix::from_rows(x.len(), attn_rows),
                });
            } else {
                next_live.push(Live {
                    tokens,
                    log_prob: score,
                    attn_rows,
                    state: decoder.advance(out.state.clone(), token),
                });
            }
        }
        live = next_live;
    }

    for l in live {
        finished.push(Hypothesis {
            tokens: l.tokens,
            log_prob: l.log_prob,
            attention: AttentionMatrix::from_rows(x.len(), l.attn_rows),
        });
    }

    finished.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then(a.tokens.cmp(&b.tokens)));
    finished.truncate(beam_size);
    Ok(finished)
}

/// Greedy decoding: stepwise argmax with ties broken toward the lowest token
/// id. Equivalent to `beam_search` with beam size 1.
pub fn greedy_decode(params: &ModelParams, x: &[u32], max_len: usize) -> Result<Hypothesis> {
    let decoder = Decoder::new(params, x)?;
    let eos = decoder.eos();
    let mut state = decoder.start_state();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut attention = AttentionMatrix::new(x.len());
    for _ in 0..max_len {
        let out = decoder.step(&state);
        let (token, lp) = out
            .log_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, lp)| (i as u32, *lp))
            .expect("non-empty vocabulary");
        tokens.push(token);
        log_prob += lp;
        attention.push_row(out.attention);
        if token == eos {
            break;
        }
        state = decoder.advance(out.state, token);
    }
    Ok(Hypothesis {
        tokens,
        log_prob,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn toy_params(seed: u64) -> ModelParams {
        init_params(&ModelConfig::new(7, 8, 4, 5), seed).unwrap()
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in 0..5 {
            let p = toy_params(seed);
            let x = [4, 5, 6];
            let beam = beam_search(&p, &x, 1, 8).unwrap();
            let greedy = greedy_decode(&p, &x, 8).unwrap();
            assert_eq!(beam.len(), 1);
            assert_eq!(beam[0].tokens, greedy.tokens);
            assert!((beam[0].log_prob - greedy.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_sorted_and_capped() {
        let p = toy_params(3);
        let hyps = beam_search(&p, &[4, 5], 10, 6).unwrap();
        assert!(hyps.len() <= 10);
        for w in hyps.windows(2) {
            assert!(w[0].log_prob >= w[1].log_prob);
        }
        for h in &hyps {
            assert_eq!(h.attention.target_len(), h.tokens.len());
            assert!(h.attention.is_normalized(1e-9));
        }
    }

    #[test]
    fn wide_beam_is_exhaustive_on_a_two_token_vocabulary() {
        // vocab {0, 1}, eos = 1: all complete outputs up to max_len 3 are
        // [1], [0 1], [0 0 1], [0 0 0]
        let cfg = ModelConfig {
            src_vocab: 3,
            tgt_vocab: 2,
            embed_dim: 3,
            hidden_dim: 4,
            attn_dim: 3,
            bos: 0,
            eos: 1,
        };
        let p = init_params(&cfg, 21).unwrap();
        let x = [0, 2];
        let hyps = beam_search(&p, &x, 8, 3).unwrap();
        assert_eq!(hyps.len(), 4);

        // brute-force oracle: enumerate and score every complete output
        let mut expected: Vec<(Vec<u32>, f64)> = Vec::new();
        for tokens in [vec![1u32], vec![0, 1], vec![0, 0, 1], vec![0, 0, 0]] {
            let dec = Decoder::new(&p, &x).unwrap();
            let mut state = dec.start_state();
            let mut lp = 0.0;
            for &t in &tokens {
                let out = dec.step(&state);
                lp += out.log_probs[t as usize];
                state = dec.advance(out.state, t);
            }
            expected.push((tokens, lp));
        }
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (h, (tokens, lp)) in hyps.iter().zip(&expected) {
            assert_eq!(&h.tokens, tokens);
            assert!((h.log_prob - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn top_score_is_monotone_in_beam_size() {
        for seed in [1, 7, 13] {
            let p = toy_params(seed);
            let x = [4, 6];
            let mut prev = f64::NEG_INFINITY;
            for b in [1usize, 2, 4, 8] {
                let top = beam_search(&p, &x, b, 6).unwrap()[0].log_prob;
                assert!(
                    top >= prev - 1e-12,
                    "beam {b} top-1 {top} below smaller beam {prev}"
                );
                prev = top;
            }
        }
    }

    #[test]
    fn truncated_hypotheses_are_finalized_without_eos() {
        // make EOS essentially impossible so everything truncates
        let cfg = ModelConfig::new(5, 6, 3, 3);
        let mut p = init_params(&cfg, 2).unwrap();
        p.weights.out_bias.data[cfg.eos as usize] = -100.0;
        let hyps = beam_search(&p, &[4], 3, 4).unwrap();
        for h in &hyps {
            assert_eq!(h.tokens.len(), 4);
            assert_ne!(*h.tokens.last().unwrap(), cfg.eos);
            assert_eq!(h.attention.target_len(), 4);
        }
    }
}
