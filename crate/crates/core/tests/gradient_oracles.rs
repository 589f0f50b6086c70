//! Finite-difference oracles for the KL gradients.
//!
//! The oracle path recomputes KL(q_tilde || p_tilde) from scratch around a
//! perturbed parameter — q from gamma and the fixed features, p from freshly
//! force-decoded log-probabilities — and never touches the analytic gradient
//! code it checks.

use prnmt::features::{FeatureId, SparseFeatureVector};
use prnmt::model::backward::{block_shapes, finite_difference, grad_entry};
use prnmt::model::{forward_logprob, init_params, Hypothesis, ModelConfig, ModelParams, SampleSet};
use prnmt::posreg::{kl_approx, kl_gradients, p_tilde, q_tilde, FeatureWeights};
use prnmt::rng::stream_rng;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

// Denominator floored at 1e-5: below that scale the central-difference
// quotient itself carries ~1e-10 of roundoff, so the comparison degrades to
// an absolute check at 1e-9.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-5)
}

fn tiny_config(seed: u64) -> ModelConfig {
    let mut rng = stream_rng(seed, "cfg", 0);
    ModelConfig {
        src_vocab: 5 + rng.next_below(5) as usize,
        tgt_vocab: 5 + rng.next_below(5) as usize,
        embed_dim: 2 + rng.next_below(3) as usize,
        hidden_dim: 2 + rng.next_below(3) as usize,
        attn_dim: 2 + rng.next_below(2) as usize,
        bos: 1,
        eos: 2,
    }
}

fn random_tokens(rng: &mut prnmt::rng::Pcg64, vocab: usize, max_len: usize) -> Vec<u32> {
    let len = 1 + rng.next_below(max_len as u64) as usize;
    (0..len).map(|_| rng.next_below(vocab as u64) as u32).collect()
}

/// Build a sample set of distinct forced-decoded targets so stored log-probs
/// and attention are exactly what forward_logprob reproduces.
fn build_sample_set(
    params: &ModelParams,
    x: &[u32],
    targets: &[Vec<u32>],
) -> (SampleSet, Vec<SparseFeatureVector>) {
    let mut hypotheses = Vec::new();
    for y in targets {
        let (logp, attention) = forward_logprob(params, x, y).unwrap();
        let mut tokens = y.clone();
        tokens.push(params.config.eos);
        hypotheses.push(Hypothesis {
            tokens,
            log_prob: logp,
            attention,
        });
    }
    let set = SampleSet {
        source: x.to_vec(),
        hypotheses,
    };
    (set, Vec::new())
}

fn random_features(
    rng: &mut prnmt::rng::Pcg64,
    n: usize,
    keys: &[FeatureId],
) -> Vec<SparseFeatureVector> {
    (0..n)
        .map(|_| {
            let mut phi = SparseFeatureVector::new();
            for key in keys {
                if rng.next_f64() < 0.7 {
                    phi.set(*key, rng.uniform_symmetric(1.5));
                }
            }
            phi
        })
        .collect()
}

fn kl_value(
    params: &ModelParams,
    x: &[u32],
    targets: &[Vec<u32>],
    features: &[SparseFeatureVector],
    gamma: &FeatureWeights,
    alpha: f64,
) -> f64 {
    let log_probs: Vec<f64> = targets
        .iter()
        .map(|y| forward_logprob(params, x, y).unwrap().0)
        .collect();
    let q = q_tilde(gamma, features);
    let p = p_tilde(&log_probs, alpha);
    kl_approx(&q, &p).unwrap()
}

#[test]
fn kl_gradients_match_finite_differences_on_toy_sets() {
    let keys = [FeatureId::Bd(0), FeatureId::Bd(1), FeatureId::Cp, FeatureId::Lr];
    for instance in 0..6u64 {
        let cfg = tiny_config(instance);
        let params = init_params(&cfg, 100 + instance).unwrap();
        let mut rng = stream_rng(instance, "kl-fd", 1);
        let x = random_tokens(&mut rng, cfg.src_vocab, 4);

        // two distinct candidates
        let y1 = random_tokens(&mut rng, cfg.tgt_vocab, 4);
        let mut y2 = random_tokens(&mut rng, cfg.tgt_vocab, 4);
        if y2 == y1 {
            y2.push(0);
        }
        let targets = vec![y1, y2];
        let (set, _) = build_sample_set(&params, &x, &targets);
        let features = random_features(&mut rng, targets.len(), &keys);

        let mut gamma = FeatureWeights::new();
        for key in &keys {
            gamma.set(*key, rng.uniform_symmetric(1.0));
        }
        let alpha = 0.2 + rng.next_f64();

        let (grad_gamma, grad_theta) =
            kl_gradients(&set, &features, &gamma, &params, alpha).unwrap();

        // gamma side: perturb each weight, p fixed
        let log_probs: Vec<f64> = set.hypotheses.iter().map(|h| h.log_prob).collect();
        let p = p_tilde(&log_probs, alpha);
        for key in &keys {
            let mut plus = gamma.clone();
            plus.set(*key, gamma.get(*key) + FD_STEP);
            let mut minus = gamma.clone();
            minus.set(*key, gamma.get(*key) - FD_STEP);
            let kl_plus = kl_approx(&q_tilde(&plus, &features), &p).unwrap();
            let kl_minus = kl_approx(&q_tilde(&minus, &features), &p).unwrap();
            let fd = (kl_plus - kl_minus) / (2.0 * FD_STEP);
            let an = grad_gamma.get(*key);
            assert!(
                rel_err(an, fd) <= REL_TOL,
                "instance {instance} gamma[{key}]: analytic {an} vs fd {fd}"
            );
        }

        // theta side: perturb every parameter, q and features fixed
        for (block, len) in block_shapes(&params) {
            for idx in 0..len {
                let fd = finite_difference(&params, block, idx, FD_STEP, |p| {
                    kl_value(p, &x, &targets, &features, &gamma, alpha)
                });
                let an = grad_entry(&grad_theta, block, idx);
                assert!(
                    rel_err(an, fd) <= REL_TOL,
                    "instance {instance} theta {block}[{idx}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }
}

#[test]
fn singleton_sample_set_has_exactly_zero_gradients() {
    let cfg = tiny_config(3);
    let params = init_params(&cfg, 9).unwrap();
    let x = [0u32, 3];
    let (set, _) = build_sample_set(&params, &x, &[vec![3, 4]]);
    let features = vec![{
        let mut phi = SparseFeatureVector::new();
        phi.set(FeatureId::Lr, 0.8);
        phi
    }];
    let gamma = FeatureWeights::new();
    let (g_gamma, g_theta) = kl_gradients(&set, &features, &gamma, &params, 0.2).unwrap();
    assert!(g_gamma.iter().all(|(_, v)| v == 0.0));
    assert!(g_theta
        .weights
        .blocks()
        .iter()
        .all(|(_, m)| m.data.iter().all(|v| *v == 0.0)));
}

#[test]
fn identical_feature_vectors_zero_the_gamma_gradient() {
    let cfg = tiny_config(4);
    let params = init_params(&cfg, 11).unwrap();
    let x = [0u32, 1, 3];
    let (set, _) = build_sample_set(&params, &x, &[vec![3], vec![4], vec![3, 4]]);
    let shared = {
        let mut phi = SparseFeatureVector::new();
        phi.set(FeatureId::Bd(0), 1.0);
        phi.set(FeatureId::Lr, 0.5);
        phi
    };
    let features = vec![shared.clone(), shared.clone(), shared];
    let mut gamma = FeatureWeights::new();
    gamma.set(FeatureId::Bd(0), 0.3);
    let (g_gamma, _) = kl_gradients(&set, &features, &gamma, &params, 0.5).unwrap();
    assert!(g_gamma.iter().all(|(_, v)| v.abs() < 1e-15));
}
