//! Optimizers: the MLE baseline trainer and the joint theta/gamma
//! posterior-regularized trainer.
//!
//! Both walk the corpus in the same seeded shuffle order and share the
//! per-parameter adaptive update for theta, so the regularized trainer with
//! lambda2 = 0 and lambda1 = 1 retraces the MLE (batch size 1) trajectory
//! bit for bit.

use std::path::Path;
use std::time::Instant;

use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::features::{compute_features, FeatureConfig, KnowledgeResources, SparseFeatureVector};
use crate::model::{
    forward_logprob, grad_logprob, sample_translations, Hypothesis, ModelParams, ParamSet,
};
use crate::par;
use crate::posreg::{kl_approx, kl_gradients, p_tilde, q_tilde, FeatureWeights, PRConfig};
use crate::rng::{shuffle, stream_rng};

/// Adaptive per-parameter scheme: decaying accumulators of squared gradients
/// and squared updates, step = sqrt((E[dx^2]+eps)/(E[g^2]+eps)) * g.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaConfig {
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        AdaDeltaConfig {
            decay: 0.95,
            epsilon: 1e-6,
        }
    }
}

struct AdaDelta {
    acc_grad: ParamSet,
    acc_update: ParamSet,
    decay: f64,
    epsilon: f64,
}

impl AdaDelta {
    fn new(template: &ParamSet, cfg: &AdaDeltaConfig) -> Self {
        let mut zeros = template.clone();
        zeros.scale(0.0);
        AdaDelta {
            acc_grad: zeros.clone(),
            acc_update: zeros,
            decay: cfg.decay,
            epsilon: cfg.epsilon,
        }
    }

    /// Ascent step: params += rms-ratio * grad.
    fn step(&mut self, params: &mut ParamSet, grad: &ParamSet) {
        let rho = self.decay;
        let eps = self.epsilon;
        let g_blocks = grad.blocks();
        let mut eg_blocks = self.acc_grad.blocks_mut();
        let mut ed_blocks = self.acc_update.blocks_mut();
        let mut p_blocks = params.blocks_mut();
        for i in 0..g_blocks.len() {
            let g = &g_blocks[i].1.data;
            let eg = &mut eg_blocks[i].1.data;
            let ed = &mut ed_blocks[i].1.data;
            let p = &mut p_blocks[i].1.data;
            for k in 0..g.len() {
                let gv = g[k];
                eg[k] = rho * eg[k] + (1.0 - rho) * gv * gv;
                let delta = ((ed[k] + eps) / (eg[k] + eps)).sqrt() * gv;
                ed[k] = rho * ed[k] + (1.0 - rho) * delta * delta;
                p[k] += delta;
            }
        }
    }
}

/// MLE trainer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub adadelta: AdaDeltaConfig,
    /// iterations per emitted trace record
    pub trace_interval: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            batch_size: 80,
            max_iterations: 1000,
            seed: 0,
            adadelta: AdaDeltaConfig::default(),
            trace_interval: 1,
        }
    }
}

/// One trace line: objective terms averaged over the trace window.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// mean per-token log-likelihood over the window
    pub mean_log_likelihood: f64,
    /// mean sampled KL over the window (0 for MLE training)
    pub mean_kl: f64,
    pub gamma_norm: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "#iteration\tmean_log_likelihood\tmean_kl\tgamma_norm\twall_clock_secs")
            .map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{:.3}",
                r.iteration, r.mean_log_likelihood, r.mean_kl, r.gamma_norm, r.wall_clock_secs
            )
            .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Epoch-reshuffled sentence order; every epoch draws a fresh permutation
/// from its own seeded stream.
struct SentenceStream {
    n: usize,
    seed: u64,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
}

impl SentenceStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = SentenceStream {
            n,
            seed,
            epoch: 0,
            pos: 0,
            order: Vec::new(),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        let mut rng = stream_rng(self.seed, "shuffle", self.epoch);
        shuffle(&mut self.order, &mut rng);
    }

    fn next(&mut self) -> usize {
        if self.pos == self.n {
            self.epoch += 1;
            self.pos = 0;
            self.reshuffle();
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }
}

fn scored_len(pair: &SentencePair) -> usize {
    pair.target.len() + 1 // EOS step included
}

/// Maximum-likelihood training with minibatch gradient ascent. Returns the
/// trained parameters and a per-window trace of mean per-token
/// log-likelihood.
pub fn train_mle(
    config: &MleConfig,
    corpus: &[SentencePair],
    init: &ModelParams,
) -> Result<(ModelParams, TrainingTrace)> {
    if corpus.is_empty() {
        return Err(Error::Corpus("training corpus is empty".into()));
    }
    if config.batch_size == 0 || config.trace_interval == 0 {
        return Err(Error::Config("batch_size and trace_interval must be at least 1".into()));
    }

    let mut params = init.clone();
    let mut optimizer = AdaDelta::new(&params.weights, &config.adadelta);
    let mut stream = SentenceStream::new(corpus.len(), config.seed);
    let mut trace = TrainingTrace::default();
    let start = Instant::now();

    let mut window_logp = 0.0;
    let mut window_tokens = 0usize;

    for iter in 0..config.max_iterations {
        let batch: Vec<&SentencePair> = (0..config.batch_size)
            .map(|_| &corpus[stream.next()])
            .collect();

        let results = par::map_collect(&batch, |pair| {
            grad_logprob(&params, &pair.source, &pair.target)
        });

        let mut grad_sum = ParamSet::zeros(&params.config);
        for (pair, res) in batch.iter().zip(results) {
            let (logp, grad) = res?;
            if !logp.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite log-likelihood at iteration {iter}"
                )));
            }
            window_logp += logp;
            window_tokens += scored_len(pair);
            grad_sum.axpy(1.0, &grad.weights);
        }
        grad_sum.scale(1.0 / config.batch_size as f64);
        optimizer.step(&mut params.weights, &grad_sum);
        if !params.weights.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameter after update at iteration {iter}"
            )));
        }

        if (iter + 1) % config.trace_interval == 0 {
            trace.records.push(TraceRecord {
                iteration: iter + 1,
                mean_log_likelihood: window_logp / window_tokens as f64,
                mean_kl: 0.0,
                gamma_norm: 0.0,
                wall_clock_secs: start.elapsed().as_secs_f64(),
            });
            window_logp = 0.0;
            window_tokens = 0;
        }
    }

    Ok((params, trace))
}

/// Joint posterior-regularized training of theta and gamma.
///
/// Per sentence: sample candidates, compute their features, renormalize Q and
/// P on the sample set, then ascend theta along
/// lambda1 * dL/dtheta - lambda2 * dKL/dtheta (adaptive step) and gamma along
/// -lambda2 * dKL/dgamma (plain step). With lambda2 = 0 no sampling happens
/// and the update reduces to likelihood ascent on the current sentence.
pub fn train_posreg(
    config: &PRConfig,
    feature_config: &FeatureConfig,
    corpus: &[SentencePair],
    resources: &KnowledgeResources,
    init_params: &ModelParams,
    init_gamma: &FeatureWeights,
) -> Result<(ModelParams, FeatureWeights, TrainingTrace)> {
    config.validate()?;
    feature_config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Corpus("training corpus is empty".into()));
    }
    if config.trace_interval == 0 {
        return Err(Error::Config("trace_interval must be at least 1".into()));
    }

    let mut params = init_params.clone();
    let mut gamma = init_gamma.clone();
    let mut optimizer = AdaDelta::new(&params.weights, &config.adadelta);
    let mut stream = SentenceStream::new(corpus.len(), config.seed);
    let mut trace = TrainingTrace::default();
    let start = Instant::now();

    let mut sentence_counter = 0u64;
    let mut window_logp = 0.0;
    let mut window_tokens = 0usize;
    let mut window_kl = 0.0;
    let mut window_kl_count = 0usize;

    for iter in 0..config.max_iterations {
        let mut theta_grad = ParamSet::zeros(&params.config);
        let mut gamma_grad = FeatureWeights::new();

        for _ in 0..config.pr_batch_size {
            let pair = &corpus[stream.next()];
            let x = &pair.source;
            let y = &pair.target;

            // likelihood term on the current sentence
            let logp = if config.lambda1 != 0.0 {
                let (logp, grad) = grad_logprob(&params, x, y)?;
                theta_grad.axpy(config.lambda1, &grad.weights);
                logp
            } else {
                forward_logprob(&params, x, y)?.0
            };
            if !logp.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite log-likelihood at iteration {iter}"
                )));
            }
            window_logp += logp;
            window_tokens += scored_len(pair);

            // KL term over the sampled sub-space
            if config.lambda2 != 0.0 {
                let sample_seed =
                    stream_rng(config.seed, "pr-sample-seed", sentence_counter).next_u64();
                let mut set = sample_translations(
                    &params,
                    x,
                    config.sample_size,
                    config.sample_max_len,
                    sample_seed,
                )?;
                if config.include_reference_in_samples {
                    let mut reference = y.clone();
                    reference.push(params.config.eos);
                    if !set.hypotheses.iter().any(|h| h.tokens == reference) {
                        let (ref_logp, attention) = forward_logprob(&params, x, y)?;
                        set.hypotheses.push(Hypothesis {
                            tokens: reference,
                            log_prob: ref_logp,
                            attention,
                        });
                    }
                }

                let features: Vec<SparseFeatureVector> = par::map_collect(
                    &set.hypotheses,
                    |h| compute_features(x, &h.tokens, &h.attention, resources, feature_config),
                )
                .into_iter()
                .collect::<Result<_>>()?;

                let q = q_tilde(&gamma, &features);
                let log_probs: Vec<f64> = set.hypotheses.iter().map(|h| h.log_prob).collect();
                let p = p_tilde(&log_probs, config.alpha);
                let kl = kl_approx(&q, &p)?;
                if !kl.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite KL at iteration {iter}"
                    )));
                }
                window_kl += kl;
                window_kl_count += 1;

                let (g_gamma, g_theta) =
                    kl_gradients(&set, &features, &gamma, &params, config.alpha)?;
                theta_grad.axpy(-config.lambda2, &g_theta.weights);
                gamma_grad.add_scaled(&g_gamma, -config.lambda2);
            }

            sentence_counter += 1;
        }

        theta_grad.scale(1.0 / config.pr_batch_size as f64);
        optimizer.step(&mut params.weights, &theta_grad);
        if config.lambda2 != 0.0 {
            let batch_scale = config.gamma_step / config.pr_batch_size as f64;
            gamma.add_scaled(&gamma_grad, batch_scale);
        }
        if !params.weights.is_finite() || !gamma.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameter after update at iteration {iter}"
            )));
        }

        if (iter + 1) % config.trace_interval == 0 {
            trace.records.push(TraceRecord {
                iteration: iter + 1,
                mean_log_likelihood: window_logp / window_tokens as f64,
                mean_kl: if window_kl_count > 0 {
                    window_kl / window_kl_count as f64
                } else {
                    0.0
                },
                gamma_norm: gamma.norm(),
                wall_clock_secs: start.elapsed().as_secs_f64(),
            });
            window_logp = 0.0;
            window_tokens = 0;
            window_kl = 0.0;
            window_kl_count = 0;
        }
    }

    Ok((params, gamma, trace))
}
