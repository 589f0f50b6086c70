//! The posterior-regularized objective.
//!
//! A log-linear "desired" distribution Q over candidate translations encodes
//! prior knowledge through sparse features and weights gamma. Training
//! penalizes the model likelihood with KL(Q || P), both renormalized over a
//! sampled subset of translations: Q becomes a softmax of gamma.phi over the
//! sample set, and P is sharpened by an exponent alpha before renormalizing.
//! This module holds the distributions, the KL value, and its analytic
//! gradients; [`train`] holds the optimizers built on them.

pub mod train;

pub use train::{train_mle, train_posreg, AdaDeltaConfig, MleConfig, TraceRecord, TrainingTrace};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureId, SparseFeatureVector};
use crate::model::{backward::grad_scored, Gradient, Hypothesis, ModelParams, ParamSet, SampleSet};
use crate::par;

/// Log-linear feature weights (gamma). Missing keys read as zero, so the
/// all-zero default represents the uniform desired distribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureWeights {
    weights: BTreeMap<FeatureId, f64>,
}

impl FeatureWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: FeatureId) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, id: FeatureId, value: f64) {
        self.weights.insert(id, value);
    }

    pub fn dot(&self, phi: &SparseFeatureVector) -> f64 {
        phi.iter().map(|(id, v)| self.get(id) * v).sum()
    }

    /// self += coeff * other
    pub fn add_scaled(&mut self, other: &FeatureWeights, coeff: f64) {
        for (id, v) in &other.weights {
            *self.weights.entry(*id).or_insert(0.0) += coeff * v;
        }
    }

    pub fn norm(&self) -> f64 {
        self.weights.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, f64)> + '_ {
        self.weights.iter().map(|(k, v)| (*k, *v))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.values().all(|v| v.is_finite())
    }

    /// Write as `feature_id<TAB>weight` lines in deterministic key order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (id, v) in &self.weights {
            writeln!(w, "{id}\t{v}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FeatureWeights> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = FeatureWeights::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id_str, w_str) = line.split_once('\t').ok_or_else(|| Error::Resource {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected feature_id<TAB>weight".into(),
            })?;
            let id: FeatureId = id_str.parse()?;
            let w: f64 = w_str.parse().map_err(|_| Error::Resource {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad weight {w_str:?}"),
            })?;
            out.set(id, w);
        }
        Ok(out)
    }
}

/// Hyperparameters of posterior-regularized training.
#[derive(Debug, Clone, PartialEq)]
pub struct PRConfig {
    /// weight of the likelihood term
    pub lambda1: f64,
    /// weight of the KL term
    pub lambda2: f64,
    /// sharpness exponent applied to model probabilities on the sample set
    pub alpha: f64,
    /// candidate translations sampled per sentence
    pub sample_size: usize,
    /// length cap for sampled candidates
    pub sample_max_len: usize,
    /// sentences per parameter update
    pub pr_batch_size: usize,
    /// plain gradient-ascent step size for gamma
    pub gamma_step: f64,
    /// adaptive per-parameter scheme for theta
    pub adadelta: AdaDeltaConfig,
    /// parameter updates to perform
    pub max_iterations: usize,
    pub seed: u64,
    /// force-decode the reference into the sample set when absent
    pub include_reference_in_samples: bool,
    /// iterations per emitted trace record
    pub trace_interval: usize,
}

impl Default for PRConfig {
    fn default() -> Self {
        PRConfig {
            lambda1: 8e-5,
            lambda2: 2.5e-4,
            alpha: 0.2,
            sample_size: 80,
            sample_max_len: 50,
            pr_batch_size: 1,
            gamma_step: 1e-2,
            adadelta: AdaDeltaConfig::default(),
            max_iterations: 1000,
            seed: 0,
            include_reference_in_samples: false,
            trace_interval: 10,
        }
    }
}

impl PRConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.sample_size == 0 || self.pr_batch_size == 0 || self.sample_max_len == 0 {
            return Err(Error::Config(
                "sample_size, pr_batch_size, and sample_max_len must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One candidate with its feature vector and both renormalized probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub hypothesis: Hypothesis,
    pub features: SparseFeatureVector,
    pub q_prob: f64,
    pub p_prob: f64,
}

/// Desired distribution renormalized on the sample set: softmax of
/// gamma.phi, computed with max-subtraction.
pub fn q_tilde(gamma: &FeatureWeights, features: &[SparseFeatureVector]) -> Vec<f64> {
    assert!(!features.is_empty(), "q_tilde needs at least one candidate");
    let mut logits: Vec<f64> = features.iter().map(|phi| gamma.dot(phi)).collect();
    crate::linalg::softmax_inplace(&mut logits);
    logits
}

/// Model posterior renormalized on the sample set with sharpness alpha:
/// p_i proportional to exp(alpha * logP_i).
pub fn p_tilde(log_probs: &[f64], alpha: f64) -> Vec<f64> {
    assert!(!log_probs.is_empty(), "p_tilde needs at least one candidate");
    assert!(alpha > 0.0, "alpha must be positive");
    let mut logits: Vec<f64> = log_probs.iter().map(|lp| alpha * lp).collect();
    crate::linalg::softmax_inplace(&mut logits);
    logits
}

/// KL(q || p) over one sample set, with 0 * log 0 = 0.
pub fn kl_approx(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::Shape(format!(
            "distribution lengths differ: {} vs {}",
            q.len(),
            p.len()
        )));
    }
    let mut kl = 0.0;
    for (qi, pi) in q.iter().zip(p) {
        if *qi == 0.0 {
            continue;
        }
        if *pi == 0.0 {
            return Err(Error::Numeric(
                "kl_approx: q places mass where p is zero".into(),
            ));
        }
        kl += qi * (qi / pi).ln();
    }
    Ok(kl)
}

/// Attach features and both probability columns to every hypothesis.
pub fn score_samples(
    set: &SampleSet,
    features: &[SparseFeatureVector],
    gamma: &FeatureWeights,
    alpha: f64,
) -> Vec<ScoredSample> {
    assert_eq!(set.hypotheses.len(), features.len());
    let q = q_tilde(gamma, features);
    let log_probs: Vec<f64> = set.hypotheses.iter().map(|h| h.log_prob).collect();
    let p = p_tilde(&log_probs, alpha);
    set.hypotheses
        .iter()
        .zip(features)
        .zip(q.iter().zip(&p))
        .map(|((h, phi), (qi, pi))| ScoredSample {
            hypothesis: h.clone(),
            features: phi.clone(),
            q_prob: *qi,
            p_prob: *pi,
        })
        .collect()
}

/// Analytic gradients of KL(Q || P) on one sample set.
///
/// For gamma the closed form is E_Q[(phi - E_Q[phi]) * (log Q - log P)]. For
/// theta it is -alpha * (E_Q[g] - E_P[g]) with g the per-candidate
/// log-probability gradient; feature values (including the
/// attention-dependent coverage feature) are treated as constants with
/// respect to theta.
pub fn kl_gradients(
    set: &SampleSet,
    features: &[SparseFeatureVector],
    gamma: &FeatureWeights,
    params: &ModelParams,
    alpha: f64,
) -> Result<(FeatureWeights, Gradient)> {
    if set.hypotheses.len() != features.len() {
        return Err(Error::Shape(format!(
            "{} hypotheses but {} feature vectors",
            set.hypotheses.len(),
            features.len()
        )));
    }
    let n = set.hypotheses.len();
    let mut grad_gamma = FeatureWeights::new();
    let mut grad_theta = Gradient::zeros(&params.config);
    if n == 1 {
        // KL of a singleton set is identically zero
        return Ok((grad_gamma, grad_theta));
    }

    let q = q_tilde(gamma, features);
    let log_probs: Vec<f64> = set.hypotheses.iter().map(|h| h.log_prob).collect();
    let p = p_tilde(&log_probs, alpha);

    // gamma side
    let keys: BTreeSet<FeatureId> = features
        .iter()
        .flat_map(|phi| phi.iter().map(|(id, _)| id))
        .collect();
    let mut mean_phi: BTreeMap<FeatureId, f64> = keys.iter().map(|k| (*k, 0.0)).collect();
    for (qi, phi) in q.iter().zip(features) {
        for (id, v) in phi.iter() {
            *mean_phi.get_mut(&id).unwrap() += qi * v;
        }
    }
    for ((qi, pi), phi) in q.iter().zip(&p).zip(features) {
        if *qi == 0.0 {
            continue;
        }
        let coeff = qi * (qi.ln() - pi.ln());
        if coeff == 0.0 {
            continue;
        }
        for (id, mu) in &mean_phi {
            let centered = phi.get(*id) - mu;
            if centered != 0.0 {
                grad_gamma.set(*id, grad_gamma.get(*id) + coeff * centered);
            }
        }
    }

    // theta side: weight each candidate's log-prob gradient by -alpha*(q - p)
    let weights: Vec<f64> = q.iter().zip(&p).map(|(qi, pi)| -alpha * (qi - pi)).collect();
    let indexed: Vec<usize> = (0..n).filter(|i| weights[*i] != 0.0).collect();
    let grads: Vec<(usize, ParamSet)> = par::map_collect(&indexed, |&i| {
        let h = &set.hypotheses[i];
        let (_, g) = grad_scored(params, &set.source, &h.tokens);
        (i, g.weights)
    });
    for (i, g) in &grads {
        grad_theta.weights.axpy(weights[*i], g);
    }

    Ok((grad_gamma, grad_theta))
}
