//! Corpus-level BLEU, following the multi-bleu conventions: clipped modified
//! n-gram precision, unsmoothed geometric mean over n = 1..4, and the
//! closest-reference-length brevity penalty.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// percentage in [0, 100]
    pub bleu: f64,
    /// modified n-gram precisions, index 0 = unigrams
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let precisions = self
            .precisions
            .iter()
            .map(|p| format!("{:.1}", 100.0 * p))
            .collect::<Vec<_>>()
            .join("/");
        write!(
            f,
            "BLEU = {:.2}, {} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            precisions,
            self.brevity_penalty,
            self.hyp_len as f64 / self.ref_len as f64,
            self.hyp_len,
            self.ref_len
        )
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn lowercased(sentences: &[Vec<String>]) -> Vec<Vec<String>> {
    sentences
        .iter()
        .map(|s| s.iter().map(|t| t.to_lowercase()).collect())
        .collect()
}

/// Score a corpus of hypotheses against one or more references per sentence.
pub fn bleu_score(
    hypotheses: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    max_n: usize,
    lowercase: bool,
) -> Result<BleuReport> {
    if hypotheses.is_empty() {
        return Err(Error::Corpus("cannot score an empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Corpus(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::Corpus("every sentence needs at least one reference".into()));
    }
    if max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }

    let mut correct = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp_raw, refs_raw) in hypotheses.iter().zip(references) {
        let hyp_store;
        let hyp: &Vec<String> = if lowercase {
            hyp_store = lowercased(std::slice::from_ref(hyp_raw)).pop().unwrap();
            &hyp_store
        } else {
            hyp_raw
        };
        let refs_store;
        let refs: &[Vec<String>] = if lowercase {
            refs_store = lowercased(refs_raw);
            &refs_store
        } else {
            refs_raw
        };

        hyp_len += hyp.len();
        // closest reference length, ties toward the shorter one
        let closest = refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|len| {
                let diff = (*len as isize - hyp.len() as isize).abs();
                (diff, *len)
            })
            .unwrap();
        ref_len += closest;

        for (n_idx, (corr, tot)) in correct.iter_mut().zip(total.iter_mut()).enumerate() {
            let n = n_idx + 1;
            let hyp_counts = ngram_counts(hyp, n);
            if hyp_counts.is_empty() {
                continue;
            }
            let ref_counts: Vec<HashMap<&[String], usize>> =
                refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, count) in &hyp_counts {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                *corr += (*count).min(max_ref);
            }
            *tot += hyp.len() + 1 - n;
        }
    }

    let precisions: Vec<f64> = correct
        .iter()
        .zip(&total)
        .map(|(c, t)| if *t > 0 { *c as f64 / *t as f64 } else { 0.0 })
        .collect();

    let brevity_penalty = if hyp_len < ref_len && hyp_len > 0 {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };

    let bleu = if precisions.iter().all(|p| *p > 0.0) {
        let mean_log: f64 = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        brevity_penalty * mean_log.exp() * 100.0
    } else {
        0.0
    };

    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}
