//! Prior-knowledge features over sentence pairs.
//!
//! Four feature families score a (source, candidate translation) pair:
//! one indicator per bilingual dictionary entry (BD), one indicator per
//! phrase-table entry (PT), a global attention coverage penalty (CP), and a
//! global length-ratio feature (LR). All are exposed through one sparse
//! vector keyed by [`FeatureId`].

mod resources;

pub use resources::{
    extract_resources, load_dictionary, load_phrase_table, save_dictionary, save_phrase_table,
    DictEntry, Dictionary, KnowledgeResources, PhraseEntry, PhraseTable, ResourceThresholds,
};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::AttentionMatrix;

/// Identity of one feature. `Bd`/`Pt` carry the entry index into the loaded
/// dictionary or phrase table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureId {
    Bd(u32),
    Pt(u32),
    Cp,
    Lr,
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureId::Bd(i) => write!(f, "BD:{i}"),
            FeatureId::Pt(i) => write!(f, "PT:{i}"),
            FeatureId::Cp => write!(f, "CP"),
            FeatureId::Lr => write!(f, "LR"),
        }
    }
}

impl FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "CP" {
            return Ok(FeatureId::Cp);
        }
        if s == "LR" {
            return Ok(FeatureId::Lr);
        }
        if let Some(i) = s.strip_prefix("BD:") {
            return i
                .parse()
                .map(FeatureId::Bd)
                .map_err(|_| Error::Config(format!("bad feature id {s:?}")));
        }
        if let Some(i) = s.strip_prefix("PT:") {
            return i
                .parse()
                .map(FeatureId::Pt)
                .map_err(|_| Error::Config(format!("bad feature id {s:?}")));
        }
        Err(Error::Config(format!("bad feature id {s:?}")))
    }
}

/// Sparse feature vector; absent keys mean zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseFeatureVector {
    values: BTreeMap<FeatureId, f64>,
}

impl SparseFeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: FeatureId) -> f64 {
        self.values.get(&id).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, id: FeatureId, value: f64) {
        self.values.insert(id, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Hyperparameters of the feature functions plus family switches.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// expected target/source length ratio
    pub beta: f64,
    /// floor inside the coverage-penalty log; a source word with zero
    /// attention mass would otherwise contribute -inf
    pub cp_epsilon: f64,
    pub enable_bd: bool,
    pub enable_pt: bool,
    pub enable_cp: bool,
    pub enable_lr: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            beta: 1.236,
            cp_epsilon: 1e-6,
            enable_bd: true,
            enable_pt: true,
            enable_cp: true,
            enable_lr: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::Config("beta must be positive".into()));
        }
        if !self.cp_epsilon.is_finite() || self.cp_epsilon <= 0.0 || self.cp_epsilon >= 1.0 {
            return Err(Error::Config("cp_epsilon must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Length-ratio feature: peaks at 1 when |y| = beta * |x| and decays toward 0
/// as the lengths diverge in either direction.
pub fn length_ratio(beta: f64, src_len: usize, tgt_len: usize) -> f64 {
    let expected = beta * src_len as f64;
    let actual = tgt_len as f64;
    if expected < actual {
        expected / actual
    } else {
        actual / expected
    }
}

/// Coverage penalty: sum over source positions of log(min(attention mass, 1)),
/// floored at `epsilon` so untouched source words stay finite.
pub fn coverage_penalty(attention: &AttentionMatrix, epsilon: f64) -> f64 {
    attention
        .source_sums()
        .iter()
        .map(|s| s.min(1.0).max(epsilon).ln())
        .sum()
}

/// Evaluate every enabled feature on a candidate pair. `y` is the scored
/// token sequence (including the terminal EOS when one was generated) and
/// `attention` must have exactly one row per token of `y` and one column per
/// token of `x`.
pub fn compute_features(
    x: &[u32],
    y: &[u32],
    attention: &AttentionMatrix,
    resources: &KnowledgeResources,
    config: &FeatureConfig,
) -> Result<SparseFeatureVector> {
    if attention.target_len() != y.len() || attention.source_len() != x.len() {
        return Err(Error::Shape(format!(
            "attention is {}x{} but |y|={} and |x|={}",
            attention.target_len(),
            attention.source_len(),
            y.len(),
            x.len()
        )));
    }

    let mut phi = SparseFeatureVector::new();

    if config.enable_bd && !resources.dictionary.entries.is_empty() {
        let x_set: HashSet<u32> = x.iter().copied().collect();
        let y_set: HashSet<u32> = y.iter().copied().collect();
        for (idx, e) in resources.dictionary.entries.iter().enumerate() {
            if x_set.contains(&e.src_id) && y_set.contains(&e.tgt_id) {
                phi.set(FeatureId::Bd(idx as u32), 1.0);
            }
        }
    }

    if config.enable_pt && !resources.phrase_table.entries.is_empty() {
        for (idx, e) in resources.phrase_table.entries.iter().enumerate() {
            if contains_subsequence(x, &e.src_ids) && contains_subsequence(y, &e.tgt_ids) {
                phi.set(FeatureId::Pt(idx as u32), 1.0);
            }
        }
    }

    if config.enable_cp {
        phi.set(FeatureId::Cp, coverage_penalty(attention, config.cp_epsilon));
    }

    if config.enable_lr {
        phi.set(FeatureId::Lr, length_ratio(config.beta, x.len(), y.len()));
    }

    Ok(phi)
}

fn contains_subsequence(haystack: &[u32], needle: &[u32]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lr_cfg(beta: f64) -> FeatureConfig {
        FeatureConfig {
            beta,
            ..FeatureConfig::default()
        }
    }

    fn uniform_attention(tgt_len: usize, src_len: usize) -> AttentionMatrix {
        AttentionMatrix::from_rows(
            src_len,
            (0..tgt_len)
                .map(|_| vec![1.0 / src_len as f64; src_len])
                .collect(),
        )
    }

    #[test]
    fn length_ratio_worked_examples() {
        assert!((length_ratio(1.2, 10, 12) - 1.0).abs() < 1e-12);
        assert!((length_ratio(1.2, 10, 100) - 0.12).abs() < 1e-12);
        assert!((length_ratio(1.2, 10, 6) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coverage_penalty_hand_example() {
        let att = AttentionMatrix::from_rows(2, vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
        let cp = coverage_penalty(&att, 1e-6);
        assert!((cp - 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn coverage_penalty_is_zero_when_every_source_word_is_covered() {
        let att = AttentionMatrix::from_rows(2, vec![vec![0.6, 0.4], vec![0.6, 0.4], vec![0.5, 0.5]]);
        assert_eq!(coverage_penalty(&att, 1e-6), 0.0);
    }

    #[test]
    fn coverage_penalty_clamps_zero_mass_to_epsilon() {
        let att = AttentionMatrix::from_rows(2, vec![vec![1.0, 0.0]]);
        let cp = coverage_penalty(&att, 1e-6);
        assert!((cp - 1e-6f64.ln()).abs() < 1e-12);
        assert!(cp.is_finite());
    }

    #[test]
    fn dictionary_feature_fires_only_when_both_sides_present() {
        let resources = KnowledgeResources {
            dictionary: Dictionary {
                entries: vec![DictEntry {
                    src: "baigong".into(),
                    tgt: "white-house".into(),
                    src_id: 7,
                    tgt_id: 9,
                    p_src_given_tgt: 0.9,
                    p_tgt_given_src: 0.9,
                }],
            },
            phrase_table: PhraseTable { entries: vec![] },
        };
        let cfg = FeatureConfig::default();

        let x = [4, 7, 5];
        let phi = compute_features(&x, &[9, 6], &uniform_attention(2, 3), &resources, &cfg).unwrap();
        assert_eq!(phi.get(FeatureId::Bd(0)), 1.0);

        let phi = compute_features(&x, &[6, 6], &uniform_attention(2, 3), &resources, &cfg).unwrap();
        assert_eq!(phi.get(FeatureId::Bd(0)), 0.0);
    }

    #[test]
    fn phrase_feature_requires_contiguous_occurrence() {
        let resources = KnowledgeResources {
            dictionary: Dictionary { entries: vec![] },
            phrase_table: PhraseTable {
                entries: vec![PhraseEntry {
                    src: vec!["a".into(), "b".into()],
                    tgt: vec!["x".into()],
                    src_ids: vec![4, 5],
                    tgt_ids: vec![9],
                    p_src_given_tgt: 0.9,
                    p_tgt_given_src: 0.9,
                    count: 12,
                }],
            },
        };
        let cfg = FeatureConfig::default();

        let phi =
            compute_features(&[4, 5, 6], &[9], &uniform_attention(1, 3), &resources, &cfg).unwrap();
        assert_eq!(phi.get(FeatureId::Pt(0)), 1.0);

        // source tokens present but not adjacent
        let phi =
            compute_features(&[4, 6, 5], &[9], &uniform_attention(1, 3), &resources, &cfg).unwrap();
        assert_eq!(phi.get(FeatureId::Pt(0)), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let resources = KnowledgeResources::default();
        let cfg = FeatureConfig::default();
        let att = uniform_attention(2, 3);
        assert!(compute_features(&[4, 5, 6], &[9], &att, &resources, &cfg).is_err());
        assert!(compute_features(&[4, 5], &[9, 9], &att, &resources, &cfg).is_err());
    }

    #[test]
    fn disabled_families_are_absent() {
        let resources = KnowledgeResources::default();
        let cfg = FeatureConfig {
            enable_cp: false,
            enable_lr: false,
            ..FeatureConfig::default()
        };
        let phi =
            compute_features(&[4], &[5], &uniform_attention(1, 1), &resources, &cfg).unwrap();
        assert!(phi.is_empty());
    }

    #[test]
    fn feature_ids_roundtrip_through_text() {
        for id in [FeatureId::Bd(12), FeatureId::Pt(0), FeatureId::Cp, FeatureId::Lr] {
            let s = id.to_string();
            assert_eq!(s.parse::<FeatureId>().unwrap(), id);
        }
        assert!("XX:1".parse::<FeatureId>().is_err());
    }

    proptest! {
        #[test]
        fn length_ratio_stays_in_unit_interval(
            beta in 0.1f64..4.0,
            src_len in 1usize..60,
            tgt_len in 1usize..60,
        ) {
            let lr = length_ratio(beta, src_len, tgt_len);
            prop_assert!(lr > 0.0 && lr <= 1.0);
            // symmetric under exchanging the two branch arguments
            let expected = beta * src_len as f64;
            let swapped = if (tgt_len as f64) < expected {
                tgt_len as f64 / expected
            } else {
                expected / tgt_len as f64
            };
            prop_assert!((lr - swapped).abs() < 1e-12);
        }

        #[test]
        fn coverage_penalty_is_nonpositive_and_monotone(
            rows in proptest::collection::vec(
                proptest::collection::vec(0.01f64..1.0, 3),
                1..6,
            ),
        ) {
            // normalize rows into attention distributions over 3 source words
            let normalized: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.iter().map(|v| v / s).collect()
                })
                .collect();
            let att = AttentionMatrix::from_rows(3, normalized.clone());
            let cp = coverage_penalty(&att, 1e-6);
            prop_assert!(cp <= 0.0);

            // raising attention on an under-covered source word cannot lower CP
            let sums = att.source_sums();
            if let Some(i) = sums.iter().position(|s| *s < 1.0) {
                let mut boosted = normalized;
                boosted[0][i] += 0.1;
                let att2 = AttentionMatrix::from_rows(3, boosted);
                prop_assert!(coverage_penalty(&att2, 1e-6) >= cp - 1e-12);
            }
        }

        #[test]
        fn bd_firing_is_monotone_in_target_tokens(extra in proptest::collection::vec(4u32..20, 0..6)) {
            let resources = KnowledgeResources {
                dictionary: Dictionary {
                    entries: vec![DictEntry {
                        src: "s".into(),
                        tgt: "t".into(),
                        src_id: 4,
                        tgt_id: 5,
                        p_src_given_tgt: 0.5,
                        p_tgt_given_src: 0.5,
                    }],
                },
                phrase_table: PhraseTable { entries: vec![] },
            };
            let cfg = lr_cfg(1.2);
            let x = [4u32];
            let base = vec![5u32];
            let mut grown = base.clone();
            grown.extend(&extra);
            let phi_base = compute_features(
                &x, &base, &uniform_attention(base.len(), 1), &resources, &cfg,
            ).unwrap();
            let phi_grown = compute_features(
                &x, &grown, &uniform_attention(grown.len(), 1), &resources, &cfg,
            ).unwrap();
            prop_assert_eq!(phi_base.get(FeatureId::Bd(0)), 1.0);
            prop_assert_eq!(phi_grown.get(FeatureId::Bd(0)), 1.0);
        }
    }
}
