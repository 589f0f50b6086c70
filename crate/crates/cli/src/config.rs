//! Experiment configuration: one TOML file, every key mirrored by a
//! command-line flag. The effective (post-override) config is snapshotted
//! next to each command's artifacts.

use std::path::{Path, PathBuf};

use prnmt::error::{Error, Result};
use prnmt::features::{FeatureConfig, ResourceThresholds};
use prnmt::posreg::{AdaDeltaConfig, MleConfig, PRConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// master seed; every random stream derives from it
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub mle: MleSection,
    #[serde(default)]
    pub pr: PrSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub resources: ResourceSection,
    #[serde(default)]
    pub decode: DecodeSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub train_source: Option<PathBuf>,
    pub train_target: Option<PathBuf>,
    pub max_len: usize,
    pub max_vocab: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_source: None,
            train_target: None,
            max_len: prnmt::corpus::DEFAULT_MAX_LEN,
            max_vocab: prnmt::corpus::DEFAULT_MAX_VOCAB,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// defaults to hidden_dim when absent
    pub attn_dim: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: 32,
            hidden_dim: 64,
            attn_dim: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleSection {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub trace_interval: usize,
    pub adadelta_decay: f64,
    pub adadelta_epsilon: f64,
}

impl Default for MleSection {
    fn default() -> Self {
        let d = MleConfig::default();
        MleSection {
            batch_size: d.batch_size,
            max_iterations: d.max_iterations,
            trace_interval: d.trace_interval,
            adadelta_decay: d.adadelta.decay,
            adadelta_epsilon: d.adadelta.epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub sample_size: usize,
    pub sample_max_len: usize,
    pub pr_batch_size: usize,
    pub gamma_step: f64,
    pub max_iterations: usize,
    pub trace_interval: usize,
    pub include_reference_in_samples: bool,
    /// warm-start checkpoint; defaults to the MLE artifact in output_dir
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for PrSection {
    fn default() -> Self {
        let d = PRConfig::default();
        PrSection {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            alpha: d.alpha,
            sample_size: d.sample_size,
            sample_max_len: d.sample_max_len,
            pr_batch_size: d.pr_batch_size,
            gamma_step: d.gamma_step,
            max_iterations: d.max_iterations,
            trace_interval: d.trace_interval,
            include_reference_in_samples: d.include_reference_in_samples,
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub beta: f64,
    pub cp_epsilon: f64,
    pub enable_bd: bool,
    pub enable_pt: bool,
    pub enable_cp: bool,
    pub enable_lr: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let d = FeatureConfig::default();
        FeatureSection {
            beta: d.beta,
            cp_epsilon: d.cp_epsilon,
            enable_bd: d.enable_bd,
            enable_pt: d.enable_pt,
            enable_cp: d.enable_cp,
            enable_lr: d.enable_lr,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceSection {
    pub dict_min_prob: f64,
    pub phrase_min_prob: f64,
    pub phrase_min_count: u64,
    pub max_phrase_len: usize,
}

impl Default for ResourceSection {
    fn default() -> Self {
        let d = ResourceThresholds::default();
        ResourceSection {
            dict_min_prob: d.dict_min_prob,
            phrase_min_prob: d.phrase_min_prob,
            phrase_min_count: d.phrase_min_count,
            max_phrase_len: d.max_phrase_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_size: usize,
    pub max_len: usize,
    /// coverage-penalty weight applied when rescoring finished candidates;
    /// 0 keeps plain beam search
    pub cp_weight: f64,
    /// apply the coverage penalty while pruning as well, not only at
    /// finalization
    pub cp_during_pruning: bool,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            beam_size: 10,
            max_len: 50,
            cp_weight: 0.0,
            cp_during_pruning: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::Config("seed is mandatory: set it in the config file or pass --seed".into())
        })
    }

    pub fn mle_config(&self, seed: u64) -> MleConfig {
        MleConfig {
            batch_size: self.mle.batch_size,
            max_iterations: self.mle.max_iterations,
            seed,
            adadelta: AdaDeltaConfig {
                decay: self.mle.adadelta_decay,
                epsilon: self.mle.adadelta_epsilon,
            },
            trace_interval: self.mle.trace_interval,
        }
    }

    pub fn pr_config(&self, seed: u64) -> PRConfig {
        PRConfig {
            lambda1: self.pr.lambda1,
            lambda2: self.pr.lambda2,
            alpha: self.pr.alpha,
            sample_size: self.pr.sample_size,
            sample_max_len: self.pr.sample_max_len,
            pr_batch_size: self.pr.pr_batch_size,
            gamma_step: self.pr.gamma_step,
            adadelta: AdaDeltaConfig {
                decay: self.mle.adadelta_decay,
                epsilon: self.mle.adadelta_epsilon,
            },
            max_iterations: self.pr.max_iterations,
            seed,
            include_reference_in_samples: self.pr.include_reference_in_samples,
            trace_interval: self.pr.trace_interval,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            beta: self.features.beta,
            cp_epsilon: self.features.cp_epsilon,
            enable_bd: self.features.enable_bd,
            enable_pt: self.features.enable_pt,
            enable_cp: self.features.enable_cp,
            enable_lr: self.features.enable_lr,
        }
    }

    pub fn thresholds(&self) -> ResourceThresholds {
        ResourceThresholds {
            dict_min_prob: self.resources.dict_min_prob,
            phrase_min_prob: self.resources.phrase_min_prob,
            phrase_min_count: self.resources.phrase_min_count,
            max_phrase_len: self.resources.max_phrase_len,
        }
    }

    /// Write the effective configuration next to a command's artifacts.
    pub fn snapshot(&self, command: &str) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        let path = self.output_dir.join(format!("config.{command}.toml"));
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    // artifact paths, fixed within output_dir

    pub fn src_vocab_path(&self) -> PathBuf {
        self.output_dir.join("vocab.src.txt")
    }

    pub fn tgt_vocab_path(&self) -> PathBuf {
        self.output_dir.join("vocab.tgt.txt")
    }

    pub fn dictionary_path(&self) -> PathBuf {
        self.output_dir.join("dictionary.tsv")
    }

    pub fn phrase_table_path(&self) -> PathBuf {
        self.output_dir.join("phrase_table.tsv")
    }

    pub fn mle_checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("model.mle.ckpt")
    }

    pub fn pr_checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("model.pr.ckpt")
    }

    pub fn gamma_path(&self) -> PathBuf {
        self.output_dir.join("gamma.tsv")
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            output_dir: PathBuf::from("run"),
            corpus: CorpusConfig::default(),
            model: ModelSection::default(),
            mle: MleSection::default(),
            pr: PrSection::default(),
            features: FeatureSection::default(),
            resources: ResourceSection::default(),
            decode: DecodeSection::default(),
        }
    }
}
