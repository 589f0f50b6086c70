//! `prnmt` command-line pipeline: resource extraction, MLE and
//! posterior-regularized training, decoding, reranking, and BLEU evaluation.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prnmt::error::Error;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "prnmt", version, about = "attention NMT with knowledge-guided training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabularies and extract a dictionary and phrase table from the
    /// training corpus
    ExtractResources(CommonArgs),
    /// Train the baseline model by maximum likelihood
    TrainMle(CommonArgs),
    /// Train model and feature weights jointly with the KL term
    TrainPr(CommonArgs),
    /// Translate a source file with beam search (optionally coverage-penalty
    /// rescored)
    Decode(DecodeArgs),
    /// Translate with beam search plus feature-based k-best reranking
    Rerank(RerankArgs),
    /// Score a hypothesis file against reference files with corpus BLEU
    Eval(EvalArgs),
}

/// Flags mirroring the config file keys one-to-one; any flag overrides the
/// corresponding key.
#[derive(Args, Default, Clone)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,

    // [corpus]
    #[arg(long)]
    train_source: Option<PathBuf>,
    #[arg(long)]
    train_target: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_vocab: Option<usize>,

    // [model]
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    attn_dim: Option<usize>,

    // [mle]
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    mle_iterations: Option<usize>,
    #[arg(long)]
    mle_trace_interval: Option<usize>,
    #[arg(long)]
    adadelta_decay: Option<f64>,
    #[arg(long)]
    adadelta_epsilon: Option<f64>,

    // [pr]
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    sample_max_len: Option<usize>,
    #[arg(long)]
    pr_batch_size: Option<usize>,
    #[arg(long)]
    gamma_step: Option<f64>,
    #[arg(long)]
    pr_iterations: Option<usize>,
    #[arg(long)]
    pr_trace_interval: Option<usize>,
    #[arg(long)]
    include_reference_in_samples: Option<bool>,
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,

    // [features]
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    cp_epsilon: Option<f64>,
    #[arg(long)]
    enable_bd: Option<bool>,
    #[arg(long)]
    enable_pt: Option<bool>,
    #[arg(long)]
    enable_cp: Option<bool>,
    #[arg(long)]
    enable_lr: Option<bool>,

    // [resources]
    #[arg(long)]
    dict_min_prob: Option<f64>,
    #[arg(long)]
    phrase_min_prob: Option<f64>,
    #[arg(long)]
    phrase_min_count: Option<u64>,
    #[arg(long)]
    max_phrase_len: Option<usize>,

    // [decode]
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    decode_max_len: Option<usize>,
    #[arg(long)]
    cp_weight: Option<f64>,
    #[arg(long)]
    cp_during_pruning: Option<bool>,
}

#[derive(Args)]
struct CommonArgs {
    /// experiment configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// source sentences to translate, one per line
    #[arg(long)]
    input: PathBuf,
    /// model checkpoint to decode with
    #[arg(long)]
    checkpoint: PathBuf,
    /// translation output path (default: <output_dir>/decode.txt)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// feature weights (default: <output_dir>/gamma.tsv)
    #[arg(long)]
    gamma: Option<PathBuf>,
    /// translation output path (default: <output_dir>/rerank.txt)
    #[arg(long)]
    output: Option<PathBuf>,
    /// per-candidate diagnostic dump (default: <output_dir>/kbest.txt)
    #[arg(long)]
    kbest_dump: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// hypothesis file, one tokenized sentence per line
    #[arg(long)]
    hypotheses: PathBuf,
    /// one or more reference files aligned with the hypotheses
    #[arg(long, required = true, num_args = 1..)]
    references: Vec<PathBuf>,
    /// keep case instead of the default case-insensitive scoring
    #[arg(long)]
    case_sensitive: bool,
    #[arg(long, default_value_t = 4)]
    max_n: usize,
}

fn effective_config(args: &CommonArgs) -> prnmt::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let o = &args.overrides;
    macro_rules! apply {
        ($($field:expr => $opt:expr),* $(,)?) => {
            $(if let Some(v) = $opt.clone() { $field = v; })*
        };
    }
    apply! {
        cfg.output_dir => o.output_dir,
        cfg.corpus.max_len => o.max_len,
        cfg.corpus.max_vocab => o.max_vocab,
        cfg.model.embed_dim => o.embed_dim,
        cfg.model.hidden_dim => o.hidden_dim,
        cfg.mle.batch_size => o.batch_size,
        cfg.mle.max_iterations => o.mle_iterations,
        cfg.mle.trace_interval => o.mle_trace_interval,
        cfg.mle.adadelta_decay => o.adadelta_decay,
        cfg.mle.adadelta_epsilon => o.adadelta_epsilon,
        cfg.pr.lambda1 => o.lambda1,
        cfg.pr.lambda2 => o.lambda2,
        cfg.pr.alpha => o.alpha,
        cfg.pr.sample_size => o.sample_size,
        cfg.pr.sample_max_len => o.sample_max_len,
        cfg.pr.pr_batch_size => o.pr_batch_size,
        cfg.pr.gamma_step => o.gamma_step,
        cfg.pr.max_iterations => o.pr_iterations,
        cfg.pr.trace_interval => o.pr_trace_interval,
        cfg.pr.include_reference_in_samples => o.include_reference_in_samples,
        cfg.features.beta => o.beta,
        cfg.features.cp_epsilon => o.cp_epsilon,
        cfg.features.enable_bd => o.enable_bd,
        cfg.features.enable_pt => o.enable_pt,
        cfg.features.enable_cp => o.enable_cp,
        cfg.features.enable_lr => o.enable_lr,
        cfg.resources.dict_min_prob => o.dict_min_prob,
        cfg.resources.phrase_min_prob => o.phrase_min_prob,
        cfg.resources.phrase_min_count => o.phrase_min_count,
        cfg.resources.max_phrase_len => o.max_phrase_len,
        cfg.decode.beam_size => o.beam_size,
        cfg.decode.max_len => o.decode_max_len,
        cfg.decode.cp_weight => o.cp_weight,
        cfg.decode.cp_during_pruning => o.cp_during_pruning,
    }
    if let Some(seed) = o.seed {
        cfg.seed = Some(seed);
    }
    if let Some(p) = &o.train_source {
        cfg.corpus.train_source = Some(p.clone());
    }
    if let Some(p) = &o.train_target {
        cfg.corpus.train_target = Some(p.clone());
    }
    if let Some(d) = o.attn_dim {
        cfg.model.attn_dim = Some(d);
    }
    if let Some(p) = &o.init_checkpoint {
        cfg.pr.init_checkpoint = Some(p.clone());
    }
    Ok(cfg)
}

fn run() -> prnmt::Result<()> {
    let cli = Cli::try_parse().map_err(|e| Error::Config(e.to_string()))?;
    match cli.command {
        Command::ExtractResources(args) => {
            let cfg = effective_config(&args)?;
            commands::extract_resources(&cfg)
        }
        Command::TrainMle(args) => {
            let cfg = effective_config(&args)?;
            commands::train_mle(&cfg)
        }
        Command::TrainPr(args) => {
            let cfg = effective_config(&args)?;
            commands::train_pr(&cfg)
        }
        Command::Decode(args) => {
            let cfg = effective_config(&args.common)?;
            commands::decode(&cfg, &args.input, &args.checkpoint, args.output.as_deref())
        }
        Command::Rerank(args) => {
            let cfg = effective_config(&args.common)?;
            commands::rerank(
                &cfg,
                &args.input,
                &args.checkpoint,
                args.gamma.as_deref(),
                args.output.as_deref(),
                args.kbest_dump.as_deref(),
            )
        }
        Command::Eval(args) => {
            commands::eval(&args.hypotheses, &args.references, !args.case_sensitive, args.max_n)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
