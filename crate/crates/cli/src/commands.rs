//! Command implementations. Each command validates its inputs, writes its
//! artifacts under `output_dir`, and drops a config snapshot alongside them.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use prnmt::corpus::{self, SentencePair, Vocabulary};
use prnmt::decode::{decode_with_cp, decode_with_cp_pruning, kbest_dump_line, rerank as rerank_kbest};
use prnmt::error::{Error, Result};
use prnmt::eval::bleu_score;
use prnmt::features::{
    extract_resources as extract, load_dictionary, load_phrase_table, save_dictionary,
    save_phrase_table, KnowledgeResources,
};
use prnmt::model::{
    beam_search, checkpoint::load_checkpoint, checkpoint::save_checkpoint, init_params,
    ModelConfig, ModelParams,
};
use prnmt::par;
use prnmt::posreg::{train_mle as run_mle, train_posreg as run_pr, FeatureWeights};

use crate::config::ExperimentConfig;

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))
}

fn train_paths(cfg: &ExperimentConfig) -> Result<(PathBuf, PathBuf)> {
    let src = cfg.corpus.train_source.clone().ok_or_else(|| {
        Error::Config("corpus.train_source is required for this command".into())
    })?;
    let tgt = cfg.corpus.train_target.clone().ok_or_else(|| {
        Error::Config("corpus.train_target is required for this command".into())
    })?;
    require_exists(&src, "training source file")?;
    require_exists(&tgt, "training target file")?;
    Ok((src, tgt))
}

struct LoadedCorpus {
    pairs: Vec<SentencePair>,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    raw: Vec<corpus::RawPair>,
}

/// Load the training corpus and (re)build both vocabularies; pure functions
/// of the corpus files, so every command that needs them derives identical
/// artifacts.
fn load_training_corpus(cfg: &ExperimentConfig) -> Result<LoadedCorpus> {
    let (src_path, tgt_path) = train_paths(cfg)?;
    let load = corpus::load_parallel_corpus(&src_path, &tgt_path, cfg.corpus.max_len)?;
    if load.dropped > 0 {
        eprintln!(
            "corpus: dropped {} pair(s) (empty side or longer than {} tokens)",
            load.dropped, cfg.corpus.max_len
        );
    }
    let src_vocab = corpus::build_vocab(&load.pairs, corpus::Side::Source, cfg.corpus.max_vocab)?;
    let tgt_vocab = corpus::build_vocab(&load.pairs, corpus::Side::Target, cfg.corpus.max_vocab)?;
    let pairs = corpus::encode_pairs(&load.pairs, &src_vocab, &tgt_vocab);
    Ok(LoadedCorpus {
        pairs,
        src_vocab,
        tgt_vocab,
        raw: load.pairs,
    })
}

fn save_vocabs(cfg: &ExperimentConfig, corpus: &LoadedCorpus) -> Result<()> {
    corpus.src_vocab.save(&cfg.src_vocab_path())?;
    corpus.tgt_vocab.save(&cfg.tgt_vocab_path())
}

fn model_config(cfg: &ExperimentConfig, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
    let mut mc = ModelConfig::new(src_vocab, tgt_vocab, cfg.model.embed_dim, cfg.model.hidden_dim);
    if let Some(a) = cfg.model.attn_dim {
        mc.attn_dim = a;
    }
    mc
}

fn load_vocabs(cfg: &ExperimentConfig) -> Result<(Vocabulary, Vocabulary)> {
    require_exists(&cfg.src_vocab_path(), "source vocabulary")?;
    require_exists(&cfg.tgt_vocab_path(), "target vocabulary")?;
    Ok((
        Vocabulary::load(&cfg.src_vocab_path())?,
        Vocabulary::load(&cfg.tgt_vocab_path())?,
    ))
}

fn load_resources(
    cfg: &ExperimentConfig,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<KnowledgeResources> {
    let thresholds = cfg.thresholds();
    require_exists(&cfg.dictionary_path(), "dictionary (run extract-resources first)")?;
    require_exists(&cfg.phrase_table_path(), "phrase table (run extract-resources first)")?;
    Ok(KnowledgeResources {
        dictionary: load_dictionary(&cfg.dictionary_path(), src_vocab, tgt_vocab, &thresholds)?,
        phrase_table: load_phrase_table(
            &cfg.phrase_table_path(),
            src_vocab,
            tgt_vocab,
            &thresholds,
        )?,
    })
}

fn read_source_lines(path: &Path, max_len: usize) -> Result<Vec<Vec<String>>> {
    require_exists(path, "input file")?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| {
            let mut toks: Vec<String> = l.split_whitespace().map(str::to_string).collect();
            toks.truncate(max_len);
            toks
        })
        .collect())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Strip the terminal EOS (if any) and map ids back to surface tokens.
fn surface(tokens: &[u32], vocab: &Vocabulary) -> Vec<String> {
    let mut t = tokens;
    if t.last() == Some(&corpus::EOS_ID) {
        t = &t[..t.len() - 1];
    }
    vocab.decode(t)
}

pub fn extract_resources(cfg: &ExperimentConfig) -> Result<()> {
    cfg.seed()?; // validates presence even though extraction is deterministic
    ensure_output_dir(cfg)?;
    let corpus = load_training_corpus(cfg)?;
    save_vocabs(cfg, &corpus)?;
    let (dict, table) = extract(
        &corpus.raw,
        &corpus.src_vocab,
        &corpus.tgt_vocab,
        &cfg.thresholds(),
    );
    save_dictionary(&dict, &cfg.dictionary_path())?;
    save_phrase_table(&table, &cfg.phrase_table_path())?;
    cfg.snapshot("extract-resources")?;
    println!(
        "extracted {} dictionary entries and {} phrase pairs",
        dict.entries.len(),
        table.entries.len()
    );
    Ok(())
}

pub fn train_mle(cfg: &ExperimentConfig) -> Result<()> {
    let seed = cfg.seed()?;
    ensure_output_dir(cfg)?;
    let corpus = load_training_corpus(cfg)?;
    save_vocabs(cfg, &corpus)?;

    let mc = model_config(cfg, corpus.src_vocab.len(), corpus.tgt_vocab.len());
    let init = init_params(&mc, seed)?;
    let (params, trace) = run_mle(&cfg.mle_config(seed), &corpus.pairs, &init)?;

    save_checkpoint(&params, &cfg.mle_checkpoint_path())?;
    trace.save(&cfg.output_dir.join("trace.mle.tsv"))?;
    cfg.snapshot("train-mle")?;
    if let Some(last) = trace.records.last() {
        println!(
            "trained {} iterations, final mean per-token log-likelihood {:.4}",
            cfg.mle.max_iterations, last.mean_log_likelihood
        );
    }
    Ok(())
}

pub fn train_pr(cfg: &ExperimentConfig) -> Result<()> {
    let seed = cfg.seed()?;
    ensure_output_dir(cfg)?;
    let corpus = load_training_corpus(cfg)?;
    save_vocabs(cfg, &corpus)?;
    let resources = load_resources(cfg, &corpus.src_vocab, &corpus.tgt_vocab)?;

    let init_path = cfg
        .pr
        .init_checkpoint
        .clone()
        .unwrap_or_else(|| cfg.mle_checkpoint_path());
    require_exists(&init_path, "initial checkpoint (train-mle first or pass --init-checkpoint)")?;
    let init = load_checkpoint(&init_path)?;
    let expected = model_config(cfg, corpus.src_vocab.len(), corpus.tgt_vocab.len());
    if init.config != expected {
        return Err(Error::Config(format!(
            "checkpoint {} does not match the configured model/vocabulary shapes",
            init_path.display()
        )));
    }

    let (params, gamma, trace) = run_pr(
        &cfg.pr_config(seed),
        &cfg.feature_config(),
        &corpus.pairs,
        &resources,
        &init,
        &FeatureWeights::new(),
    )?;

    save_checkpoint(&params, &cfg.pr_checkpoint_path())?;
    gamma.save(&cfg.gamma_path())?;
    trace.save(&cfg.output_dir.join("trace.pr.tsv"))?;
    cfg.snapshot("train-pr")?;
    if let Some(last) = trace.records.last() {
        println!(
            "trained {} iterations, final mean sampled KL {:.4}, gamma norm {:.4}",
            cfg.pr.max_iterations, last.mean_kl, last.gamma_norm
        );
    }
    Ok(())
}

fn load_model(path: &Path, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Result<ModelParams> {
    require_exists(path, "checkpoint")?;
    let params = load_checkpoint(path)?;
    if params.config.src_vocab != src_vocab.len() || params.config.tgt_vocab != tgt_vocab.len() {
        return Err(Error::Config(format!(
            "checkpoint vocabulary sizes {}x{} do not match vocab files {}x{}",
            params.config.src_vocab,
            params.config.tgt_vocab,
            src_vocab.len(),
            tgt_vocab.len()
        )));
    }
    Ok(params)
}

pub fn decode(
    cfg: &ExperimentConfig,
    input: &Path,
    checkpoint: &Path,
    output: Option<&Path>,
) -> Result<()> {
    cfg.seed()?;
    ensure_output_dir(cfg)?;
    let (src_vocab, tgt_vocab) = load_vocabs(cfg)?;
    let params = load_model(checkpoint, &src_vocab, &tgt_vocab)?;
    let sentences = read_source_lines(input, cfg.corpus.max_len)?;

    let results = par::map_collect(&sentences, |tokens| -> Result<String> {
        if tokens.is_empty() {
            return Ok(String::new());
        }
        let ids = src_vocab.encode(tokens);
        let best = if cfg.decode.cp_during_pruning {
            decode_with_cp_pruning(
                &params,
                &ids,
                cfg.decode.beam_size,
                cfg.decode.cp_weight,
                cfg.decode.max_len,
                cfg.features.cp_epsilon,
            )?
        } else {
            decode_with_cp(
                &params,
                &ids,
                cfg.decode.beam_size,
                cfg.decode.cp_weight,
                cfg.decode.max_len,
                cfg.features.cp_epsilon,
            )?
        };
        Ok(surface(&best.tokens, &tgt_vocab).join(" "))
    });
    let lines: Vec<String> = results.into_iter().collect::<Result<_>>()?;

    let out_path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("decode.txt"));
    write_lines(&out_path, &lines)?;
    cfg.snapshot("decode")?;
    println!("decoded {} sentence(s) to {}", lines.len(), out_path.display());
    Ok(())
}

pub fn rerank(
    cfg: &ExperimentConfig,
    input: &Path,
    checkpoint: &Path,
    gamma_path: Option<&Path>,
    output: Option<&Path>,
    kbest_dump: Option<&Path>,
) -> Result<()> {
    cfg.seed()?;
    ensure_output_dir(cfg)?;
    let (src_vocab, tgt_vocab) = load_vocabs(cfg)?;
    let params = load_model(checkpoint, &src_vocab, &tgt_vocab)?;
    let resources = load_resources(cfg, &src_vocab, &tgt_vocab)?;
    let gamma_file = gamma_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.gamma_path());
    require_exists(&gamma_file, "feature weights (train-pr first or pass --gamma)")?;
    let gamma = FeatureWeights::load(&gamma_file)?;
    let feature_config = cfg.feature_config();
    let sentences = read_source_lines(input, cfg.corpus.max_len)?;

    type Candidate = (Vec<String>, f64, f64);
    let results = par::map_collect(&sentences, |tokens| -> Result<(String, Vec<Candidate>)> {
        if tokens.is_empty() {
            return Ok((String::new(), Vec::new()));
        }
        let ids = src_vocab.encode(tokens);
        let kbest = beam_search(&params, &ids, cfg.decode.beam_size, cfg.decode.max_len)?;
        let result = rerank_kbest(&kbest, &gamma, &resources, &feature_config, &ids)?;
        let chosen = surface(&result.chosen.tokens, &tgt_vocab).join(" ");
        let candidates = kbest
            .iter()
            .zip(&result.breakdown)
            .map(|(h, (logp, gphi))| (surface(&h.tokens, &tgt_vocab), *logp, *gphi))
            .collect();
        Ok((chosen, candidates))
    });

    let mut lines = Vec::with_capacity(sentences.len());
    let mut dump_lines = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        let (chosen, candidates) = res?;
        lines.push(chosen);
        for (toks, logp, gphi) in candidates {
            dump_lines.push(kbest_dump_line(i, &toks, logp, gphi));
        }
    }

    let out_path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("rerank.txt"));
    write_lines(&out_path, &lines)?;
    let dump_path = kbest_dump
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("kbest.txt"));
    write_lines(&dump_path, &dump_lines)?;
    cfg.snapshot("rerank")?;
    println!(
        "reranked {} sentence(s) to {} (k-best dump in {})",
        lines.len(),
        out_path.display(),
        dump_path.display()
    );
    Ok(())
}

pub fn eval(hypotheses: &Path, references: &[PathBuf], lowercase: bool, max_n: usize) -> Result<()> {
    require_exists(hypotheses, "hypothesis file")?;
    let hyp_text = fs::read_to_string(hypotheses).map_err(|e| Error::io(hypotheses, e))?;
    let hyps: Vec<Vec<String>> = hyp_text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();

    let mut ref_columns = Vec::new();
    for path in references {
        require_exists(path, "reference file")?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sentences: Vec<Vec<String>> = text
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect();
        if sentences.len() != hyps.len() {
            return Err(Error::Corpus(format!(
                "{} has {} lines but hypotheses have {}",
                path.display(),
                sentences.len(),
                hyps.len()
            )));
        }
        ref_columns.push(sentences);
    }
    let refs: Vec<Vec<Vec<String>>> = (0..hyps.len())
        .map(|i| ref_columns.iter().map(|c| c[i].clone()).collect())
        .collect();

    let report = bleu_score(&hyps, &refs, max_n, lowercase)?;
    println!("{report}");
    Ok(())
}
