//! Parallel-corpus ingestion, vocabulary construction, and token/id coding.
//!
//! Corpora are plain UTF-8 text, one whitespace-tokenized sentence per line.
//! Vocabularies keep the most frequent tokens up to a size cap and reserve
//! the first four ids for PAD/BOS/EOS/UNK.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

pub const DEFAULT_MAX_VOCAB: usize = 30_000;
pub const DEFAULT_MAX_LEN: usize = 50;

/// One tokenized sentence pair, still as surface strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// A loaded corpus plus how many pairs the length/emptiness filter dropped.
#[derive(Debug, Clone)]
pub struct CorpusLoad {
    pub pairs: Vec<RawPair>,
    pub dropped: usize,
}

/// Which side of the corpus a vocabulary is built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Token/id bijection with reserved specials at ids 0..=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

/// An id-encoded sentence pair ready for training. Neither side stores
/// BOS/EOS markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(|t| t.to_string()).collect()
}

/// Load an aligned pair of sentence files. Pairs with an empty side or a side
/// longer than `max_len` tokens are dropped and counted, not fatal; unequal
/// line counts are.
pub fn load_parallel_corpus(
    src_path: &Path,
    tgt_path: &Path,
    max_len: usize,
) -> Result<CorpusLoad> {
    let src_lines = read_lines(src_path)?;
    let tgt_lines = read_lines(tgt_path)?;
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Corpus(format!(
            "line count mismatch: {} has {} lines, {} has {}",
            src_path.display(),
            src_lines.len(),
            tgt_path.display(),
            tgt_lines.len()
        )));
    }

    let mut pairs = Vec::with_capacity(src_lines.len());
    let mut dropped = 0usize;
    for (src_line, tgt_line) in src_lines.iter().zip(&tgt_lines) {
        let source = tokenize(src_line);
        let target = tokenize(tgt_line);
        if source.is_empty() || target.is_empty() || source.len() > max_len || target.len() > max_len
        {
            dropped += 1;
            continue;
        }
        pairs.push(RawPair { source, target });
    }
    Ok(CorpusLoad { pairs, dropped })
}

/// Build a vocabulary over one side of the corpus: specials first, then
/// tokens by descending frequency, ties broken by first occurrence.
pub fn build_vocab(pairs: &[RawPair], side: Side, max_size: usize) -> Result<Vocabulary> {
    if max_size < SPECIAL_TOKENS.len() + 1 {
        return Err(Error::Config(format!(
            "vocabulary size {max_size} leaves no room for real tokens"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Corpus("cannot build a vocabulary from an empty corpus".into()));
    }

    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new(); // token -> (count, first index)
    let mut next_occurrence = 0usize;
    for pair in pairs {
        let tokens = match side {
            Side::Source => &pair.source,
            Side::Target => &pair.target,
        };
        for tok in tokens {
            let entry = counts.entry(tok.as_str()).or_insert_with(|| {
                let e = (0, next_occurrence);
                next_occurrence += 1;
                e
            });
            entry.0 += 1;
        }
    }

    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    for (tok, _, _) in ranked.into_iter().take(max_size - SPECIAL_TOKENS.len()) {
        id_to_token.push(tok.to_string());
    }
    Ok(Vocabulary::from_tokens(id_to_token))
}

impl Vocabulary {
    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// Encode tokens, mapping anything out of vocabulary to UNK.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id_of(t).unwrap_or(UNK_ID))
            .collect()
    }

    /// Decode ids back to surface tokens. Unknown ids become the UNK surface
    /// form rather than panicking.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|id| {
                self.token_of(*id)
                    .unwrap_or(SPECIAL_TOKENS[UNK_ID as usize])
                    .to_string()
            })
            .collect()
    }

    /// Write as "id<TAB>token" lines, specials first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(w, "{id}\t{tok}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let lines = read_lines(path)?;
        let mut id_to_token = Vec::with_capacity(lines.len());
        for (lineno, line) in lines.iter().enumerate() {
            let (id_str, tok) = line.split_once('\t').ok_or_else(|| Error::Resource {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "expected id<TAB>token".into(),
            })?;
            let id: usize = id_str.parse().map_err(|_| Error::Resource {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("bad id {id_str:?}"),
            })?;
            if id != id_to_token.len() {
                return Err(Error::Resource {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("ids must be contiguous from 0, got {id}"),
                });
            }
            id_to_token.push(tok.to_string());
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if id_to_token.get(i).map(|s| s.as_str()) != Some(*special) {
                return Err(Error::Resource {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected special token {special} at id {i}"),
                });
            }
        }
        Ok(Vocabulary::from_tokens(id_to_token))
    }
}

/// Encode every raw pair with the two vocabularies.
pub fn encode_pairs(
    pairs: &[RawPair],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Vec<SentencePair> {
    pairs
        .iter()
        .map(|p| SentencePair {
            source: src_vocab.encode(&p.source),
            target: tgt_vocab.encode(&p.target),
        })
        .collect()
}
