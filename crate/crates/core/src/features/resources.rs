//! Bilingual dictionary and phrase table: TSV import, co-occurrence based
//! extraction from a parallel corpus, and the vocabulary/probability/count
//! filters applied to both.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::{RawPair, Vocabulary};
use crate::error::{Error, Result};

/// Retention thresholds. Dictionary entries need both directional
/// probabilities above `dict_min_prob`; phrase pairs additionally need at
/// least `phrase_min_count` occurrences and both probabilities above
/// `phrase_min_prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceThresholds {
    pub dict_min_prob: f64,
    pub phrase_min_prob: f64,
    pub phrase_min_count: u64,
    /// longest phrase the extractor proposes
    pub max_phrase_len: usize,
}

impl Default for ResourceThresholds {
    fn default() -> Self {
        ResourceThresholds {
            dict_min_prob: 0.1,
            phrase_min_prob: 0.5,
            phrase_min_count: 10,
            max_phrase_len: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictEntry {
    pub src: String,
    pub tgt: String,
    pub src_id: u32,
    pub tgt_id: u32,
    pub p_src_given_tgt: f64,
    pub p_tgt_given_src: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dictionary {
    pub entries: Vec<DictEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseEntry {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub src_ids: Vec<u32>,
    pub tgt_ids: Vec<u32>,
    pub p_src_given_tgt: f64,
    pub p_tgt_given_src: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhraseTable {
    pub entries: Vec<PhraseEntry>,
}

/// Dictionary and phrase table together, as the feature functions consume
/// them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeResources {
    pub dictionary: Dictionary,
    pub phrase_table: PhraseTable,
}

fn parse_prob(path: &Path, lineno: usize, field: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Resource {
        path: path.to_path_buf(),
        line: lineno,
        msg: format!("bad probability {field:?}"),
    })?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Resource {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("probability {v} outside [0, 1]"),
        });
    }
    Ok(v)
}

/// Read a dictionary TSV (`src<TAB>tgt<TAB>p_src_given_tgt<TAB>p_tgt_given_src`),
/// dropping entries with out-of-vocabulary tokens or a probability at or
/// below the threshold in either direction.
pub fn load_dictionary(
    path: &Path,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    thresholds: &ResourceThresholds,
) -> Result<Dictionary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Resource {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let p_src_given_tgt = parse_prob(path, i + 1, fields[2])?;
        let p_tgt_given_src = parse_prob(path, i + 1, fields[3])?;
        if p_src_given_tgt <= thresholds.dict_min_prob || p_tgt_given_src <= thresholds.dict_min_prob
        {
            continue;
        }
        let (src_id, tgt_id) = match (src_vocab.id_of(fields[0]), tgt_vocab.id_of(fields[1])) {
            (Some(s), Some(t)) => (s, t),
            _ => continue, // out-of-vocabulary entry
        };
        entries.push(DictEntry {
            src: fields[0].to_string(),
            tgt: fields[1].to_string(),
            src_id,
            tgt_id,
            p_src_given_tgt,
            p_tgt_given_src,
        });
    }
    Ok(Dictionary { entries })
}

/// Read a phrase-table TSV
/// (`src_phrase<TAB>tgt_phrase<TAB>p_src_given_tgt<TAB>p_tgt_given_src<TAB>count`
/// with space-joined phrases), applying the count, probability, and
/// vocabulary filters.
pub fn load_phrase_table(
    path: &Path,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    thresholds: &ResourceThresholds,
) -> Result<PhraseTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Resource {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let p_src_given_tgt = parse_prob(path, i + 1, fields[2])?;
        let p_tgt_given_src = parse_prob(path, i + 1, fields[3])?;
        let count: u64 = fields[4].parse().map_err(|_| Error::Resource {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad count {:?}", fields[4]),
        })?;
        if count < thresholds.phrase_min_count
            || p_src_given_tgt <= thresholds.phrase_min_prob
            || p_tgt_given_src <= thresholds.phrase_min_prob
        {
            continue;
        }
        let src: Vec<String> = fields[0].split(' ').map(str::to_string).collect();
        let tgt: Vec<String> = fields[1].split(' ').map(str::to_string).collect();
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::Resource {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "empty phrase".into(),
            });
        }
        let src_ids: Option<Vec<u32>> = src.iter().map(|t| src_vocab.id_of(t)).collect();
        let tgt_ids: Option<Vec<u32>> = tgt.iter().map(|t| tgt_vocab.id_of(t)).collect();
        let (src_ids, tgt_ids) = match (src_ids, tgt_ids) {
            (Some(s), Some(t)) => (s, t),
            _ => continue,
        };
        entries.push(PhraseEntry {
            src,
            tgt,
            src_ids,
            tgt_ids,
            p_src_given_tgt,
            p_tgt_given_src,
            count,
        });
    }
    Ok(PhraseTable { entries })
}

pub fn save_dictionary(dict: &Dictionary, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in &dict.entries {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.src, e.tgt, e.p_src_given_tgt, e.p_tgt_given_src
        )
        .map_err(|err| Error::io(path, err))?;
    }
    Ok(())
}

pub fn save_phrase_table(table: &PhraseTable, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in &table.entries {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            e.src.join(" "),
            e.tgt.join(" "),
            e.p_src_given_tgt,
            e.p_tgt_given_src,
            e.count
        )
        .map_err(|err| Error::io(path, err))?;
    }
    Ok(())
}

/// Estimate a dictionary and phrase table from the corpus itself.
///
/// Directional probabilities are normalized co-occurrence counts at the
/// sentence level: p(t|s) = #pairs containing both / #pairs containing s,
/// and symmetrically. Phrases are contiguous n-grams up to
/// `thresholds.max_phrase_len`. The usual probability/count/vocabulary
/// filters are applied to the estimates.
pub fn extract_resources(
    pairs: &[RawPair],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    thresholds: &ResourceThresholds,
) -> (Dictionary, PhraseTable) {
    let mut word_cooc: HashMap<(String, String), u64> = HashMap::new();
    let mut word_src: HashMap<String, u64> = HashMap::new();
    let mut word_tgt: HashMap<String, u64> = HashMap::new();

    let mut phrase_cooc: HashMap<(String, String), u64> = HashMap::new();
    let mut phrase_src: HashMap<String, u64> = HashMap::new();
    let mut phrase_tgt: HashMap<String, u64> = HashMap::new();

    for pair in pairs {
        let src_words = distinct(&pair.source);
        let tgt_words = distinct(&pair.target);
        for s in &src_words {
            *word_src.entry(s.clone()).or_insert(0) += 1;
        }
        for t in &tgt_words {
            *word_tgt.entry(t.clone()).or_insert(0) += 1;
        }
        for s in &src_words {
            for t in &tgt_words {
                *word_cooc.entry((s.clone(), t.clone())).or_insert(0) += 1;
            }
        }

        let src_phrases = distinct_ngrams(&pair.source, thresholds.max_phrase_len);
        let tgt_phrases = distinct_ngrams(&pair.target, thresholds.max_phrase_len);
        for s in &src_phrases {
            *phrase_src.entry(s.clone()).or_insert(0) += 1;
        }
        for t in &tgt_phrases {
            *phrase_tgt.entry(t.clone()).or_insert(0) += 1;
        }
        for s in &src_phrases {
            for t in &tgt_phrases {
                *phrase_cooc.entry((s.clone(), t.clone())).or_insert(0) += 1;
            }
        }
    }

    let mut dict_entries = Vec::new();
    for ((s, t), c) in &word_cooc {
        let p_tgt_given_src = *c as f64 / word_src[s] as f64;
        let p_src_given_tgt = *c as f64 / word_tgt[t] as f64;
        if p_tgt_given_src <= thresholds.dict_min_prob
            || p_src_given_tgt <= thresholds.dict_min_prob
        {
            continue;
        }
        let (src_id, tgt_id) = match (src_vocab.id_of(s), tgt_vocab.id_of(t)) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        dict_entries.push(DictEntry {
            src: s.clone(),
            tgt: t.clone(),
            src_id,
            tgt_id,
            p_src_given_tgt,
            p_tgt_given_src,
        });
    }
    dict_entries.sort_by(|a, b| a.src.cmp(&b.src).then(a.tgt.cmp(&b.tgt)));

    let mut phrase_entries = Vec::new();
    for ((s, t), c) in &phrase_cooc {
        if *c < thresholds.phrase_min_count {
            continue;
        }
        let p_tgt_given_src = *c as f64 / phrase_src[s] as f64;
        let p_src_given_tgt = *c as f64 / phrase_tgt[t] as f64;
        if p_tgt_given_src <= thresholds.phrase_min_prob
            || p_src_given_tgt <= thresholds.phrase_min_prob
        {
            continue;
        }
        let src: Vec<String> = s.split(' ').map(str::to_string).collect();
        let tgt: Vec<String> = t.split(' ').map(str::to_string).collect();
        let src_ids: Option<Vec<u32>> = src.iter().map(|w| src_vocab.id_of(w)).collect();
        let tgt_ids: Option<Vec<u32>> = tgt.iter().map(|w| tgt_vocab.id_of(w)).collect();
        let (src_ids, tgt_ids) = match (src_ids, tgt_ids) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        phrase_entries.push(PhraseEntry {
            src,
            tgt,
            src_ids,
            tgt_ids,
            p_src_given_tgt,
            p_tgt_given_src,
            count: *c,
        });
    }
    phrase_entries.sort_by(|a, b| a.src.cmp(&b.src).then(a.tgt.cmp(&b.tgt)));

    (
        Dictionary {
            entries: dict_entries,
        },
        PhraseTable {
            entries: phrase_entries,
        },
    )
}

fn distinct(tokens: &[String]) -> Vec<String> {
    let mut out = tokens.to_vec();
    out.sort();
    out.dedup();
    out
}

fn distinct_ngrams(tokens: &[String], max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 1..=max_len.min(tokens.len()) {
        for w in tokens.windows(n) {
            out.push(w.join(" "));
        }
    }
    out.sort();
    out.dedup();
    out
}
