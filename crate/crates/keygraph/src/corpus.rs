//! Dataset ingestion, checkpoint persistence, embedding import and the
//! line-based config format.
//!
//! Corpora are JSONL files with string fields `title` and `abstract`,
//! an array `keyphrases`, and an optional `id`. Ingestion concatenates
//! title and abstract, tokenizes, builds the word graph, and keeps only
//! gold phrases whose stemmed token sequence occurs contiguously in the
//! stemmed document.

use crate::beam::ExtractionConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{build_graph_from_doc, WordGraph};
use crate::model::{ModelConfig, ModelState, Vocab};
use crate::porter;
use crate::tensor::{Dtype, Scalar, Tensor};
use crate::text::{TextPipeline, TokenizedDocument};
use crate::trainer::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
pub struct DatasetRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub keyphrases: Vec<String>,
}

/// Reads newline-delimited JSON records; parse failures carry 1-based
/// line numbers.
pub fn load_jsonl(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Documents without surviving gold phrases are dropped.
    Train,
    /// All tokenizable documents are retained; empty-gold documents are
    /// skipped later by the metrics.
    Eval,
}

#[derive(Debug, Clone)]
pub struct IngestedDoc {
    pub doc_id: String,
    pub doc: TokenizedDocument,
    pub graph: WordGraph,
    /// Gold phrases as node-index sequences, deduplicated by stem.
    pub gold_nodes: Vec<Vec<usize>>,
    /// The same phrases as token lists, for metric matching.
    pub gold_tokens: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestStats {
    pub records: usize,
    pub docs_kept: usize,
    pub docs_dropped_empty: usize,
    pub docs_dropped_no_golds: usize,
    pub phrases_total: usize,
    pub phrases_kept: usize,
}

#[derive(Debug, Clone)]
pub struct IngestedDataset {
    pub docs: Vec<IngestedDoc>,
    pub stats: IngestStats,
}

/// Finds the node-index sequence of a phrase if its stems occur
/// contiguously in the document.
pub fn phrase_node_indices(
    doc: &TokenizedDocument,
    graph: &WordGraph,
    phrase_stems: &[String],
) -> Option<Vec<usize>> {
    if phrase_stems.is_empty() || phrase_stems.len() > doc.stems.len() {
        return None;
    }
    let found = doc
        .stems
        .windows(phrase_stems.len())
        .any(|w| w == phrase_stems);
    if !found {
        return None;
    }
    phrase_stems
        .iter()
        .map(|s| graph.nodes.index_of(s))
        .collect()
}

pub fn ingest(records: &[DatasetRecord], pipeline: &TextPipeline, split: Split) -> IngestedDataset {
    let prepared = exec::par_map(records, |record| {
        let text = format!("{} {}", record.title, record.abstract_text);
        let doc = match pipeline.tokenize(&text) {
            Ok(doc) => doc,
            Err(_) => return None,
        };
        let graph = build_graph_from_doc(&doc);
        let mut gold_nodes: Vec<Vec<usize>> = Vec::new();
        let mut gold_tokens: Vec<Vec<String>> = Vec::new();
        for phrase in &record.keyphrases {
            let tokens: Vec<String> = phrase
                .split(|c: char| !c.is_alphanumeric())
                .filter(|p| !p.is_empty())
                .map(|p| p.to_lowercase())
                .collect();
            let stems: Vec<String> = tokens.iter().map(|t| porter::stem(t)).collect();
            if let Some(nodes) = phrase_node_indices(&doc, &graph, &stems) {
                if !gold_nodes.contains(&nodes) {
                    gold_nodes.push(nodes);
                    gold_tokens.push(tokens);
                }
            }
        }
        Some((doc, graph, gold_nodes, gold_tokens, record.keyphrases.len()))
    });

    let mut stats = IngestStats {
        records: records.len(),
        ..Default::default()
    };
    let mut docs = Vec::new();
    for (idx, prep) in prepared.into_iter().enumerate() {
        let Some((doc, graph, gold_nodes, gold_tokens, phrases_total)) = prep else {
            stats.docs_dropped_empty += 1;
            continue;
        };
        stats.phrases_total += phrases_total;
        stats.phrases_kept += gold_nodes.len();
        if split == Split::Train && gold_nodes.is_empty() {
            stats.docs_dropped_no_golds += 1;
            continue;
        }
        let doc_id = records[idx]
            .id
            .clone()
            .unwrap_or_else(|| format!("doc{idx}"));
        stats.docs_kept += 1;
        docs.push(IngestedDoc {
            doc_id,
            doc,
            graph,
            gold_nodes,
            gold_tokens,
        });
    }
    IngestedDataset { docs, stats }
}

// --- checkpoints ----------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"DIVKEY1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub step: u64,
    pub valid_loss: f64,
}

fn config_block<T: Scalar>(state: &ModelState<T>, meta: &CheckpointMeta) -> String {
    let cfg = &state.cfg;
    let mut s = String::new();
    s.push_str("format = 1\n");
    s.push_str(&format!("dtype = {}\n", T::DTYPE.name()));
    s.push_str(&format!("d_in = {}\n", cfg.d_in));
    s.push_str(&format!("d_h = {}\n", cfg.d_h));
    s.push_str(&format!("gcn_layers = {}\n", cfg.gcn_layers));
    s.push_str(&format!("gru_layers = {}\n", cfg.gru_layers));
    s.push_str(&format!("max_doc_len = {}\n", cfg.max_doc_len));
    s.push_str(&format!("dropout_embed = {}\n", cfg.dropout_embed));
    s.push_str(&format!("dropout_gcn = {}\n", cfg.dropout_gcn));
    s.push_str(&format!("bn_momentum = {}\n", cfg.bn_momentum));
    s.push_str(&format!("step = {}\n", meta.step));
    s.push_str(&format!("valid_loss = {}\n", meta.valid_loss));
    s.push_str(&format!("vocab = {}\n", state.vocab.stems().join(" ")));
    s
}

fn write_array<T: Scalar>(out: &mut Vec<u8>, name: &str, tensor: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.tag());
    out.push(2u8);
    out.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
    for &v in tensor.data() {
        v.write_le(out);
    }
}

/// Serializes all parameters, batch-norm running stats, config and step
/// counter. Layout: magic, u32 config length, config text, u32 array
/// count, then per array: u16 name length, name, dtype tag, rank, u64
/// dims, little-endian payload.
pub fn save_checkpoint<T: Scalar>(
    state: &ModelState<T>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let config = config_block(state, meta);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());

    let count = state.params.len() + 2;
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for p in state.params.iter() {
        write_array(&mut out, &p.name, &p.value);
    }
    write_array(&mut out, "bn.running_mean", &state.bn.running_mean);
    write_array(&mut out, "bn.running_var", &state.bn.running_var);

    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

struct ByteReader<R> {
    inner: R,
}

impl<R: Read> ByteReader<R> {
    fn exact(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::CorruptCheckpoint(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.exact(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        let b = self.exact(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

fn parse_config_map(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::CorruptCheckpoint(format!("bad config line {line:?}")))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn cfg_get<'a>(map: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("missing config key {key}")))
}

fn cfg_parse<V: std::str::FromStr>(map: &HashMap<String, String>, key: &str) -> Result<V> {
    cfg_get(map, key)?
        .parse()
        .map_err(|_| Error::CorruptCheckpoint(format!("bad value for config key {key}")))
}

/// Reads just the stored dtype so callers can pick the element type.
pub fn checkpoint_dtype(path: &Path) -> Result<Dtype> {
    let (map, _) = read_header(&mut ByteReader {
        inner: BufReader::new(fs::File::open(path)?),
    })?;
    match cfg_get(&map, "dtype")? {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        other => Err(Error::CorruptCheckpoint(format!("unknown dtype {other}"))),
    }
}

fn read_header<R: Read>(r: &mut ByteReader<R>) -> Result<(HashMap<String, String>, u32)> {
    let magic = r.exact(CHECKPOINT_MAGIC.len(), "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let config_len = r.u32_le("config length")?;
    let config = r.exact(config_len as usize, "config block")?;
    let text = String::from_utf8(config)
        .map_err(|_| Error::CorruptCheckpoint("config block is not utf-8".into()))?;
    let map = parse_config_map(&text)?;
    let count = r.u32_le("array count")?;
    Ok((map, count))
}

/// Loads a checkpoint saved with the same element type; every array is
/// validated against the shape implied by the stored config.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelState<T>, CheckpointMeta)> {
    let file = fs::File::open(path)?;
    let mut r = ByteReader {
        inner: BufReader::new(file),
    };
    let (map, count) = read_header(&mut r)?;

    let dtype = cfg_get(&map, "dtype")?;
    if dtype != T::DTYPE.name() {
        return Err(Error::CorruptCheckpoint(format!(
            "checkpoint dtype {dtype} does not match requested {}",
            T::DTYPE.name()
        )));
    }
    let cfg = ModelConfig {
        d_in: cfg_parse(&map, "d_in")?,
        d_h: cfg_parse(&map, "d_h")?,
        gcn_layers: cfg_parse(&map, "gcn_layers")?,
        gru_layers: cfg_parse(&map, "gru_layers")?,
        max_doc_len: cfg_parse(&map, "max_doc_len")?,
        dropout_embed: cfg_parse(&map, "dropout_embed")?,
        dropout_gcn: cfg_parse(&map, "dropout_gcn")?,
        bn_momentum: cfg_parse(&map, "bn_momentum")?,
    };
    let meta = CheckpointMeta {
        step: cfg_parse(&map, "step")?,
        valid_loss: cfg_parse(&map, "valid_loss")?,
    };
    let vocab_stems: Vec<String> = cfg_get(&map, "vocab")?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if vocab_stems.is_empty() {
        return Err(Error::CorruptCheckpoint("empty vocab".into()));
    }
    let vocab = Vocab::from_stems(vocab_stems);

    // Build the skeleton, then overwrite every tensor from the file.
    let mut state = ModelState::<T>::init(cfg, vocab, 0);
    let mut expected: HashMap<String, (usize, usize)> = state
        .params
        .iter()
        .map(|p| (p.name.clone(), p.value.shape()))
        .collect();
    expected.insert("bn.running_mean".into(), state.bn.running_mean.shape());
    expected.insert("bn.running_var".into(), state.bn.running_var.shape());

    if count as usize != expected.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {} arrays, file declares {count}",
            expected.len()
        )));
    }

    let mut seen: HashMap<String, Tensor<T>> = HashMap::new();
    for _ in 0..count {
        let name_len = {
            let b = r.exact(2, "array name length")?;
            u16::from_le_bytes(b.try_into().unwrap()) as usize
        };
        let name = String::from_utf8(r.exact(name_len, "array name")?)
            .map_err(|_| Error::CorruptCheckpoint("array name is not utf-8".into()))?;
        let tag = r.exact(1, "dtype tag")?[0];
        if Dtype::from_tag(tag) != Some(T::DTYPE) {
            return Err(Error::CorruptCheckpoint(format!("{name}: wrong dtype tag")));
        }
        let rank = r.exact(1, "rank")?[0];
        if rank != 2 {
            return Err(Error::CorruptCheckpoint(format!("{name}: rank {rank} != 2")));
        }
        let rows = r.u64_le("rows")? as usize;
        let cols = r.u64_le("cols")? as usize;
        let Some(&shape) = expected.get(&name) else {
            return Err(Error::CorruptCheckpoint(format!("unexpected array {name}")));
        };
        if (rows, cols) != shape {
            return Err(Error::CorruptCheckpoint(format!(
                "{name}: shape {rows}x{cols}, expected {}x{}",
                shape.0, shape.1
            )));
        }
        let width = T::DTYPE.byte_width();
        let payload = r.exact(rows * cols * width, &name)?;
        let data: Vec<T> = payload.chunks_exact(width).map(T::read_le).collect();
        if seen
            .insert(name.clone(), Tensor::from_vec(rows, cols, data))
            .is_some()
        {
            return Err(Error::CorruptCheckpoint(format!("duplicate array {name}")));
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::CorruptCheckpoint("trailing data".into()));
    }

    for p in state.params.iter_mut() {
        let tensor = seen
            .remove(&p.name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing array {}", p.name)))?;
        p.value = tensor;
    }
    state.bn.running_mean = seen
        .remove("bn.running_mean")
        .ok_or_else(|| Error::CorruptCheckpoint("missing array bn.running_mean".into()))?;
    state.bn.running_var = seen
        .remove("bn.running_var")
        .ok_or_else(|| Error::CorruptCheckpoint("missing array bn.running_var".into()))?;
    Ok((state, meta))
}

// --- pretrained embeddings --------------------------------------------------

#[derive(Debug, Clone)]
pub struct EmbeddingImport<T> {
    pub table: Tensor<T>,
    pub dim: usize,
    pub hits: usize,
    pub misses: usize,
}

impl<T> EmbeddingImport<T> {
    pub fn hit_ratio(&self) -> f64 {
        if self.hits + self.misses == 0 {
            0.0
        } else {
            self.hits as f64 / (self.hits + self.misses) as f64
        }
    }
}

/// Imports `word v1 .. vd` vectors. Every word is stemmed; all surface
/// forms mapping to one vocabulary stem are averaged. Stems without any
/// vector get a normal-init row.
pub fn load_pretrained_embeddings<T: Scalar>(
    path: &Path,
    vocab: &Vocab,
    seed: u64,
) -> Result<EmbeddingImport<T>> {
    let file = fs::File::open(path)?;
    let mut dim: Option<usize> = None;
    let mut sums: HashMap<usize, (Vec<f64>, usize)> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts
            .next()
            .ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: "empty embedding line".into(),
            })?
            .to_lowercase();
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad float {p:?}"),
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::DimensionMismatch {
                    line: idx + 1,
                    expected: d,
                    got: values.len(),
                })
            }
            _ => {}
        }
        let stem = porter::stem(&word);
        let node = vocab.lookup(&stem);
        if node == 0 {
            continue; // not in vocabulary
        }
        let entry = sums
            .entry(node)
            .or_insert_with(|| (vec![0.0; values.len()], 0));
        for (acc, v) in entry.0.iter_mut().zip(&values) {
            *acc += v;
        }
        entry.1 += 1;
    }
    let dim = dim.ok_or(Error::EmptyDataset)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = (2.0 / (vocab.len() + dim) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let mut table = Tensor::zeros(vocab.len(), dim);
    let mut hits = 0;
    let mut misses = 0;
    for node in 0..vocab.len() {
        match sums.get(&node) {
            Some((sum, count)) => {
                hits += 1;
                for (j, slot) in table.row_mut(node).iter_mut().enumerate() {
                    *slot = T::from_f64(sum[j] / *count as f64);
                }
            }
            None => {
                misses += 1;
                for slot in table.row_mut(node).iter_mut() {
                    *slot = T::from_f64(normal.sample(&mut rng));
                }
            }
        }
    }
    Ok(EmbeddingImport {
        table,
        dim,
        hits,
        misses,
    })
}

// --- config files -----------------------------------------------------------

/// Everything a run can configure, merged from defaults, an optional
/// config file and CLI flags (in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub extract: ExtractionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            extract: ExtractionConfig::default(),
        }
    }
}

/// Applies `key = value` lines on top of `base`. Unknown keys are
/// errors, not silently ignored.
pub fn apply_config_text(base: &mut RunConfig, text: &str) -> Result<()> {
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key = value", idx + 1))
        })?;
        apply_config_entry(base, key.trim(), value.trim())
            .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", idx + 1)))?;
    }
    Ok(())
}

pub fn apply_config_entry(
    cfg: &mut RunConfig,
    key: &str,
    value: &str,
) -> std::result::Result<(), String> {
    fn parse<V: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<V, String> {
        value
            .parse()
            .map_err(|_| format!("bad value {value:?} for {key}"))
    }
    match key {
        "d_in" => cfg.model.d_in = parse(key, value)?,
        "d_h" => cfg.model.d_h = parse(key, value)?,
        "gcn_layers" => cfg.model.gcn_layers = parse(key, value)?,
        "gru_layers" => cfg.model.gru_layers = parse(key, value)?,
        "max_doc_len" => cfg.model.max_doc_len = parse(key, value)?,
        "dropout_embed" => cfg.model.dropout_embed = parse(key, value)?,
        "dropout_gcn" => cfg.model.dropout_gcn = parse(key, value)?,
        "bn_momentum" => cfg.model.bn_momentum = parse(key, value)?,
        "batch_size" => cfg.train.batch_size = parse(key, value)?,
        "lr_phase1" => cfg.train.lr_phase1 = parse(key, value)?,
        "lr_phase2" => cfg.train.lr_phase2 = parse(key, value)?,
        "phase1_steps" => cfg.train.phase1_steps = parse(key, value)?,
        "clip" => cfg.train.clip = parse(key, value)?,
        "max_epochs" => cfg.train.max_epochs = parse(key, value)?,
        "max_steps" => cfg.train.max_steps = parse(key, value)?,
        "patience" => cfg.train.patience = parse(key, value)?,
        "seed" => cfg.train.seed = parse(key, value)?,
        "beam_width" => cfg.extract.beam_width = parse(key, value)?,
        "beam_depth" => cfg.extract.max_depth = parse(key, value)?,
        "alpha" => cfg.extract.alpha = parse(key, value)?,
        "top_m" => cfg.extract.top_m = parse(key, value)?,
        other => return Err(format!("unknown config key {other:?}")),
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let text = fs::read_to_string(path)?;
    apply_config_text(&mut cfg, &text)?;
    Ok(cfg)
}
