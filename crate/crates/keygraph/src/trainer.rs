//! Teacher-forced maximum-likelihood training.
//!
//! The objective is the mean negative log-likelihood per gold phrase,
//! where a phrase's likelihood is the product of its per-token pointer
//! probabilities including the end token, conditioned on the phrases
//! before it (coverage counts and history mean come from the gold
//! phrases, not samples). Keyphrase order is reshuffled every step,
//! gradients are clipped by global norm, and Adam runs at a two-phase
//! learning rate with early stopping on validation loss.

use crate::corpus::{IngestedDataset, IngestedDoc};
use crate::decoder::{
    self, attention_keys, candidate_matrix, decode_step, init_phrase_state, load_decoder,
    Coverage,
};
use crate::encoder;
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::WordGraph;
use crate::model::{ModelConfig, ModelState, Phase, Vocab};
use crate::optim::{adam_step, clip_gradients, AdamState};
use crate::params::ParamGrads;
use crate::tape::{BatchStats, Tape};
use crate::tensor::Scalar;
use crate::text::{TextPipeline, TokenizedDocument};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub phase1_steps: u64,
    pub clip: f64,
    pub max_epochs: usize,
    /// 0 means no step budget.
    pub max_steps: u64,
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_phase1: 0.002,
            lr_phase2: 0.0002,
            phase1_steps: 6000,
            clip: 0.1,
            max_epochs: 200,
            max_steps: 0,
            patience: 3,
            seed: 1,
        }
    }

    /// Published schedule: batch 256, 0.002 for the first 6000 steps,
    /// 0.0002 after, clip 0.1.
    pub fn full() -> Self {
        TrainConfig {
            batch_size: 256,
            ..TrainConfig::desk()
        }
    }

    /// Learning rate for a 0-based optimizer step index.
    pub fn learning_rate(&self, step: u64) -> f64 {
        if step < self.phase1_steps {
            self.lr_phase1
        } else {
            self.lr_phase2
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

/// Result of one teacher-forced document pass.
pub struct DocPass<T> {
    pub nll_sum: f64,
    pub phrase_count: usize,
    pub grads: Option<ParamGrads<T>>,
    pub bn_stats: Option<BatchStats<T>>,
}

/// Runs the encoder and teacher-forces the gold phrases in the given
/// order, returning the summed token NLL (end tokens included) and,
/// optionally, parameter gradients of that sum.
pub fn doc_pass<T: Scalar>(
    state: &ModelState<T>,
    graph: &WordGraph,
    phrases: &[Vec<usize>],
    phase: Phase,
    dropout_seed: u64,
    want_grads: bool,
) -> Result<DocPass<T>> {
    let n = graph.node_count();
    for phrase in phrases {
        for &node in phrase {
            if node >= n {
                return Err(Error::IndexOutOfRange {
                    index: node,
                    len: n,
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let tape = Tape::new();
    let encoded = encoder::encode(&tape, state, graph, phase, &mut rng)?;
    let dv = load_decoder(&tape, state);
    let candidates = candidate_matrix(&tape, &dv, encoded.node_reprs)?;
    let end_index = n;

    let mut coverage = Coverage::new(n);
    let mut history = Vec::new();
    let mut nll_terms = Vec::new();
    for phrase in phrases {
        let ybar = decoder::history_mean(&tape, &history, state.cfg.d_h)?;
        let keys = attention_keys(&tape, &dv, candidates, &coverage, true)?;
        let (y0, mut hidden) = init_phrase_state(&tape, &dv, encoded.doc_vector, ybar)?;
        let mut input = y0;
        for t in 0..=phrase.len() {
            let (probs, next_hidden) = decode_step(&tape, &dv, keys, input, &hidden, t == 0)?;
            hidden = next_hidden;
            let target = if t < phrase.len() { phrase[t] } else { end_index };
            let p = tape.pick(probs, target, 0);
            nll_terms.push(tape.affine(tape.ln(p), -T::one(), T::zero()));
            if t < phrase.len() {
                input = tape.gather_rows(encoded.node_reprs, &phrase[t..=t])?;
            }
        }
        coverage.update(phrase)?;
        history.push(decoder::phrase_representation(
            &tape,
            encoded.node_reprs,
            phrase,
        )?);
    }

    let mut total = nll_terms[0];
    for &term in &nll_terms[1..] {
        total = tape.add(total, term)?;
    }
    let nll_sum = tape.value(total).scalar().as_f64();
    debug_assert!(nll_sum.is_finite(), "non-finite loss");
    let grads = if want_grads {
        Some(tape.backward(total)?)
    } else {
        None
    };
    Ok(DocPass {
        nll_sum,
        phrase_count: phrases.len(),
        grads,
        bn_stats: encoded.bn_stats,
    })
}

/// Teacher-forced loss of one document: mean token-summed NLL over its
/// phrases. Phrases are given as raw text and must appear (stemmed,
/// contiguous) in the document.
pub fn compute_loss<T: Scalar>(
    state: &ModelState<T>,
    pipeline: &TextPipeline,
    doc: &TokenizedDocument,
    graph: &WordGraph,
    gold_phrases: &[String],
    phase: Phase,
) -> Result<f64> {
    if gold_phrases.is_empty() {
        return Ok(0.0);
    }
    let mut node_phrases = Vec::with_capacity(gold_phrases.len());
    for phrase in gold_phrases {
        let stems = pipeline.phrase_stems(phrase);
        let nodes = crate::corpus::phrase_node_indices(doc, graph, &stems)
            .ok_or_else(|| Error::PhraseNotInDocument(phrase.clone()))?;
        node_phrases.push(nodes);
    }
    let pass = doc_pass(state, graph, &node_phrases, phase, 0, false)?;
    Ok(pass.nll_sum / pass.phrase_count as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ModelState<T>,
    pub best_valid_loss: f64,
    pub steps: u64,
    pub epochs: usize,
}

fn derive_seed(base: u64, a: u64, b: u64, salt: u64) -> u64 {
    // splitmix64 over a mixed key; only needs to decorrelate streams.
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(salt.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Corpus-level loss: total NLL over total phrase count.
pub fn dataset_loss<T: Scalar>(state: &ModelState<T>, dataset: &IngestedDataset) -> Result<f64> {
    let docs: Vec<&IngestedDoc> = dataset
        .docs
        .iter()
        .filter(|d| !d.gold_nodes.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let passes = exec::par_map(&docs, |doc| {
        doc_pass(state, &doc.graph, &doc.gold_nodes, Phase::Eval, 0, false)
    });
    let mut nll = 0.0;
    let mut phrases = 0usize;
    for pass in passes {
        let pass = pass?;
        nll += pass.nll_sum;
        phrases += pass.phrase_count;
    }
    Ok(nll / phrases as f64)
}

/// Trains a fresh model on the ingested corpus. The log receives one
/// `step<TAB>lr<TAB>train_loss<TAB>grad_norm` line per optimizer step
/// and one `epoch<TAB>valid_loss` line per epoch.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train_set: &IngestedDataset,
    valid_set: &IngestedDataset,
    log: &mut dyn Write,
) -> Result<TrainOutcome<T>> {
    train_with(cfg, model_cfg, train_set, valid_set, log, |_| Ok(()))
}

/// Like [`train`], but runs `prepare` on the freshly initialized model
/// before the first step (e.g. to install pretrained embeddings).
pub fn train_with<T: Scalar>(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train_set: &IngestedDataset,
    valid_set: &IngestedDataset,
    log: &mut dyn Write,
    prepare: impl FnOnce(&mut ModelState<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let docs: Vec<&IngestedDoc> = train_set
        .docs
        .iter()
        .filter(|d| !d.gold_nodes.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let vocab = Vocab::build(docs.iter().map(|d| d.doc.stems.as_slice()));
    let mut state = ModelState::<T>::init(model_cfg.clone(), vocab, cfg.seed);
    prepare(&mut state)?;
    let mut adam = AdamState::new(&state.params);

    let mut best: Option<(f64, ModelState<T>, u64)> = None;
    let mut stale_epochs = 0usize;
    let mut step: u64 = 0;
    let mut epochs_run = 0usize;

    'epochs: for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..docs.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 0, 1));
        order.shuffle(&mut shuffle_rng);

        for batch in order.chunks(cfg.batch_size.max(1)) {
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
            // Per-document work units with pre-derived seeds so the
            // parallel map stays deterministic.
            let units: Vec<(usize, u64, u64)> = batch
                .iter()
                .enumerate()
                .map(|(slot, &doc_idx)| {
                    (
                        doc_idx,
                        derive_seed(cfg.seed, step, slot as u64, 2), // phrase shuffle
                        derive_seed(cfg.seed, step, slot as u64, 3), // dropout
                    )
                })
                .collect();
            let passes = exec::par_map(&units, |&(doc_idx, order_seed, dropout_seed)| {
                let doc = docs[doc_idx];
                let mut phrases = doc.gold_nodes.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
                phrases.shuffle(&mut rng);
                doc_pass(state_ref(&state), &doc.graph, &phrases, Phase::Train, dropout_seed, true)
            });

            let mut total_nll = 0.0f64;
            let mut total_phrases = 0usize;
            let mut grads = Vec::new();
            let mut bn_updates = Vec::new();
            for pass in passes {
                let pass = pass?;
                total_nll += pass.nll_sum;
                total_phrases += pass.phrase_count;
                grads.push(pass.grads.expect("gradients requested"));
                if let Some(stats) = pass.bn_stats {
                    bn_updates.push(stats);
                }
            }
            let scale = T::from_f64(1.0 / total_phrases as f64);
            state.params.zero_grads();
            for g in &grads {
                state.params.accumulate(g, scale);
            }
            for stats in &bn_updates {
                state.update_bn_running(&stats.mean, &stats.var);
            }

            let loss = total_nll / total_phrases as f64;
            let lr = cfg.learning_rate(step);
            let grad_norm = clip_gradients(&mut state.params, cfg.clip);
            adam_step(&mut state.params, &mut adam, lr);
            writeln!(log, "{step}\t{lr}\t{loss}\t{grad_norm}")?;
            step += 1;
        }

        let valid_loss = dataset_loss(&state, valid_set)?;
        writeln!(log, "{epoch}\t{valid_loss}")?;
        log.flush()?;

        let improved = best.as_ref().map_or(true, |(b, _, _)| valid_loss < *b);
        if improved {
            best = Some((valid_loss, state.clone(), step));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    // If the step budget cut the run before any validation, fall back
    // to the final state.
    let (best_valid_loss, model, _) = match best {
        Some(b) => b,
        None => (dataset_loss(&state, valid_set)?, state, step),
    };
    Ok(TrainOutcome {
        model,
        best_valid_loss,
        steps: step,
        epochs: epochs_run,
    })
}

// Helps the closure capture a shared reference rather than the owned
// state (which is mutated between batches).
fn state_ref<T>(state: &ModelState<T>) -> &ModelState<T> {
    state
}
