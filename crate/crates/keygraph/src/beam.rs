//! Per-phrase beam search with length-penalized ranking.
//!
//! Each keyphrase is searched separately under the current diversity
//! state. Inside the search, partial hypotheses are pruned by raw score
//! (negative log-probability, comparable across equal-length partials);
//! the length penalty s/(alpha + |y|) only ranks finished hypotheses.
//! Ties break toward the lexicographically smaller node sequence, which
//! keeps the search exactly reproducible.

use crate::decoder::{
    attention_keys, candidate_matrix, decode_step, init_phrase_state, load_decoder, Coverage,
};
use crate::encoder::{encode_document, EncodedDocument};
use crate::error::Result;
use crate::model::ModelState;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};
use crate::text::TokenizedDocument;
use crate::graph::WordGraph;
use std::rc::Rc;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub beam_width: usize,
    pub max_depth: usize,
    /// Length-penalty factor; larger favors shorter phrases.
    pub alpha: f64,
    /// Number of phrases to emit.
    pub top_m: usize,
    pub coverage_enabled: bool,
    pub context_enabled: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            beam_width: 100,
            max_depth: 5,
            alpha: 1.0,
            top_m: 10,
            coverage_enabled: true,
            context_enabled: true,
        }
    }
}

/// s̄ = s / (alpha + |y|); lower is better.
pub fn normalized_score(raw: f64, length: usize, alpha: f64) -> f64 {
    debug_assert!(length >= 1);
    raw / (alpha + length as f64)
}

/// A finished keyphrase candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseHypothesis {
    pub tokens: Vec<usize>,
    pub raw_score: f64,
    pub norm_score: f64,
}

struct LiveHyp<T> {
    tokens: Vec<usize>,
    raw: f64,
    hidden: Rc<Vec<Tensor<T>>>,
}

/// Phrase-constant decoding state: attention keys, initial input and
/// initial hidden stack, all plain tensors.
struct PhraseSetup<T> {
    keys: Tensor<T>,
    y0: Tensor<T>,
    h0: Vec<Tensor<T>>,
}

fn phrase_setup<T: Scalar>(
    state: &ModelState<T>,
    encoded: &EncodedDocument<T>,
    history_mean: &Tensor<T>,
    coverage: &Coverage,
) -> Result<PhraseSetup<T>> {
    let tape = Tape::new();
    let dv = load_decoder(&tape, state);
    let reprs = tape.constant(encoded.node_reprs.clone());
    let candidates = candidate_matrix(&tape, &dv, reprs)?;
    let keys = attention_keys(&tape, &dv, candidates, coverage, true)?;
    let c = tape.constant(encoded.doc_vector.clone());
    let ybar = tape.constant(history_mean.clone());
    let (y0, h0) = init_phrase_state(&tape, &dv, c, ybar)?;
    Ok(PhraseSetup {
        keys: tape.value(keys),
        y0: tape.value(y0),
        h0: h0.iter().map(|&h| tape.value(h)).collect(),
    })
}

/// One decoding step for a batch of hypotheses sharing a step index.
/// Returns, per hypothesis, the pointer distribution and new hidden
/// stack.
fn advance_hyps<T: Scalar>(
    state: &ModelState<T>,
    encoded: &EncodedDocument<T>,
    setup: &PhraseSetup<T>,
    live: &[LiveHyp<T>],
    t: usize,
) -> Result<Vec<(Tensor<T>, Rc<Vec<Tensor<T>>>)>> {
    let tape = Tape::new();
    let dv = load_decoder(&tape, state);
    let keys = tape.constant(setup.keys.clone());
    let mut out = Vec::with_capacity(live.len());
    for hyp in live {
        let input = if t == 1 {
            tape.constant(setup.y0.clone())
        } else {
            let last = *hyp.tokens.last().expect("t>1 implies tokens");
            tape.constant(Tensor::row_from(encoded.node_reprs.row(last)))
        };
        let hidden: Vec<_> = hyp
            .hidden
            .iter()
            .map(|h| tape.constant(h.clone()))
            .collect();
        let (probs, new_hidden) = decode_step(&tape, &dv, keys, input, &hidden, t == 1)?;
        out.push((
            tape.value(probs),
            Rc::new(new_hidden.iter().map(|&h| tape.value(h)).collect()),
        ));
    }
    Ok(out)
}

fn rank_live<T>(live: &mut Vec<LiveHyp<T>>, width: usize) {
    live.sort_by(|a, b| {
        a.raw
            .partial_cmp(&b.raw)
            .expect("finite scores")
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    live.truncate(width);
}

/// Runs one beam search and returns every finished hypothesis, ranked
/// by normalized score (ties toward smaller node sequences).
pub fn beam_search_phrase<T: Scalar>(
    state: &ModelState<T>,
    encoded: &EncodedDocument<T>,
    history_mean: &Tensor<T>,
    coverage: &Coverage,
    cfg: &ExtractionConfig,
) -> Result<Vec<PhraseHypothesis>> {
    let n = encoded.node_reprs.rows();
    let end = n;
    let setup = phrase_setup(state, encoded, history_mean, coverage)?;

    let mut live = vec![LiveHyp {
        tokens: Vec::new(),
        raw: 0.0,
        hidden: Rc::new(setup.h0.clone()),
    }];
    let mut finished: Vec<PhraseHypothesis> = Vec::new();

    for t in 1..=cfg.max_depth {
        let stepped = advance_hyps(state, encoded, &setup, &live, t)?;
        let mut children = Vec::with_capacity(live.len() * n);
        for (hyp, (probs, hidden)) in live.iter().zip(&stepped) {
            for j in 0..n {
                let mut tokens = hyp.tokens.clone();
                tokens.push(j);
                children.push(LiveHyp {
                    tokens,
                    raw: hyp.raw - probs.at(j, 0).as_f64().ln(),
                    hidden: Rc::clone(hidden),
                });
            }
            if t > 1 {
                let raw = hyp.raw - probs.at(end, 0).as_f64().ln();
                finished.push(PhraseHypothesis {
                    tokens: hyp.tokens.clone(),
                    raw_score: raw,
                    norm_score: normalized_score(raw, hyp.tokens.len(), cfg.alpha),
                });
            }
        }
        rank_live(&mut children, cfg.beam_width);
        live = children;
    }

    // Force-finish depth-limited survivors, paying the end-token cost.
    let stepped = advance_hyps(state, encoded, &setup, &live, cfg.max_depth + 1)?;
    for (hyp, (probs, _)) in live.iter().zip(&stepped) {
        let raw = hyp.raw - probs.at(end, 0).as_f64().ln();
        finished.push(PhraseHypothesis {
            tokens: hyp.tokens.clone(),
            raw_score: raw,
            norm_score: normalized_score(raw, hyp.tokens.len(), cfg.alpha),
        });
    }

    finished.sort_by(|a, b| {
        a.norm_score
            .partial_cmp(&b.norm_score)
            .expect("finite scores")
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(finished)
}

/// Teacher-forced score of a fixed token sequence under the same
/// arithmetic the beam uses (per-step f64 accumulation, END mask at
/// t=1, end-token cost included).
pub fn score_phrase<T: Scalar>(
    state: &ModelState<T>,
    encoded: &EncodedDocument<T>,
    history_mean: &Tensor<T>,
    coverage: &Coverage,
    tokens: &[usize],
) -> Result<f64> {
    let setup = phrase_setup(state, encoded, history_mean, coverage)?;
    let end = encoded.node_reprs.rows();
    let mut raw = 0.0f64;
    let mut hyp = LiveHyp {
        tokens: Vec::new(),
        raw: 0.0,
        hidden: Rc::new(setup.h0.clone()),
    };
    for (t, &target) in tokens.iter().chain(std::iter::once(&end)).enumerate() {
        let stepped = advance_hyps(state, encoded, &setup, std::slice::from_ref(&hyp), t + 1)?;
        let (probs, hidden) = &stepped[0];
        raw -= probs.at(target, 0).as_f64().ln();
        if target != end {
            hyp.tokens.push(target);
        }
        hyp.hidden = Rc::clone(hidden);
    }
    Ok(raw)
}

/// A rendered, ranked keyphrase.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedPhrase {
    pub nodes: Vec<usize>,
    pub text: String,
    pub raw_score: f64,
    pub norm_score: f64,
}

fn mean_rows_plain<T: Scalar>(m: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(1, m.cols());
    for &r in rows {
        for (slot, &v) in out.data_mut().iter_mut().zip(m.row(r)) {
            *slot = *slot + v;
        }
    }
    let n = T::from_f64(rows.len() as f64);
    for slot in out.data_mut() {
        *slot = *slot / n;
    }
    out
}

/// Extracts up to `top_m` distinct keyphrases, updating coverage and
/// the phrase-history mean after each emission. Phrases are rendered
/// with each node's most frequent surface form.
pub fn extract_keyphrases<T: Scalar>(
    state: &ModelState<T>,
    doc: &TokenizedDocument,
    graph: &WordGraph,
    cfg: &ExtractionConfig,
) -> Result<Vec<ExtractedPhrase>> {
    let encoded = encode_document(state, graph)?;
    let n = graph.node_count();
    let d_h = state.cfg.d_h;

    let mut coverage = Coverage::new(n);
    let mut history: Vec<Tensor<T>> = Vec::new();
    let mut emitted: Vec<ExtractedPhrase> = Vec::new();

    for _ in 0..cfg.top_m {
        let ybar = if cfg.context_enabled && !history.is_empty() {
            let mut sum = Tensor::zeros(1, d_h);
            for h in &history {
                sum.add_assign(h);
            }
            sum.scale_assign(T::from_f64(1.0 / history.len() as f64));
            sum
        } else {
            Tensor::zeros(1, d_h)
        };
        let search_coverage = if cfg.coverage_enabled {
            coverage.clone()
        } else {
            Coverage::new(n)
        };
        let ranked = beam_search_phrase(state, &encoded, &ybar, &search_coverage, cfg)?;
        let novel = ranked
            .into_iter()
            .find(|h| emitted.iter().all(|e| e.nodes != h.tokens));
        let Some(hyp) = novel else {
            break; // candidates exhausted for this document
        };
        coverage.update(&hyp.tokens)?;
        history.push(mean_rows_plain(&encoded.node_reprs, &hyp.tokens));
        let text = hyp
            .tokens
            .iter()
            .map(|&node| graph.nodes.surface_form(node, doc))
            .collect::<Vec<_>>()
            .join(" ");
        emitted.push(ExtractedPhrase {
            nodes: hyp.tokens,
            text,
            raw_score: hyp.raw_score,
            norm_score: hyp.norm_score,
        });
    }
    Ok(emitted)
}
