//! Ranked-retrieval scoring: macro P/R/F1 at a cutoff, binary-relevance
//! NDCG, the index of coincidence of the emitted word bag, and a Tf-Idf
//! unigram baseline.
//!
//! Matching is stem-exact: a prediction scores iff its stemmed token
//! sequence equals a gold phrase's, and each gold credits at most one
//! prediction (first match in rank order wins).

use crate::corpus::{IngestedDataset, IngestedDoc};
use crate::error::{Error, Result};
use crate::exec;
use crate::porter;
use crate::text::{match_phrase, NodeTable, TokenizedDocument};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Marks which of the top-`cutoff` predictions hit a gold phrase, each
/// gold creditable once, in rank order.
fn relevance_flags(preds: &[Vec<String>], golds: &[Vec<String>], cutoff: usize) -> Vec<bool> {
    let take = preds.len().min(cutoff);
    let mut used = vec![false; golds.len()];
    let mut flags = Vec::with_capacity(take);
    for pred in &preds[..take] {
        let hit = golds.iter().enumerate().find_map(|(g, gold)| {
            (!used[g] && match_phrase(pred, gold)).then_some(g)
        });
        if let Some(g) = hit {
            used[g] = true;
            flags.push(true);
        } else {
            flags.push(false);
        }
    }
    flags
}

/// Precision over the predictions actually taken (at most `cutoff`),
/// recall over the gold set, and their harmonic mean.
pub fn prf_at(preds: &[Vec<String>], golds: &[Vec<String>], cutoff: usize) -> Prf {
    let flags = relevance_flags(preds, golds, cutoff);
    let correct = flags.iter().filter(|&&f| f).count() as f64;
    let taken = flags.len();
    let precision = if taken == 0 { 0.0 } else { correct / taken as f64 };
    let recall = if golds.is_empty() {
        0.0
    } else {
        correct / golds.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// Binary-relevance NDCG at a cutoff; the ideal ranking places
/// min(|golds|, cutoff) hits first.
pub fn ndcg_at(preds: &[Vec<String>], golds: &[Vec<String>], cutoff: usize) -> f64 {
    let flags = relevance_flags(preds, golds, cutoff);
    let dcg: f64 = flags
        .iter()
        .enumerate()
        .filter(|(_, &hit)| hit)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal = golds.len().min(cutoff);
    if ideal == 0 {
        return 0.0;
    }
    let idcg: f64 = (0..ideal).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    dcg / idcg
}

/// Index of coincidence of the pooled stemmed words of the top-`cutoff`
/// phrases: the probability that two word tokens drawn without
/// replacement are identical. Zero when fewer than two tokens.
pub fn aic_at(preds: &[Vec<String>], cutoff: usize) -> f64 {
    let mut freq: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for phrase in preds.iter().take(cutoff) {
        for token in phrase {
            *freq.entry(porter::stem(&token.to_lowercase())).or_insert(0) += 1;
            total += 1;
        }
    }
    if total < 2 {
        return 0.0;
    }
    let coincident: f64 = freq.values().map(|&f| (f * (f - 1)) as f64).sum();
    coincident / (total * (total - 1)) as f64
}

/// Per-corpus macro-averaged report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// (cutoff, macro P/R/F1), ascending by cutoff.
    pub prf: Vec<(usize, Prf)>,
    pub ndcg10: f64,
    /// (cutoff, macro AIC).
    pub aic: Vec<(usize, f64)>,
    pub docs: usize,
}

impl EvalReport {
    fn prf_for(&self, cutoff: usize) -> Prf {
        self.prf
            .iter()
            .find(|(c, _)| *c == cutoff)
            .map(|(_, p)| *p)
            .unwrap_or_default()
    }

    fn aic_for(&self, cutoff: usize) -> f64 {
        self.aic
            .iter()
            .find(|(c, _)| *c == cutoff)
            .map(|(_, v)| *v)
            .unwrap_or_default()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "f1@5": self.prf_for(5).f1,
            "f1@10": self.prf_for(10).f1,
            "p@5": self.prf_for(5).precision,
            "r@5": self.prf_for(5).recall,
            "ndcg@10": self.ndcg10,
            "aic@5": self.aic_for(5),
            "aic@10": self.aic_for(10),
            "docs": self.docs,
        })
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("documents evaluated: {}\n", self.docs));
        out.push_str("cutoff  precision  recall     f1\n");
        for (cutoff, prf) in &self.prf {
            out.push_str(&format!(
                "{cutoff:<7} {:<10.4} {:<10.4} {:<10.4}\n",
                prf.precision, prf.recall, prf.f1
            ));
        }
        out.push_str(&format!("ndcg@10: {:.4}\n", self.ndcg10));
        for (cutoff, aic) in &self.aic {
            out.push_str(&format!("aic@{cutoff}: {aic:.4}\n"));
        }
        out
    }
}

/// Macro-averages the metrics over every document with at least one
/// gold phrase; the extractor produces ranked phrases as token lists.
pub fn evaluate_corpus<F>(
    dataset: &IngestedDataset,
    cutoffs: &[usize],
    extractor: F,
) -> Result<EvalReport>
where
    F: Fn(&IngestedDoc) -> Result<Vec<Vec<String>>> + Sync + Send,
{
    let mut cutoffs: Vec<usize> = cutoffs.iter().copied().chain([5, 10]).collect();
    cutoffs.sort_unstable();
    cutoffs.dedup();

    let docs: Vec<&IngestedDoc> = dataset
        .docs
        .iter()
        .filter(|d| !d.gold_tokens.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predictions = exec::par_map(&docs, |doc| extractor(doc));

    let mut prf_sums = vec![(0.0, 0.0, 0.0); cutoffs.len()];
    let mut aic_sums = vec![0.0; cutoffs.len()];
    let mut ndcg_sum = 0.0;
    for (doc, preds) in docs.iter().zip(predictions) {
        let preds = preds?;
        for (k, &cutoff) in cutoffs.iter().enumerate() {
            let prf = prf_at(&preds, &doc.gold_tokens, cutoff);
            prf_sums[k].0 += prf.precision;
            prf_sums[k].1 += prf.recall;
            prf_sums[k].2 += prf.f1;
            aic_sums[k] += aic_at(&preds, cutoff);
        }
        ndcg_sum += ndcg_at(&preds, &doc.gold_tokens, 10);
    }
    let n = docs.len() as f64;
    Ok(EvalReport {
        prf: cutoffs
            .iter()
            .zip(&prf_sums)
            .map(|(&c, &(p, r, f))| {
                (
                    c,
                    Prf {
                        precision: p / n,
                        recall: r / n,
                        f1: f / n,
                    },
                )
            })
            .collect(),
        ndcg10: ndcg_sum / n,
        aic: cutoffs.iter().zip(&aic_sums).map(|(&c, &a)| (c, a / n)).collect(),
        docs: docs.len(),
    })
}

/// Stem document frequencies over a corpus, for the Tf-Idf baseline.
pub fn document_frequencies<'a>(
    docs: impl Iterator<Item = &'a TokenizedDocument>,
) -> (HashMap<String, usize>, usize) {
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for doc in docs {
        total += 1;
        let mut seen: Vec<&str> = Vec::new();
        for stem in &doc.stems {
            if !seen.contains(&stem.as_str()) {
                seen.push(stem);
                *df.entry(stem.clone()).or_insert(0) += 1;
            }
        }
    }
    (df, total)
}

/// Ranks the document's stems by tf * ln((D+1)/(df+1)) and returns the
/// top unigrams as phrases, rendered with their most frequent surface
/// form. Ties break toward the lexicographically smaller stem.
pub fn tfidf_baseline(
    doc: &TokenizedDocument,
    nodes: &NodeTable,
    df: &HashMap<String, usize>,
    total_docs: usize,
    max_phrases: usize,
) -> Vec<Vec<String>> {
    let mut scored: Vec<(f64, &String, usize)> = nodes
        .stems
        .iter()
        .enumerate()
        .map(|(node, stem)| {
            let tf = nodes.positions[node].len() as f64;
            let d = df.get(stem).copied().unwrap_or(0) as f64;
            let idf = ((total_docs as f64 + 1.0) / (d + 1.0)).ln();
            (tf * idf, stem, node)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite scores")
            .then_with(|| a.1.cmp(b.1))
    });
    scored
        .into_iter()
        .take(max_phrases)
        .map(|(_, _, node)| vec![nodes.surface_form(node, doc)])
        .collect()
}
