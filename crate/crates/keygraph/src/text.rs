//! Tokenization, stemming and node aggregation.
//!
//! A document is lowercased and split on non-alphanumeric boundaries,
//! every token is stemmed, and identical stems are collapsed into one
//! node that remembers all of its token offsets.

use crate::error::{Error, Result};
use crate::porter;

/// Token sequence with a parallel stem sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub tokens: Vec<String>,
    pub stems: Vec<String>,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One node per distinct stem, in first-occurrence order, with the set
/// of token offsets where the stem appears.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeTable {
    pub stems: Vec<String>,
    pub positions: Vec<Vec<usize>>,
}

impl NodeTable {
    pub fn node_count(&self) -> usize {
        self.stems.len()
    }

    pub fn index_of(&self, stem: &str) -> Option<usize> {
        self.stems.iter().position(|s| s == stem)
    }

    /// The most frequent surface form of a node, earliest occurrence
    /// winning ties; used when rendering phrases back to text.
    pub fn surface_form(&self, node: usize, doc: &TokenizedDocument) -> String {
        let positions = &self.positions[node];
        let mut best: Option<(&str, usize, usize)> = None;
        for &p in positions {
            let tok = doc.tokens[p].as_str();
            let count = positions.iter().filter(|&&q| doc.tokens[q] == tok).count();
            let better = match best {
                None => true,
                Some((_, bc, bp)) => count > bc || (count == bc && p < bp),
            };
            if better {
                best = Some((tok, count, p));
            }
        }
        best.map(|(t, _, _)| t.to_string()).unwrap_or_default()
    }
}

/// Tokenizer and stemmer with a cap on document length.
#[derive(Debug, Clone)]
pub struct TextPipeline {
    pub max_tokens: usize,
}

impl Default for TextPipeline {
    fn default() -> Self {
        TextPipeline { max_tokens: 512 }
    }
}

impl TextPipeline {
    pub fn new(max_tokens: usize) -> Self {
        TextPipeline { max_tokens }
    }

    /// Lowercases, splits on any non-alphanumeric character, drops
    /// empty pieces and truncates the tail past `max_tokens`.
    pub fn tokenize(&self, raw: &str) -> Result<TokenizedDocument> {
        let mut tokens: Vec<String> = raw
            .split(|c: char| !c.is_alphanumeric())
            .filter(|piece| !piece.is_empty())
            .map(|piece| piece.to_lowercase())
            .collect();
        if tokens.is_empty() {
            return Err(Error::EmptyDocument);
        }
        tokens.truncate(self.max_tokens);
        let stems = tokens.iter().map(|t| porter::stem(t)).collect();
        Ok(TokenizedDocument { tokens, stems })
    }

    /// Tokenizes and stems a phrase without the document length cap.
    pub fn phrase_stems(&self, raw: &str) -> Vec<String> {
        raw.split(|c: char| !c.is_alphanumeric())
            .filter(|piece| !piece.is_empty())
            .map(|piece| porter::stem(&piece.to_lowercase()))
            .collect()
    }
}

pub fn stem(token: &str) -> String {
    porter::stem(token)
}

/// Aggregates identical stems into nodes.
pub fn build_nodes(doc: &TokenizedDocument) -> NodeTable {
    let mut stems: Vec<String> = Vec::new();
    let mut positions: Vec<Vec<usize>> = Vec::new();
    for (offset, s) in doc.stems.iter().enumerate() {
        match stems.iter().position(|known| known == s) {
            Some(idx) => positions[idx].push(offset),
            None => {
                stems.push(s.clone());
                positions.push(vec![offset]);
            }
        }
    }
    NodeTable { stems, positions }
}

/// Two phrases match when their stemmed token sequences are identical.
pub fn match_phrase(pred: &[String], gold: &[String]) -> bool {
    pred.len() == gold.len()
        && pred
            .iter()
            .zip(gold)
            .all(|(p, g)| porter::stem(&p.to_lowercase()) == porter::stem(&g.to_lowercase()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pipeline() -> TextPipeline {
        TextPipeline::default()
    }

    #[test]
    fn tokenize_splits_and_lowercases() {
        let doc = pipeline().tokenize("Traffic noise. NOISE!").unwrap();
        assert_eq!(doc.tokens, vec!["traffic", "noise", "noise"]);
    }

    #[test]
    fn tokenize_empty_is_an_error() {
        assert!(matches!(pipeline().tokenize(""), Err(Error::EmptyDocument)));
        assert!(matches!(
            pipeline().tokenize("!!! ..."),
            Err(Error::EmptyDocument)
        ));
    }

    #[test]
    fn hyphens_split_tokens() {
        let doc = pipeline().tokenize("GCN-based").unwrap();
        assert_eq!(doc.tokens, vec!["gcn", "based"]);
    }

    #[test]
    fn digit_tokens_are_kept() {
        let doc = pipeline().tokenize("top 10 results").unwrap();
        assert_eq!(doc.tokens, vec!["top", "10", "results"]);
    }

    #[test]
    fn max_tokens_truncates_tail() {
        let doc = TextPipeline::new(2).tokenize("one two three").unwrap();
        assert_eq!(doc.tokens, vec!["one", "two"]);
    }

    fn doc_from_stems(stems: &[&str]) -> TokenizedDocument {
        TokenizedDocument {
            tokens: stems.iter().map(|s| s.to_string()).collect(),
            stems: stems.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn build_nodes_aggregates() {
        let table = build_nodes(&doc_from_stems(&["a", "b", "a"]));
        assert_eq!(table.stems, vec!["a", "b"]);
        assert_eq!(table.positions, vec![vec![0, 2], vec![1]]);

        let table = build_nodes(&doc_from_stems(&["x"]));
        assert_eq!(table.stems, vec!["x"]);
        assert_eq!(table.positions, vec![vec![0]]);

        let table = build_nodes(&doc_from_stems(&["a", "a", "a"]));
        assert_eq!(table.node_count(), 1);
        assert_eq!(table.positions, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn match_phrase_examples() {
        let p = |words: &[&str]| words.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        assert!(match_phrase(
            &p(&["traffic", "noises"]),
            &p(&["traffic", "noise"])
        ));
        assert!(!match_phrase(
            &p(&["noise", "traffic"]),
            &p(&["traffic", "noise"])
        ));
        assert!(!match_phrase(&p(&["traffic"]), &p(&["traffic", "noise"])));
    }

    #[test]
    fn surface_form_prefers_most_frequent() {
        let doc = TokenizedDocument {
            tokens: vec!["noises".into(), "noise".into(), "noise".into()],
            stems: vec!["nois".into(), "nois".into(), "nois".into()],
        };
        let table = build_nodes(&doc);
        assert_eq!(table.surface_form(0, &doc), "noise");
    }

    proptest! {
        // Position sets partition the document exactly.
        #[test]
        fn positions_partition_document(stems in proptest::collection::vec("[a-d]", 1..40)) {
            let refs: Vec<&str> = stems.iter().map(|s| s.as_str()).collect();
            let doc = doc_from_stems(&refs);
            let table = build_nodes(&doc);
            let mut seen = vec![false; doc.len()];
            for positions in &table.positions {
                prop_assert!(!positions.is_empty());
                for &p in positions {
                    prop_assert!(!seen[p], "offset {} claimed twice", p);
                    seen[p] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            let total: usize = table.positions.iter().map(|p| p.len()).sum();
            prop_assert_eq!(total, doc.len());
        }

        // Re-tokenizing the detokenized stream reproduces the nodes.
        #[test]
        fn build_nodes_idempotent(words in proptest::collection::vec("[a-z]{1,8}", 1..30)) {
            let pipeline = pipeline();
            let doc = pipeline.tokenize(&words.join(" ")).unwrap();
            let table = build_nodes(&doc);
            let doc2 = pipeline.tokenize(&doc.tokens.join(" ")).unwrap();
            prop_assert_eq!(&doc2, &doc);
            prop_assert_eq!(build_nodes(&doc2), table);
        }

        // match_phrase is an equivalence relation.
        #[test]
        fn match_phrase_equivalence(
            a in proptest::collection::vec("[a-z]{1,8}", 1..4),
            b in proptest::collection::vec("[a-z]{1,8}", 1..4),
            c in proptest::collection::vec("[a-z]{1,8}", 1..4),
        ) {
            prop_assert!(match_phrase(&a, &a));
            prop_assert_eq!(match_phrase(&a, &b), match_phrase(&b, &a));
            if match_phrase(&a, &b) && match_phrase(&b, &c) {
                prop_assert!(match_phrase(&a, &c));
            }
        }
    }
}
