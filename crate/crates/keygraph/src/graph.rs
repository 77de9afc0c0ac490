//! Proximity word graph.
//!
//! Every pair of distinct token positions (p_i, p_j) contributes
//! relu(1/(p_j - p_i)) to the forward edge i->j and relu(1/(p_i - p_j))
//! to the backward edge, so closer words get stronger edges and each
//! direction only sees pairs in its own order. Both matrices are then
//! re-normalized as D^(-1/2) (A + I) D^(-1/2) to pin the spectral
//! radius at 1 for stable message passing.

use crate::error::Result;
use crate::tensor::Tensor;
use crate::text::{build_nodes, NodeTable, TextPipeline, TokenizedDocument};

/// Node table plus raw and normalized adjacency matrices, all dense.
#[derive(Debug, Clone)]
pub struct WordGraph {
    pub nodes: NodeTable,
    pub a_fwd: Tensor<f64>,
    pub a_bwd: Tensor<f64>,
    pub a_fwd_norm: Tensor<f64>,
    pub a_bwd_norm: Tensor<f64>,
}

impl WordGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.node_count()
    }
}

/// Builds the raw forward/backward adjacency matrices from node
/// position sets. Same-offset pairs (only possible on the diagonal)
/// contribute nothing. The backward matrix is produced as the exact
/// transpose of the forward one, which is what the two sums reduce to.
pub fn build_adjacency(nodes: &NodeTable) -> (Tensor<f64>, Tensor<f64>) {
    let n = nodes.node_count();
    let mut fwd = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut w_fwd = 0.0;
            for &p_i in &nodes.positions[i] {
                for &p_j in &nodes.positions[j] {
                    if p_j > p_i {
                        w_fwd += 1.0 / (p_j - p_i) as f64;
                    }
                }
            }
            fwd.set(i, j, w_fwd);
        }
    }
    let bwd = fwd.transpose();
    (fwd, bwd)
}

/// Â = D̃^(-1/2) (A + I) D̃^(-1/2) where D̃ holds the row sums of A + I.
/// The self-loop keeps every degree >= 1, so no division by zero.
pub fn normalize(a: &Tensor<f64>) -> Tensor<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "adjacency must be square");
    let mut degree = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = 1.0; // self-loop
        for j in 0..n {
            sum += a.at(i, j);
        }
        degree[i] = sum;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let tilde = a.at(i, j) + if i == j { 1.0 } else { 0.0 };
            out.set(i, j, tilde * inv_sqrt[i] * inv_sqrt[j]);
        }
    }
    out
}

/// Tokenizes a document and assembles the full graph.
pub fn build_graph(pipeline: &TextPipeline, raw: &str) -> Result<WordGraph> {
    let doc = pipeline.tokenize(raw)?;
    Ok(build_graph_from_doc(&doc))
}

pub fn build_graph_from_doc(doc: &TokenizedDocument) -> WordGraph {
    let nodes = build_nodes(doc);
    let (a_fwd, a_bwd) = build_adjacency(&nodes);
    let a_fwd_norm = normalize(&a_fwd);
    let a_bwd_norm = normalize(&a_bwd);
    WordGraph {
        nodes,
        a_fwd,
        a_bwd,
        a_fwd_norm,
        a_bwd_norm,
    }
}

/// Power-iteration estimate of the dominant eigenvalue magnitude.
/// Iterates until the estimate stabilizes or `max_iters` is hit.
pub fn spectral_radius_estimate(m: &Tensor<f64>, max_iters: usize) -> f64 {
    let n = m.rows();
    assert_eq!(n, m.cols());
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![1.0f64; n];
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let mut y = vec![0.0f64; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += m.at(i, j) * x[j];
            }
            y[i] = acc;
        }
        let norm_x: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_y: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_y == 0.0 {
            return 0.0;
        }
        let next = norm_y / norm_x;
        let converged = (next - estimate).abs() < 1e-13;
        estimate = next;
        let scale = 1.0 / norm_y;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi * scale;
        }
        if converged {
            break;
        }
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_nodes;
    use proptest::prelude::*;

    fn table(positions: &[&[usize]]) -> NodeTable {
        NodeTable {
            stems: (0..positions.len()).map(|i| format!("w{i}")).collect(),
            positions: positions.iter().map(|p| p.to_vec()).collect(),
        }
    }

    /// Literal translation of the edge-weight definition, used as an
    /// oracle against the production builder.
    fn adjacency_oracle(nodes: &NodeTable) -> (Tensor<f64>, Tensor<f64>) {
        let n = nodes.node_count();
        let mut fwd = Tensor::zeros(n, n);
        let mut bwd = Tensor::zeros(n, n);
        let relu = |x: f64| x.max(0.0);
        for i in 0..n {
            for j in 0..n {
                for &p_i in &nodes.positions[i] {
                    for &p_j in &nodes.positions[j] {
                        if p_i == p_j {
                            continue;
                        }
                        let d = p_j as f64 - p_i as f64;
                        fwd.set(i, j, fwd.at(i, j) + relu(1.0 / d));
                        bwd.set(i, j, bwd.at(i, j) + relu(-1.0 / d));
                    }
                }
            }
        }
        (fwd, bwd)
    }

    #[test]
    fn adjacency_hand_examples() {
        let (fwd, bwd) = build_adjacency(&table(&[&[0, 2], &[1]]));
        assert_eq!(fwd.at(0, 1), 1.0);
        assert_eq!(bwd.at(0, 1), 1.0);
        assert_eq!(fwd.at(0, 0), 0.5);

        let (fwd, bwd) = build_adjacency(&table(&[&[0]]));
        assert_eq!(fwd.at(0, 0), 0.0);
        assert_eq!(bwd.at(0, 0), 0.0);
    }

    #[test]
    fn normalize_hand_examples() {
        let one = normalize(&Tensor::from_vec(1, 1, vec![0.0]));
        assert_eq!(one.at(0, 0), 1.0);

        let sym = normalize(&Tensor::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]));
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!((sym.at(i, j) - 0.5).abs() < 1e-15);
        }

        let tri = normalize(&Tensor::from_vec(2, 2, vec![0.0, 1.0, 0.0, 0.0]));
        assert!((tri.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((tri.at(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(tri.at(1, 0), 0.0);
        assert!((tri.at(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn repeated_word_aggregates_into_one_node() {
        // d = <x1, x2, x3, x4, x2> collapses to four nodes.
        let pipeline = TextPipeline::default();
        let graph = build_graph(&pipeline, "alpha beta gamma delta beta").unwrap();
        assert_eq!(graph.node_count(), 4);
    }

    #[test]
    fn single_token_graph_is_identity() {
        let pipeline = TextPipeline::default();
        let graph = build_graph(&pipeline, "word").unwrap();
        assert_eq!(graph.node_count(), 1);
        assert_eq!(graph.a_fwd_norm.at(0, 0), 1.0);
        assert_eq!(graph.a_bwd_norm.at(0, 0), 1.0);
    }

    fn random_doc_stems(seed: u64, len: usize, vocab: usize) -> Vec<String> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| format!("w{}", rng.random_range(0..vocab)))
            .collect()
    }

    #[test]
    fn matches_oracle_on_random_documents() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for case in 0..50 {
            let len = rng.random_range(1..=50);
            let vocab = rng.random_range(1..=10);
            let stems = random_doc_stems(case as u64, len, vocab);
            let doc = TokenizedDocument {
                tokens: stems.clone(),
                stems,
            };
            let nodes = build_nodes(&doc);
            let (fwd, bwd) = build_adjacency(&nodes);
            let (ofwd, obwd) = adjacency_oracle(&nodes);
            for i in 0..nodes.node_count() {
                for j in 0..nodes.node_count() {
                    assert!((fwd.at(i, j) - ofwd.at(i, j)).abs() < 1e-12);
                    assert!((bwd.at(i, j) - obwd.at(i, j)).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        // The two raw matrices are exact transposes.
        #[test]
        fn fwd_is_transpose_of_bwd(stems in proptest::collection::vec("[a-e]", 1..40)) {
            let refs: Vec<String> = stems.clone();
            let doc = TokenizedDocument { tokens: refs.clone(), stems: refs };
            let nodes = build_nodes(&doc);
            let (fwd, bwd) = build_adjacency(&nodes);
            let n = nodes.node_count();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(fwd.at(i, j), bwd.at(j, i));
                }
            }
        }

        // Spectral radius of the normalized matrices stays at 1.
        #[test]
        fn normalized_spectral_radius_near_one(stems in proptest::collection::vec("[a-e]", 1..30)) {
            let doc = TokenizedDocument { tokens: stems.clone(), stems };
            let graph = build_graph_from_doc(&doc);
            for m in [&graph.a_fwd_norm, &graph.a_bwd_norm] {
                let rho = spectral_radius_estimate(m, 20_000);
                prop_assert!(rho <= 1.0 + 1e-6, "spectral radius {}", rho);
                prop_assert!(m.all_finite());
            }
        }
    }

    #[test]
    fn relabeling_permutes_rows_and_columns() {
        // Permuting node identities permutes the normalized matrix the
        // same way.
        let nodes = table(&[&[0, 3], &[1], &[2, 4]]);
        let permuted = table(&[&[2, 4], &[0, 3], &[1]]); // perm: old [0,1,2] -> new [1,2,0]
        let perm = [1usize, 2, 0];

        let (fwd, _) = build_adjacency(&nodes);
        let (pfwd, _) = build_adjacency(&permuted);
        let norm = normalize(&fwd);
        let pnorm = normalize(&pfwd);
        for i in 0..3 {
            for j in 0..3 {
                assert!((norm.at(i, j) - pnorm.at(perm[i], perm[j])).abs() < 1e-15);
            }
        }
    }
}
