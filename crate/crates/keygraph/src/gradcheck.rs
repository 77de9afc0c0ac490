//! Central finite-difference verification of analytic gradients.
//!
//! The harness runs at 64 bits only; single-precision differences are
//! dominated by rounding noise. Losses must be deterministic, so
//! callers disable dropout before checking.

use crate::error::Result;
use crate::params::ParamSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const MAX_COORDS_PER_PARAM: usize = 64;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (parameter name, max relative error over sampled coordinates)
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Compares the gradients already stored in `params` against central
/// finite differences of `loss`, sampling at most
/// [`MAX_COORDS_PER_PARAM`] coordinates per parameter.
///
/// The relative error of a coordinate is |a - n| / max(|a| + |n|, 1e-5);
/// the floor keeps finite-difference rounding noise on near-zero
/// gradients from registering as disagreement.
pub fn grad_check<F>(
    params: &mut ParamSet<f64>,
    mut loss: F,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_param = Vec::new();
    let mut max_rel = 0.0f64;

    for idx in 0..params.len() {
        let id = crate::params::ParamId(idx);
        let (name, coords) = {
            let p = params.get(id);
            (p.name.clone(), p.value.len())
        };
        let sampled: Vec<usize> = if coords <= MAX_COORDS_PER_PARAM {
            (0..coords).collect()
        } else {
            let mut chosen = std::collections::BTreeSet::new();
            while chosen.len() < MAX_COORDS_PER_PARAM {
                chosen.insert(rng.random_range(0..coords));
            }
            chosen.into_iter().collect()
        };

        let mut param_max = 0.0f64;
        for k in sampled {
            let original = params.get(id).value.data()[k];
            params.get_mut(id).value.data_mut()[k] = original + epsilon;
            let plus = loss(params)?;
            params.get_mut(id).value.data_mut()[k] = original - epsilon;
            let minus = loss(params)?;
            params.get_mut(id).value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = params.get(id).grad.data()[k];
            let denom = (analytic.abs() + numeric.abs()).max(1e-5);
            let rel = (analytic - numeric).abs() / denom;
            param_max = param_max.max(rel);
        }
        max_rel = max_rel.max(param_max);
        per_param.push((name, param_max));
    }

    Ok(GradCheckReport {
        per_param,
        max_rel_err: max_rel,
    })
}

/// End-to-end check of the whole model: encoder, decoder and loss on a
/// small document with aggregated nodes, at 64 bits with dropout off.
pub fn full_model_check(seed: u64) -> Result<GradCheckReport> {
    use crate::graph::build_graph_from_doc;
    use crate::model::{ModelConfig, ModelState, Phase, Vocab};
    use crate::text::TokenizedDocument;
    use crate::trainer::doc_pass;

    let stems: Vec<String> = ["graph", "model", "noise", "graph", "signal", "filter", "beam"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let doc = TokenizedDocument {
        tokens: stems.clone(),
        stems,
    };
    let graph = build_graph_from_doc(&doc);
    assert_eq!(graph.node_count(), 6);
    let phrases: Vec<Vec<usize>> = vec![vec![0, 1], vec![4], vec![2, 2, 5]];

    let cfg = ModelConfig {
        d_in: 8,
        d_h: 12,
        gcn_layers: 2,
        gru_layers: 2,
        max_doc_len: 64,
        dropout_embed: 0.1,
        dropout_gcn: 0.5,
        bn_momentum: 0.9,
    };
    let vocab = Vocab::build([doc.stems.as_slice()].into_iter());
    let mut state = ModelState::<f64>::init(cfg, vocab, seed);

    let scale = 1.0 / phrases.len() as f64;
    {
        let pass = doc_pass(&state, &graph, &phrases, Phase::GradCheck, 0, true)?;
        state.params.zero_grads();
        state
            .params
            .accumulate(&pass.grads.expect("gradients requested"), scale);
    }
    let graph_ref = &graph;
    let phrases_ref = &phrases;
    // grad_check perturbs coordinates of `state.params` in place; the
    // closure re-runs the deterministic forward pass on a fresh state
    // view each time.
    let mut params = std::mem::take(&mut state.params);
    let report = grad_check(
        &mut params,
        |p| {
            let mut probe = state.clone();
            probe.params = p.clone();
            let pass = doc_pass(&probe, graph_ref, phrases_ref, Phase::GradCheck, 0, false)?;
            Ok(pass.nll_sum * scale)
        },
        DEFAULT_EPSILON,
        seed ^ 0xD1F7,
    )?;
    Ok(report)
}
