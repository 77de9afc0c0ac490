//! Model configuration, vocabulary and the full parameter set.

use crate::params::{ParamId, ParamSet};
use crate::tensor::{Scalar, Tensor};
use crate::text::NodeTable;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;

/// Architecture and regularization settings. `d_h` is shared by the
/// node representations, the GRU stack and the attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_h: usize,
    pub gcn_layers: usize,
    pub gru_layers: usize,
    pub max_doc_len: usize,
    pub dropout_embed: f64,
    pub dropout_gcn: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Small dimensions for fast experiments on a single core.
    pub fn desk() -> Self {
        ModelConfig {
            d_in: 32,
            d_h: 48,
            gcn_layers: 3,
            gru_layers: 3,
            max_doc_len: 512,
            dropout_embed: 0.1,
            dropout_gcn: 0.5,
            bn_momentum: 0.9,
        }
    }

    /// Full-scale dimensions.
    pub fn full() -> Self {
        ModelConfig {
            d_in: 300,
            d_h: 400,
            gcn_layers: 6,
            gru_layers: 3,
            max_doc_len: 512,
            dropout_embed: 0.1,
            dropout_gcn: 0.5,
            bn_momentum: 0.9,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

/// Stem vocabulary; index 0 is the unknown-stem row used for
/// out-of-vocabulary nodes at extraction time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    stems: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_STEM: &str = "<unk>";

impl Vocab {
    pub fn from_stems(stems: Vec<String>) -> Self {
        assert_eq!(stems.first().map(String::as_str), Some(UNK_STEM));
        let index = stems
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { stems, index }
    }

    /// Collects distinct stems in first-occurrence order.
    pub fn build<'a>(stem_streams: impl Iterator<Item = &'a [String]>) -> Self {
        let mut stems = vec![UNK_STEM.to_string()];
        let mut index: HashMap<String, usize> = HashMap::new();
        index.insert(UNK_STEM.to_string(), 0);
        for doc_stems in stem_streams {
            for s in doc_stems {
                if !index.contains_key(s) {
                    index.insert(s.clone(), stems.len());
                    stems.push(s.clone());
                }
            }
        }
        Vocab { stems, index }
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    pub fn lookup(&self, stem: &str) -> usize {
        self.index.get(stem).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GcnTriple {
    pub w_bwd: ParamId,
    pub w_fwd: ParamId,
    pub w_self: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GcnLayerWeights {
    pub f: GcnTriple,
    pub g: GcnTriple,
}

#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub layers: Vec<GcnLayerWeights>,
    /// Aggregation applied to the final node representations on the
    /// document-vector path.
    pub agg: GcnTriple,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GruCellWeights {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

#[derive(Debug, Clone)]
pub struct DecoderWeights {
    pub gru: Vec<GruCellWeights>,
    pub att_w_h: ParamId,
    pub att_w_x: ParamId,
    pub att_v: ParamId,
    pub att_w_c: ParamId,
    pub att_b: ParamId,
    pub ctx_w_y: ParamId,
    pub ctx_b_y: ParamId,
    pub ctx_w_s: ParamId,
    pub ctx_b_s: ParamId,
    pub x_end: ParamId,
}

/// Running statistics for inference-mode batch norm; updated only by
/// the training thread.
#[derive(Debug, Clone)]
pub struct BatchNormState<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

/// Forward-pass behaviour switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
    /// Dropout off (determinism for finite differences) but batch-norm
    /// still on batch statistics so its backward is exercised.
    GradCheck,
}

impl Phase {
    pub fn dropout_enabled(self) -> bool {
        matches!(self, Phase::Train)
    }

    pub fn bn_batch_stats(self) -> bool {
        !matches!(self, Phase::Eval)
    }
}

/// All learned parameters plus non-learned state.
#[derive(Debug, Clone)]
pub struct ModelState<T> {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamSet<T>,
    pub embedding: ParamId,
    pub encoder: EncoderWeights,
    pub decoder: DecoderWeights,
    pub bn: BatchNormState<T>,
}

impl<T: Scalar> ModelState<T> {
    /// Fresh model with normal(0, sqrt(2/(fan_in+fan_out))) matrices,
    /// zero biases and unit batch-norm scale. Parameters are created in
    /// a fixed order so a seed pins every weight.
    pub fn init(cfg: ModelConfig, vocab: Vocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();

        let mut glorot = |params: &mut ParamSet<T>, name: String, rows: usize, cols: usize| {
            let std = (2.0 / (rows + cols) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid std");
            let data: Vec<T> = (0..rows * cols)
                .map(|_| T::from_f64(dist.sample(&mut rng)))
                .collect();
            params.add(name, Tensor::from_vec(rows, cols, data))
        };
        let zeros = |params: &mut ParamSet<T>, name: String, rows: usize, cols: usize| {
            params.add(name, Tensor::zeros(rows, cols))
        };

        let embedding = glorot(&mut params, "embedding".into(), vocab.len(), cfg.d_in);

        let mut layers = Vec::with_capacity(cfg.gcn_layers);
        for l in 0..cfg.gcn_layers {
            let d_in = if l == 0 { cfg.d_in } else { cfg.d_h };
            let mut triple = |params: &mut ParamSet<T>, tag: &str| GcnTriple {
                w_bwd: glorot(params, format!("gcn.{l}.{tag}.w_bwd"), d_in, cfg.d_h),
                w_fwd: glorot(params, format!("gcn.{l}.{tag}.w_fwd"), d_in, cfg.d_h),
                w_self: glorot(params, format!("gcn.{l}.{tag}.w_self"), d_in, cfg.d_h),
            };
            let f = triple(&mut params, "f");
            let g = triple(&mut params, "g");
            layers.push(GcnLayerWeights { f, g });
        }
        let agg = GcnTriple {
            w_bwd: glorot(&mut params, "gcn.agg.w_bwd".into(), cfg.d_h, cfg.d_h),
            w_fwd: glorot(&mut params, "gcn.agg.w_fwd".into(), cfg.d_h, cfg.d_h),
            w_self: glorot(&mut params, "gcn.agg.w_self".into(), cfg.d_h, cfg.d_h),
        };
        let bn_gamma = params.add("bn.gamma", Tensor::filled(1, cfg.d_h, T::one()));
        let bn_beta = zeros(&mut params, "bn.beta".into(), 1, cfg.d_h);
        let encoder = EncoderWeights {
            layers,
            agg,
            bn_gamma,
            bn_beta,
        };

        let mut gru = Vec::with_capacity(cfg.gru_layers);
        for k in 0..cfg.gru_layers {
            gru.push(GruCellWeights {
                w_z: glorot(&mut params, format!("gru.{k}.w_z"), cfg.d_h, cfg.d_h),
                u_z: glorot(&mut params, format!("gru.{k}.u_z"), cfg.d_h, cfg.d_h),
                b_z: zeros(&mut params, format!("gru.{k}.b_z"), 1, cfg.d_h),
                w_r: glorot(&mut params, format!("gru.{k}.w_r"), cfg.d_h, cfg.d_h),
                u_r: glorot(&mut params, format!("gru.{k}.u_r"), cfg.d_h, cfg.d_h),
                b_r: zeros(&mut params, format!("gru.{k}.b_r"), 1, cfg.d_h),
                w_h: glorot(&mut params, format!("gru.{k}.w_h"), cfg.d_h, cfg.d_h),
                u_h: glorot(&mut params, format!("gru.{k}.u_h"), cfg.d_h, cfg.d_h),
                b_h: zeros(&mut params, format!("gru.{k}.b_h"), 1, cfg.d_h),
            });
        }
        let decoder = DecoderWeights {
            gru,
            att_w_h: glorot(&mut params, "att.w_h".into(), cfg.d_h, cfg.d_h),
            att_w_x: glorot(&mut params, "att.w_x".into(), cfg.d_h, cfg.d_h),
            att_v: glorot(&mut params, "att.v".into(), cfg.d_h, 1),
            att_w_c: glorot(&mut params, "att.w_c".into(), 1, cfg.d_h),
            att_b: zeros(&mut params, "att.b".into(), 1, cfg.d_h),
            ctx_w_y: glorot(&mut params, "ctx.w_y".into(), 2 * cfg.d_h, cfg.d_h),
            ctx_b_y: zeros(&mut params, "ctx.b_y".into(), 1, cfg.d_h),
            ctx_w_s: glorot(&mut params, "ctx.w_s".into(), 2 * cfg.d_h, cfg.d_h),
            ctx_b_s: zeros(&mut params, "ctx.b_s".into(), 1, cfg.d_h),
            x_end: glorot(&mut params, "end.x".into(), 1, cfg.d_h),
        };

        let bn = BatchNormState {
            running_mean: Tensor::zeros(1, cfg.d_h),
            running_var: Tensor::filled(1, cfg.d_h, T::one()),
        };

        ModelState {
            cfg,
            vocab,
            params,
            embedding,
            encoder,
            decoder,
            bn,
        }
    }

    /// Maps each node's stem to its embedding row (unknown stems share
    /// the reserved row 0).
    pub fn node_vocab_rows(&self, nodes: &NodeTable) -> Vec<usize> {
        nodes.stems.iter().map(|s| self.vocab.lookup(s)).collect()
    }

    /// Folds observed batch statistics into the running estimates.
    pub fn update_bn_running(&mut self, mean: &Tensor<T>, var: &Tensor<T>) {
        let momentum = T::from_f64(self.cfg.bn_momentum);
        let one_minus = T::from_f64(1.0 - self.cfg.bn_momentum);
        for (slot, &m) in self
            .bn
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(mean.data())
        {
            *slot = momentum * *slot + one_minus * m;
        }
        for (slot, &v) in self.bn.running_var.data_mut().iter_mut().zip(var.data()) {
            *slot = momentum * *slot + one_minus * v;
        }
    }

    /// Zeroes every parameter; handy for tests that need uniform
    /// pointer distributions.
    pub fn zero_all_weights(&mut self) {
        for p in self.params.iter_mut() {
            p.value.fill(T::zero());
        }
    }
}
