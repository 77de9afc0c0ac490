//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every forward operation together with a backward
//! closure. [`Tape::backward`] replays the closures in reverse and
//! accumulates gradients, returning one gradient tensor per parameter
//! that was loaded onto the tape. Tapes are single-threaded value
//! builders; parallelism happens across tapes, never inside one.
//!
//! Handles ([`Val`]) are plain indices into the tape that created them;
//! mixing handles across tapes is a logic error.

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, Parameter};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

const BN_EPS: f64 = 1e-5;

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(usize);

type BackwardFn<T> = Box<dyn Fn(&[Tensor<T>], &Tensor<T>, &mut dyn FnMut(usize, Tensor<T>))>;

struct OpRecord<T> {
    out: usize,
    back: BackwardFn<T>,
}

struct TapeInner<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<OpRecord<T>>,
    leaves: Vec<(usize, ParamId)>,
}

/// Batch statistics observed by one training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

pub struct Tape<T: Scalar> {
    inner: RefCell<TapeInner<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                values: Vec::new(),
                ops: Vec::new(),
                leaves: Vec::new(),
            }),
        }
    }

    fn push_value(&self, t: Tensor<T>) -> Val {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(t);
        Val(inner.values.len() - 1)
    }

    fn push_op(&self, out: Val, back: BackwardFn<T>) {
        self.inner.borrow_mut().ops.push(OpRecord { out: out.0, back });
    }

    pub fn shape(&self, v: Val) -> (usize, usize) {
        self.inner.borrow().values[v.0].shape()
    }

    pub fn value(&self, v: Val) -> Tensor<T> {
        self.inner.borrow().values[v.0].clone()
    }

    /// Loads a tensor that does not require gradients.
    pub fn constant(&self, t: Tensor<T>) -> Val {
        self.push_value(t)
    }

    /// Loads a parameter value; gradients flow back to its id.
    pub fn param(&self, p: &Parameter<T>) -> Val {
        let v = self.push_value(p.value.clone());
        self.inner.borrow_mut().leaves.push((v.0, p.id));
        v
    }

    pub fn matmul(&self, a: Val, b: Val) -> Result<Val> {
        let out = {
            let inner = self.inner.borrow();
            inner.values[a.0].matmul(&inner.values[b.0])?
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let ga = gout.matmul(&values[b.0].transpose()).expect("matmul back");
                let gb = values[a.0].transpose().matmul(gout).expect("matmul back");
                emit(a.0, ga);
                emit(b.0, gb);
            }),
        );
        Ok(out)
    }

    pub fn add(&self, a: Val, b: Val) -> Result<Val> {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            if ta.shape() != tb.shape() {
                return Err(Error::shape("add", ta.shape(), tb.shape()));
            }
            let mut out = ta.clone();
            out.add_assign(tb);
            out
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |_, gout, emit| {
                emit(a.0, gout.clone());
                emit(b.0, gout.clone());
            }),
        );
        Ok(out)
    }

    /// Adds a 1×d row vector to every row of an n×d matrix.
    pub fn add_row(&self, m: Val, row: Val) -> Result<Val> {
        let out = {
            let inner = self.inner.borrow();
            let (tm, tr) = (&inner.values[m.0], &inner.values[row.0]);
            if tr.rows() != 1 || tr.cols() != tm.cols() {
                return Err(Error::shape("add_row", tm.shape(), tr.shape()));
            }
            let mut out = tm.clone();
            for i in 0..out.rows() {
                let r = out.row_mut(i);
                for (slot, &b) in r.iter_mut().zip(tr.data()) {
                    *slot = *slot + b;
                }
            }
            out
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |_, gout, emit| {
                emit(m.0, gout.clone());
                let mut grow = Tensor::zeros(1, gout.cols());
                for i in 0..gout.rows() {
                    for (slot, &g) in grow.data_mut().iter_mut().zip(gout.row(i)) {
                        *slot = *slot + g;
                    }
                }
                emit(row.0, grow);
            }),
        );
        Ok(out)
    }

    /// Element-wise product.
    pub fn mul(&self, a: Val, b: Val) -> Result<Val> {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            if ta.shape() != tb.shape() {
                return Err(Error::shape("mul", ta.shape(), tb.shape()));
            }
            let mut out = ta.clone();
            for (slot, &x) in out.data_mut().iter_mut().zip(tb.data()) {
                *slot = *slot * x;
            }
            out
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let mut ga = gout.clone();
                for (slot, &x) in ga.data_mut().iter_mut().zip(values[b.0].data()) {
                    *slot = *slot * x;
                }
                let mut gb = gout.clone();
                for (slot, &x) in gb.data_mut().iter_mut().zip(values[a.0].data()) {
                    *slot = *slot * x;
                }
                emit(a.0, ga);
                emit(b.0, gb);
            }),
        );
        Ok(out)
    }

    /// `alpha * x + beta` element-wise, with scalar constants.
    pub fn affine(&self, x: Val, alpha: T, beta: T) -> Val {
        let out = {
            let inner = self.inner.borrow();
            inner.values[x.0].map(|v| alpha * v + beta)
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |_, gout, emit| {
                emit(x.0, gout.map(|g| alpha * g));
            }),
        );
        out
    }

    pub fn sigmoid(&self, x: Val) -> Val {
        let out = {
            let inner = self.inner.borrow();
            inner.values[x.0].map(stable_sigmoid)
        };
        let out = self.push_value(out);
        let out_idx = out.0;
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let y = &values[out_idx];
                let mut gx = gout.clone();
                for (slot, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                    *slot = *slot * yv * (T::one() - yv);
                }
                emit(x.0, gx);
            }),
        );
        out
    }

    pub fn tanh(&self, x: Val) -> Val {
        let out = {
            let inner = self.inner.borrow();
            inner.values[x.0].map(|v| v.tanh())
        };
        let out = self.push_value(out);
        let out_idx = out.0;
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let y = &values[out_idx];
                let mut gx = gout.clone();
                for (slot, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                    *slot = *slot * (T::one() - yv * yv);
                }
                #[cfg(feature = "corrupt-backward")]
                gx.scale_assign(T::from_f64(1.01));
                emit(x.0, gx);
            }),
        );
        out
    }

    pub fn relu(&self, x: Val) -> Val {
        let out = {
            let inner = self.inner.borrow();
            inner.values[x.0].map(|v| if v > T::zero() { v } else { T::zero() })
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let xs = &values[x.0];
                let mut gx = gout.clone();
                for (slot, &xv) in gx.data_mut().iter_mut().zip(xs.data()) {
                    if xv <= T::zero() {
                        *slot = T::zero();
                    }
                }
                emit(x.0, gx);
            }),
        );
        out
    }

    /// Natural log; callers must guarantee strictly positive inputs.
    pub fn ln(&self, x: Val) -> Val {
        let out = {
            let inner = self.inner.borrow();
            inner.values[x.0].map(|v| v.ln())
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let xs = &values[x.0];
                let mut gx = gout.clone();
                for (slot, &xv) in gx.data_mut().iter_mut().zip(xs.data()) {
                    *slot = *slot / xv;
                }
                emit(x.0, gx);
            }),
        );
        out
    }

    pub fn concat_cols(&self, a: Val, b: Val) -> Result<Val> {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            if ta.rows() != tb.rows() {
                return Err(Error::shape("concat_cols", ta.shape(), tb.shape()));
            }
            let mut out = Tensor::zeros(ta.rows(), ta.cols() + tb.cols());
            for i in 0..ta.rows() {
                out.row_mut(i)[..ta.cols()].copy_from_slice(ta.row(i));
                out.row_mut(i)[ta.cols()..].copy_from_slice(tb.row(i));
            }
            out
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let ca = values[a.0].cols();
                let mut ga = Tensor::zeros(gout.rows(), ca);
                let mut gb = Tensor::zeros(gout.rows(), gout.cols() - ca);
                for i in 0..gout.rows() {
                    ga.row_mut(i).copy_from_slice(&gout.row(i)[..ca]);
                    gb.row_mut(i).copy_from_slice(&gout.row(i)[ca..]);
                }
                emit(a.0, ga);
                emit(b.0, gb);
            }),
        );
        Ok(out)
    }

    pub fn concat_rows(&self, a: Val, b: Val) -> Result<Val> {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            if ta.cols() != tb.cols() {
                return Err(Error::shape("concat_rows", ta.shape(), tb.shape()));
            }
            let mut data = Vec::with_capacity((ta.rows() + tb.rows()) * ta.cols());
            data.extend_from_slice(ta.data());
            data.extend_from_slice(tb.data());
            Tensor::from_vec(ta.rows() + tb.rows(), ta.cols(), data)
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let ra = values[a.0].rows();
                let cols = gout.cols();
                let ga = Tensor::from_vec(ra, cols, gout.data()[..ra * cols].to_vec());
                let gb = Tensor::from_vec(
                    gout.rows() - ra,
                    cols,
                    gout.data()[ra * cols..].to_vec(),
                );
                emit(a.0, ga);
                emit(b.0, gb);
            }),
        );
        Ok(out)
    }

    /// Column mean: n×d → 1×d.
    pub fn mean_rows(&self, x: Val) -> Val {
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.values[x.0];
            let n = T::from_f64(t.rows() as f64);
            let mut out = Tensor::zeros(1, t.cols());
            for i in 0..t.rows() {
                for (slot, &v) in out.data_mut().iter_mut().zip(t.row(i)) {
                    *slot = *slot + v;
                }
            }
            for slot in out.data_mut() {
                *slot = *slot / n;
            }
            out
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let t = &values[x.0];
                let n = T::from_f64(t.rows() as f64);
                let mut gx = Tensor::zeros(t.rows(), t.cols());
                for i in 0..t.rows() {
                    for (slot, &g) in gx.row_mut(i).iter_mut().zip(gout.data()) {
                        *slot = g / n;
                    }
                }
                emit(x.0, gx);
            }),
        );
        out
    }

    /// Gathers rows by index; duplicates are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&self, x: Val, idx: &[usize]) -> Result<Val> {
        let rows = idx.to_vec();
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.values[x.0];
            for &i in &rows {
                if i >= t.rows() {
                    return Err(Error::IndexOutOfRange {
                        index: i,
                        len: t.rows(),
                    });
                }
            }
            let mut out = Tensor::zeros(rows.len(), t.cols());
            for (k, &i) in rows.iter().enumerate() {
                out.row_mut(k).copy_from_slice(t.row(i));
            }
            out
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let t = &values[x.0];
                let mut gx = Tensor::zeros(t.rows(), t.cols());
                for (k, &i) in rows.iter().enumerate() {
                    for (slot, &g) in gx.row_mut(i).iter_mut().zip(gout.row(k)) {
                        *slot = *slot + g;
                    }
                }
                emit(x.0, gx);
            }),
        );
        Ok(out)
    }

    /// Embedding lookup: loads the table parameter and gathers rows.
    pub fn embed(&self, table: &Parameter<T>, rows: &[usize]) -> Result<Val> {
        let t = self.param(table);
        self.gather_rows(t, rows)
    }

    /// Inverted dropout. A no-op when disabled, so evaluation needs no
    /// rescaling.
    pub fn dropout(&self, x: Val, rate: f64, rng: &mut ChaCha8Rng, enabled: bool) -> Val {
        if !enabled || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let mask: Vec<T> = {
            let inner = self.inner.borrow();
            (0..inner.values[x.0].len())
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                })
                .collect()
        };
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.values[x.0];
            let mut out = t.clone();
            for (slot, &m) in out.data_mut().iter_mut().zip(&mask) {
                *slot = *slot * m;
            }
            out
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |_, gout, emit| {
                let mut gx = gout.clone();
                for (slot, &m) in gx.data_mut().iter_mut().zip(&mask) {
                    *slot = *slot * m;
                }
                emit(x.0, gx);
            }),
        );
        out
    }

    /// Softmax over all entries of the tensor, with masked entries
    /// pinned to exactly zero. Stabilized by max subtraction.
    pub fn masked_softmax(&self, logits: Val, mask: &[bool]) -> Result<Val> {
        let mask = mask.to_vec();
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.values[logits.0];
            assert_eq!(t.len(), mask.len(), "mask length");
            let mut max = None;
            for (&v, &keep) in t.data().iter().zip(&mask) {
                if keep && max.map_or(true, |m| v > m) {
                    max = Some(v);
                }
            }
            let max = max.ok_or(Error::AllMasked)?;
            let mut out = t.clone();
            let mut sum = T::zero();
            for (slot, &keep) in out.data_mut().iter_mut().zip(&mask) {
                if keep {
                    *slot = (*slot - max).exp();
                    sum = sum + *slot;
                } else {
                    *slot = T::zero();
                }
            }
            for slot in out.data_mut() {
                *slot = *slot / sum;
            }
            out
        };
        let out = self.push_value(out);
        let out_idx = out.0;
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let p = &values[out_idx];
                let mut dot = T::zero();
                for (&g, &pv) in gout.data().iter().zip(p.data()) {
                    dot = dot + g * pv;
                }
                let mut gx = gout.clone();
                for ((slot, &pv), &keep) in
                    gx.data_mut().iter_mut().zip(p.data()).zip(&mask)
                {
                    *slot = if keep {
                        pv * (*slot - dot)
                    } else {
                        T::zero()
                    };
                }
                emit(logits.0, gx);
            }),
        );
        Ok(out)
    }

    /// Extracts one element as a 1×1 tensor.
    pub fn pick(&self, x: Val, i: usize, j: usize) -> Val {
        let out = {
            let inner = self.inner.borrow();
            Tensor::from_vec(1, 1, vec![inner.values[x.0].at(i, j)])
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let t = &values[x.0];
                let mut gx = Tensor::zeros(t.rows(), t.cols());
                gx.set(i, j, gout.scalar());
                emit(x.0, gx);
            }),
        );
        out
    }

    /// Training-mode batch norm over the row dimension, one feature per
    /// column. Returns the observed batch statistics so the caller can
    /// fold them into running estimates.
    pub fn batch_norm_train(
        &self,
        x: Val,
        gamma: Val,
        beta: Val,
    ) -> Result<(Val, BatchStats<T>)> {
        let (mean, var, out_tensor) = {
            let inner = self.inner.borrow();
            let t = &inner.values[x.0];
            let g = &inner.values[gamma.0];
            let b = &inner.values[beta.0];
            if g.shape() != (1, t.cols()) || b.shape() != (1, t.cols()) {
                return Err(Error::shape("batch_norm", t.shape(), g.shape()));
            }
            let n = T::from_f64(t.rows() as f64);
            let mut mean: Tensor<T> = Tensor::zeros(1, t.cols());
            for i in 0..t.rows() {
                for (slot, &v) in mean.data_mut().iter_mut().zip(t.row(i)) {
                    *slot = *slot + v;
                }
            }
            for slot in mean.data_mut() {
                *slot = *slot / n;
            }
            let mut var: Tensor<T> = Tensor::zeros(1, t.cols());
            for i in 0..t.rows() {
                for ((slot, &v), &mu) in
                    var.data_mut().iter_mut().zip(t.row(i)).zip(mean.data())
                {
                    let d = v - mu;
                    *slot = *slot + d * d;
                }
            }
            for slot in var.data_mut() {
                *slot = *slot / n;
            }
            let eps = T::from_f64(BN_EPS);
            let mut out = Tensor::zeros(t.rows(), t.cols());
            for i in 0..t.rows() {
                for j in 0..t.cols() {
                    let inv = (var.at(0, j) + eps).sqrt().recip();
                    let xhat = (t.at(i, j) - mean.at(0, j)) * inv;
                    out.set(i, j, g.at(0, j) * xhat + b.at(0, j));
                }
            }
            (mean, var, out)
        };
        let out = self.push_value(out_tensor);
        let (bmean, bvar) = (mean.clone(), var.clone());
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let t = &values[x.0];
                let g = &values[gamma.0];
                let (rows, cols) = t.shape();
                let n = T::from_f64(rows as f64);
                let eps = T::from_f64(BN_EPS);
                let mut gx = Tensor::zeros(rows, cols);
                let mut ggamma = Tensor::zeros(1, cols);
                let mut gbeta = Tensor::zeros(1, cols);
                for j in 0..cols {
                    let mu = bmean.at(0, j);
                    let inv = (bvar.at(0, j) + eps).sqrt().recip();
                    let gamma_j = g.at(0, j);
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_xc = T::zero();
                    let mut sum_xc = T::zero();
                    for i in 0..rows {
                        let go = gout.at(i, j);
                        let xc = t.at(i, j) - mu;
                        ggamma.set(0, j, ggamma.at(0, j) + go * xc * inv);
                        gbeta.set(0, j, gbeta.at(0, j) + go);
                        let dxhat = go * gamma_j;
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xc = sum_dxhat_xc + dxhat * xc;
                        sum_xc = sum_xc + xc;
                    }
                    let half = T::from_f64(0.5);
                    let two = T::from_f64(2.0);
                    let dvar = sum_dxhat_xc * (-half) * inv * inv * inv;
                    let dmu = -inv * sum_dxhat + dvar * (-two / n) * sum_xc;
                    for i in 0..rows {
                        let xc = t.at(i, j) - mu;
                        let dxhat = gout.at(i, j) * gamma_j;
                        gx.set(i, j, dxhat * inv + dvar * two * xc / n + dmu / n);
                    }
                }
                emit(x.0, gx);
                emit(gamma.0, ggamma);
                emit(beta.0, gbeta);
            }),
        );
        Ok((
            out,
            BatchStats { mean, var },
        ))
    }

    /// Inference-mode batch norm: a pure affine map using running
    /// statistics, no batch dependence.
    pub fn batch_norm_eval(
        &self,
        x: Val,
        gamma: Val,
        beta: Val,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
    ) -> Result<Val> {
        let rm = running_mean.clone();
        let rv = running_var.clone();
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.values[x.0];
            let g = &inner.values[gamma.0];
            let b = &inner.values[beta.0];
            if g.shape() != (1, t.cols()) || rm.shape() != (1, t.cols()) {
                return Err(Error::shape("batch_norm_eval", t.shape(), g.shape()));
            }
            let eps = T::from_f64(BN_EPS);
            let mut out = Tensor::zeros(t.rows(), t.cols());
            for i in 0..t.rows() {
                for j in 0..t.cols() {
                    let inv = (rv.at(0, j) + eps).sqrt().recip();
                    let xhat = (t.at(i, j) - rm.at(0, j)) * inv;
                    out.set(i, j, g.at(0, j) * xhat + b.at(0, j));
                }
            }
            out
        };
        let out = self.push_value(out);
        self.push_op(
            out,
            Box::new(move |values, gout, emit| {
                let t = &values[x.0];
                let g = &values[gamma.0];
                let (rows, cols) = t.shape();
                let eps = T::from_f64(BN_EPS);
                let mut gx = Tensor::zeros(rows, cols);
                let mut ggamma = Tensor::zeros(1, cols);
                let mut gbeta = Tensor::zeros(1, cols);
                for j in 0..cols {
                    let inv = (rv.at(0, j) + eps).sqrt().recip();
                    for i in 0..rows {
                        let go = gout.at(i, j);
                        let xhat = (t.at(i, j) - rm.at(0, j)) * inv;
                        gx.set(i, j, go * g.at(0, j) * inv);
                        ggamma.set(0, j, ggamma.at(0, j) + go * xhat);
                        gbeta.set(0, j, gbeta.at(0, j) + go);
                    }
                }
                emit(x.0, gx);
                emit(gamma.0, ggamma);
                emit(beta.0, gbeta);
            }),
        );
        Ok(out)
    }

    /// Backpropagates from a 1×1 loss and returns gradients for every
    /// parameter that was loaded onto the tape, merged by id.
    pub fn backward(&self, loss: Val) -> Result<ParamGrads<T>> {
        let inner = self.inner.borrow();
        if inner.values[loss.0].shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                inner.values[loss.0].shape(),
                (1, 1),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; inner.values.len()];
        grads[loss.0] = Some(Tensor::filled(1, 1, T::one()));
        for op in inner.ops.iter().rev() {
            let Some(gout) = grads[op.out].clone() else {
                continue;
            };
            (op.back)(&inner.values, &gout, &mut |idx, contrib| {
                match &mut grads[idx] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            });
        }
        let mut entries: Vec<(ParamId, Tensor<T>)> = Vec::new();
        for &(node, pid) in &inner.leaves {
            if let Some(g) = grads[node].take() {
                entries.push((pid, g));
            }
        }
        entries.sort_by_key(|(pid, _)| *pid);
        let mut merged: Vec<(ParamId, Tensor<T>)> = Vec::new();
        for (pid, g) in entries {
            match merged.last_mut() {
                Some((last_id, acc)) if *last_id == pid => acc.add_assign(&g),
                _ => merged.push((pid, g)),
            }
        }
        Ok(ParamGrads { entries: merged })
    }
}

fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
