//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! copied onto the tape from a [`ParamStore`]; [`Tape::backward`] walks the
//! recording in reverse and accumulates gradients back into the store. A tape
//! is single-use: after `backward` its intermediates are dropped and any
//! further `backward` call is a [`Error::Tape`].

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
}

/// Named parameters with paired gradients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Parameter(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Rebuilds the name index after deserialization.
    pub(crate) fn reindex(&mut self) -> Result<()> {
        self.index.clear();
        for (i, p) in self.params.iter().enumerate() {
            if self.index.insert(p.name.clone(), i).is_some() {
                return Err(Error::Parameter(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul {
        x: Var,
        w: Var,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    Conv1d {
        x: Var,
        k: Var,
    },
    MeanTime {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MulConst {
        x: Var,
        factor: Tensor,
    },
    Concat {
        parts: Vec<Var>,
    },
    RepeatRow {
        v: Var,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    SumScalars {
        parts: Vec<Var>,
    },
    Scale {
        x: Var,
        c: f64,
    },
    SumAll {
        x: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (no gradient flows into it).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Copies a parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id.0))
    }

    /// `x · w` for `x: [n×in]`, `w: [in×out]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ndim() != 2 || wv.ndim() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(Error::Dimension(format!("matmul {:?} x {:?}", xv.shape(), wv.shape())));
        }
        let (n, k, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
        let mut out = vec![0.0; n * m];
        let (xd, wd) = (xv.data(), wv.data());
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = xd[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let wrow = &wd[p * m..(p + 1) * m];
                for (o, &b) in row.iter_mut().zip(wrow) {
                    *o += a * b;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul { x, w }))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = *xv.shape().last().unwrap_or(&0);
        if bv.ndim() != 1 || bv.len() != c {
            return Err(Error::Dimension(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        let bd = bv.data();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(bd) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias { x, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension(format!("add {:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu { x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    /// Valid (unpadded) 1-D convolution without bias: `x: [n×T×D]`,
    /// `k: [w×D×C]` gives `[n×(T−w+1)×C]`.
    pub fn conv1d_raw(&mut self, x: Var, k: Var) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(k));
        if xv.ndim() != 3 || kv.ndim() != 3 || xv.shape()[2] != kv.shape()[1] {
            return Err(Error::Dimension(format!(
                "conv1d input {:?} with kernels {:?}",
                xv.shape(),
                kv.shape()
            )));
        }
        let (n, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (w, c) = (kv.shape()[0], kv.shape()[2]);
        if t < w {
            return Err(Error::SequenceTooShort { len: t, kernel: w });
        }
        let to = t - w + 1;
        let mut out = vec![0.0; n * to * c];
        let (xd, kd) = (xv.data(), kv.data());
        for b in 0..n {
            for s in 0..to {
                let orow = &mut out[(b * to + s) * c..(b * to + s + 1) * c];
                for j in 0..w {
                    let xrow = &xd[(b * t + s + j) * d..(b * t + s + j + 1) * d];
                    for (di, &xval) in xrow.iter().enumerate() {
                        if xval == 0.0 {
                            continue;
                        }
                        let krow = &kd[(j * d + di) * c..(j * d + di + 1) * c];
                        for (o, &kval) in orow.iter_mut().zip(krow) {
                            *o += xval * kval;
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(vec![n, to, c], out)?, Op::Conv1d { x, k }))
    }

    /// Average over the time axis: `[n×T×C]` to `[n×C]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 || xv.shape()[1] == 0 {
            return Err(Error::Dimension(format!("mean_time on {:?}", xv.shape())));
        }
        let (n, t, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = vec![0.0; n * c];
        let xd = xv.data();
        for b in 0..n {
            let orow = &mut out[b * c..(b + 1) * c];
            for s in 0..t {
                for (o, &v) in orow.iter_mut().zip(&xd[(b * t + s) * c..(b * t + s + 1) * c]) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o /= t as f64;
            }
        }
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::MeanTime { x }))
    }

    /// Per-row standardization followed by an affine gain/shift.
    pub fn layernorm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::Parameter(format!("layernorm eps must be > 0, got {eps}")));
        }
        let (xv, gv, sv) = (self.value(x), self.value(gain), self.value(shift));
        if xv.ndim() != 2 {
            return Err(Error::Dimension(format!("layernorm on {:?}", xv.shape())));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        if gv.len() != d || sv.len() != d || d == 0 {
            return Err(Error::Dimension(format!(
                "layernorm gain {:?}/shift {:?} for width {d}",
                gv.shape(),
                sv.shape()
            )));
        }
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for b in 0..n {
            let row = xv.row(b);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[b] = inv;
            for i in 0..d {
                let h = (row[i] - mean) * inv;
                xhat[b * d + i] = h;
                out[b * d + i] = gv.data()[i] * h + sv.data()[i];
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
        ))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, factor: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != factor.shape() {
            return Err(Error::Dimension(format!(
                "mul_const {:?} * {:?}",
                xv.shape(),
                factor.shape()
            )));
        }
        let mut out = xv.clone();
        for (o, f) in out.data_mut().iter_mut().zip(factor.data()) {
            *o *= f;
        }
        Ok(self.push(out, Op::MulConst { x, factor }))
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} not in [0,1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).len();
        let factor: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, Tensor::new(shape, factor)?)
    }

    /// Concatenates 2-D tensors with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.ndim() != 2 || v.rows() != n {
                return Err(Error::Dimension(format!("concat part {:?}", v.shape())));
            }
            widths.push(v.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for b in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(b));
            }
        }
        let value = Tensor::new(vec![n, total], out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }))
    }

    /// Tiles a vector `[d]` into `[n×d]`.
    pub fn repeat_row(&mut self, v: Var, n: usize) -> Result<Var> {
        let vv = self.value(v);
        if vv.ndim() != 1 {
            return Err(Error::Dimension(format!("repeat_row on {:?}", vv.shape())));
        }
        let d = vv.len();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(vv.data());
        }
        Ok(self.push(Tensor::new(vec![n, d], out)?, Op::RepeatRow { v }))
    }

    /// Mean negative log-likelihood of the target classes under a softmax.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ndim() != 2 || lv.rows() != targets.len() || targets.is_empty() {
            return Err(Error::Dimension(format!(
                "logits {:?} for {} targets",
                lv.shape(),
                targets.len()
            )));
        }
        let k = lv.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Label { label: bad, classes: k });
        }
        let n = targets.len();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let row = lv.row(b);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for i in 0..k {
                probs[b * k + i] = (row[i] - max).exp() / z;
            }
            loss += z.ln() + max - row[t];
        }
        loss /= n as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared error; `pred` may be `[n]` or `[n×1]`.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.is_empty() {
            return Err(Error::Dimension(format!(
                "mse prediction {:?} vs {} targets",
                pv.shape(),
                target.len()
            )));
        }
        let n = target.len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        let mut total = 0.0;
        for &p in parts {
            let v = self.value(p);
            if v.len() != 1 {
                return Err(Error::Dimension(format!("sum_scalars part {:?}", v.shape())));
            }
            total += v.data()[0];
        }
        Ok(self.push(Tensor::scalar(total), Op::SumScalars { parts: parts.to_vec() }))
    }

    /// Sum of all entries of `x`.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).sum();
        Ok(self.push(Tensor::scalar(total), Op::SumAll { x }))
    }

    /// Back-propagates from a scalar `loss`, accumulating into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Tape("backward before forward".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &self.nodes {
            if let Op::Param(i) = node.op {
                if i >= store.len() || store.params[i].value.shape() != node.value.shape() {
                    return Err(Error::Tape("tape recorded against a different parameter store".into()));
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for p in store.params.iter_mut() {
            if p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.shape()));
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(i) => {
                    if let Some(acc) = store.params[*i].grad.as_mut() {
                        acc.add_assign(&g);
                    }
                }
                Op::MatMul { x, w } => {
                    let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let (n, k, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                    let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
                    let mut gx = vec![0.0; n * k];
                    let mut gw = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &gd[i * m..(i + 1) * m];
                        for p in 0..k {
                            let wrow = &wd[p * m..(p + 1) * m];
                            gx[i * k + p] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                            let a = xd[i * k + p];
                            if a != 0.0 {
                                for (gwv, &gv) in gw[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                    *gwv += a * gv;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![n, k], gx)?);
                    accumulate(&mut grads, *w, Tensor::new(vec![k, m], gw)?);
                }
                Op::AddBias { x, b } => {
                    let c = self.nodes[b.0].value.len();
                    let mut gb = vec![0.0; c];
                    for chunk in g.data().chunks(c.max(1)) {
                        for (acc, &v) in gb.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::new(vec![c], gb)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = g;
                    for (gv, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads, *x, g.map(|v| v * c));
                }
                Op::SumAll { x } => {
                    let shape = self.nodes[x.0].value.shape();
                    accumulate(&mut grads, *x, Tensor::full(shape, g.data()[0]));
                }
                Op::Conv1d { x, k } => {
                    let (xv, kv) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
                    let (n, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let (w, c) = (kv.shape()[0], kv.shape()[2]);
                    let to = t - w + 1;
                    let (xd, kd, gd) = (xv.data(), kv.data(), g.data());
                    let mut gx = vec![0.0; xv.len()];
                    let mut gk = vec![0.0; kv.len()];
                    for b in 0..n {
                        for s in 0..to {
                            let grow = &gd[(b * to + s) * c..(b * to + s + 1) * c];
                            for j in 0..w {
                                let base = (b * t + s + j) * d;
                                for di in 0..d {
                                    let koff = (j * d + di) * c;
                                    let krow = &kd[koff..koff + c];
                                    gx[base + di] += grow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                                    let xval = xd[base + di];
                                    if xval != 0.0 {
                                        for (acc, &gv) in gk[koff..koff + c].iter_mut().zip(grow) {
                                            *acc += xval * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                    accumulate(&mut grads, *k, Tensor::new(kv.shape().to_vec(), gk)?);
                }
                Op::MeanTime { x } => {
                    let xv = &self.nodes[x.0].value;
                    let (n, t, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let mut gx = vec![0.0; xv.len()];
                    let gd = g.data();
                    for b in 0..n {
                        for s in 0..t {
                            for ch in 0..c {
                                gx[(b * t + s) * c + ch] = gd[b * c + ch] / t as f64;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let gv = &self.nodes[gain.0].value;
                    let (n, d) = (g.shape()[0], g.shape()[1]);
                    let gd = g.data();
                    let mut gx = vec![0.0; n * d];
                    let mut ggain = vec![0.0; d];
                    let mut gshift = vec![0.0; d];
                    for b in 0..n {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        let mut dh = vec![0.0; d];
                        for i in 0..d {
                            let gy = gd[b * d + i];
                            let h = xhat[b * d + i];
                            ggain[i] += gy * h;
                            gshift[i] += gy;
                            dh[i] = gy * gv.data()[i];
                            sum_dh += dh[i];
                            sum_dh_h += dh[i] * h;
                        }
                        let inv = inv_std[b];
                        for i in 0..d {
                            gx[b * d + i] = inv / d as f64 * (d as f64 * dh[i] - sum_dh - xhat[b * d + i] * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![n, d], gx)?);
                    let gshape = self.nodes[gain.0].value.shape().to_vec();
                    let sshape = self.nodes[shift.0].value.shape().to_vec();
                    accumulate(&mut grads, *gain, Tensor::new(gshape, ggain)?);
                    accumulate(&mut grads, *shift, Tensor::new(sshape, gshift)?);
                }
                Op::MulConst { x, factor } => {
                    let mut gx = g;
                    for (gv, f) in gx.data_mut().iter_mut().zip(factor.data()) {
                        *gv *= f;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat { parts } => {
                    let n = g.shape()[0];
                    let total = g.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.shape()[1];
                        let mut gp = Vec::with_capacity(n * w);
                        for b in 0..n {
                            gp.extend_from_slice(&g.data()[b * total + offset..b * total + offset + w]);
                        }
                        accumulate(&mut grads, p, Tensor::new(vec![n, w], gp)?);
                        offset += w;
                    }
                }
                Op::RepeatRow { v } => {
                    let d = self.nodes[v.0].value.len();
                    let mut gv = vec![0.0; d];
                    for chunk in g.data().chunks(d.max(1)) {
                        for (acc, &x) in gv.iter_mut().zip(chunk) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *v, Tensor::new(vec![d], gv)?);
                }
                Op::SoftmaxCe { logits, targets, probs } => {
                    let n = targets.len();
                    let k = probs.len() / n;
                    let scale = g.data()[0] / n as f64;
                    let mut gl = probs.clone();
                    for (b, &t) in targets.iter().enumerate() {
                        gl[b * k + t] -= 1.0;
                    }
                    for v in &mut gl {
                        *v *= scale;
                    }
                    let shape = self.nodes[logits.0].value.shape().to_vec();
                    accumulate(&mut grads, *logits, Tensor::new(shape, gl)?);
                }
                Op::Mse { pred, target } => {
                    let pv = &self.nodes[pred.0].value;
                    let scale = 2.0 * g.data()[0] / target.len() as f64;
                    let gp: Vec<f64> = pv.data().iter().zip(target).map(|(p, t)| scale * (p - t)).collect();
                    accumulate(&mut grads, *pred, Tensor::new(pv.shape().to_vec(), gp)?);
                }
                Op::SumScalars { parts } => {
                    for &p in parts {
                        let shape = self.nodes[p.0].value.shape().to_vec();
                        accumulate(&mut grads, p, Tensor::new(shape, vec![g.data()[0]])?);
                    }
                }
            }
        }

        self.nodes.clear();
        self.consumed = true;
        for p in store.params.iter() {
            if let Some(g) = &p.grad {
                if !g.all_finite() {
                    return Err(Error::Diverged(format!("non-finite gradient for `{}`", p.name)));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
