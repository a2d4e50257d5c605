//! Parameterized layers built on the tape.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Layer description used by the architecture builders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        input_dim: usize,
        output_dim: usize,
    },
    Conv1d {
        input_dim: usize,
        output_dim: usize,
        kernel_width: usize,
    },
    Activation {
        dim: usize,
    },
    Dropout {
        dim: usize,
        rate: f64,
    },
    Layernorm {
        dim: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Dense { input_dim, output_dim } => input_dim > 0 && output_dim > 0,
            LayerSpec::Conv1d {
                input_dim,
                output_dim,
                kernel_width,
            } => input_dim > 0 && output_dim > 0 && kernel_width > 0,
            LayerSpec::Activation { dim } | LayerSpec::Layernorm { dim } => dim > 0,
            LayerSpec::Dropout { dim, rate } => {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Parameter(format!("dropout rate {rate} not in [0,1]")));
                }
                dim > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("non-positive dimension in {self:?}")))
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { output_dim, .. } | LayerSpec::Conv1d { output_dim, .. } => output_dim,
            LayerSpec::Activation { dim } | LayerSpec::Dropout { dim, .. } | LayerSpec::Layernorm { dim } => dim,
        }
    }
}

/// `y = x·w + b` for `x: [batch×in]`.
pub fn dense_forward(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Valid 1-D convolution plus per-channel bias.
pub fn conv1d_forward(tape: &mut Tape, x: Var, kernels: Var, b: Var) -> Result<Var> {
    let y = tape.conv1d_raw(x, kernels)?;
    tape.add_bias(y, b)
}

pub fn layernorm_forward(tape: &mut Tape, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
    tape.layernorm(x, gain, shift, eps)
}

pub fn dropout_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    tape.dropout(x, rate, training, rng)
}

pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, targets)
}

pub fn mse_loss(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    tape.mse(pred, target)
}

fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches generated length")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        LayerSpec::Dense { input_dim, output_dim }.validate()?;
        let w = store.insert(
            format!("{prefix}.w"),
            glorot(&[input_dim, output_dim], input_dim, output_dim, rng),
        )?;
        let b = store.insert(format!("{prefix}.b"), Tensor::zeros(&[output_dim]))?;
        Ok(Self {
            w,
            b,
            input_dim,
            output_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        dense_forward(tape, x, w, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub k: ParamId,
    pub b: ParamId,
    pub kernel_width: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        kernel_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        LayerSpec::Conv1d {
            input_dim,
            output_dim,
            kernel_width,
        }
        .validate()?;
        let fan_in = input_dim * kernel_width;
        let k = store.insert(
            format!("{prefix}.k"),
            glorot(&[kernel_width, input_dim, output_dim], fan_in, output_dim, rng),
        )?;
        let b = store.insert(format!("{prefix}.b"), Tensor::zeros(&[output_dim]))?;
        Ok(Self {
            k,
            b,
            kernel_width,
            input_dim,
            output_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let k = tape.param(store, self.k);
        let b = tape.param(store, self.b);
        conv1d_forward(tape, x, k, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        LayerSpec::Layernorm { dim }.validate()?;
        let gain = store.insert(format!("{prefix}.gain"), Tensor::full(&[dim], 1.0))?;
        let shift = store.insert(format!("{prefix}.shift"), Tensor::zeros(&[dim]))?;
        Ok(Self {
            gain,
            shift,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let s = tape.param(store, self.shift);
        layernorm_forward(tape, x, g, s, self.eps)
    }
}
