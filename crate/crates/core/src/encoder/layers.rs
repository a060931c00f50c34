use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tape, Tensor, Var};
use crate::params::{join, Binder, Parameters};

/// Affine map `x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights `N(0, 1/in)`, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut RngStream) -> Self {
        let normal = Normal::new(0.0f32, (1.0 / input as f32).sqrt()).expect("valid std");
        let data = (0..input * output).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Tensor::matrix(input, output, data).expect("sized"),
            bias: Tensor::zeros(&[1, output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[1, output]),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        Self {
            weight: w,
            bias: Tensor::zeros(&[1, dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `x W + b` outside any tape.
    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        let y = LinearVars { weight: w, bias: b }.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn bind(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        trainable: bool,
    ) -> LinearVars {
        LinearVars {
            weight: binder.bind(tape, join(prefix, "weight"), &self.weight, trainable),
            bias: binder.bind(tape, join(prefix, "bias"), &self.bias, trainable),
        }
    }
}

impl Parameters for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_row(y, self.bias)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[1, dim], 1.0),
            beta: Tensor::zeros(&[1, dim]),
        }
    }

    pub fn bind(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        trainable: bool,
    ) -> LayerNormVars {
        LayerNormVars {
            gamma: binder.bind(tape, join(prefix, "gamma"), &self.gamma, trainable),
            beta: binder.bind(tape, join(prefix, "beta"), &self.beta, trainable),
        }
    }
}

impl Parameters for LayerNorm {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormVars {
    pub gamma: Var,
    pub beta: Var,
}

impl LayerNormVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gamma, self.beta)
    }
}

/// Pre-norm transformer block:
/// `x + Attn(LN1(x))`, then `+ FFN(LN2(.))` with a GELU FFN.
#[derive(Clone, Debug, PartialEq)]
pub struct SaBlock {
    pub heads: usize,
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl SaBlock {
    pub fn init(dim: usize, heads: usize, ffn_mult: usize, rng: &mut RngStream) -> Self {
        Self {
            heads,
            ln1: LayerNorm::new(dim),
            q: Linear::init(dim, dim, rng),
            k: Linear::init(dim, dim, rng),
            v: Linear::init(dim, dim, rng),
            out: Linear::init(dim, dim, rng),
            ln2: LayerNorm::new(dim),
            ff1: Linear::init(dim, dim * ffn_mult, rng),
            ff2: Linear::init(dim * ffn_mult, dim, rng),
        }
    }

    /// All weights zero, including the norm gains.
    pub fn zeros(dim: usize, heads: usize, ffn_mult: usize) -> Self {
        let zero_ln = LayerNorm {
            gamma: Tensor::zeros(&[1, dim]),
            beta: Tensor::zeros(&[1, dim]),
        };
        Self {
            heads,
            ln1: zero_ln.clone(),
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            out: Linear::zeros(dim, dim),
            ln2: zero_ln,
            ff1: Linear::zeros(dim, dim * ffn_mult),
            ff2: Linear::zeros(dim * ffn_mult, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.in_dim()
    }

    pub fn same_shape(&self, other: &SaBlock) -> bool {
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.params("", &mut a);
        other.params("", &mut b);
        self.heads == other.heads
            && a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.dims() == tb.dims())
    }

    pub fn bind(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        trainable: bool,
    ) -> BlockVars {
        BlockVars {
            heads: self.heads,
            ln1: self.ln1.bind(tape, binder, &join(prefix, "ln1"), trainable),
            q: self
                .q
                .bind(tape, binder, &join(prefix, "attn.q"), trainable),
            k: self
                .k
                .bind(tape, binder, &join(prefix, "attn.k"), trainable),
            v: self
                .v
                .bind(tape, binder, &join(prefix, "attn.v"), trainable),
            out: self
                .out
                .bind(tape, binder, &join(prefix, "attn.out"), trainable),
            ln2: self.ln2.bind(tape, binder, &join(prefix, "ln2"), trainable),
            ff1: self
                .ff1
                .bind(tape, binder, &join(prefix, "ffn.fc1"), trainable),
            ff2: self
                .ff2
                .bind(tape, binder, &join(prefix, "ffn.fc2"), trainable),
        }
    }

    /// Runs the block on a standalone tape; `tokens` is `n x d`.
    pub fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let vars = self.bind(&mut tape, &mut binder, "", false);
        let x = tape.constant(tokens.clone());
        let y = vars.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

impl Parameters for SaBlock {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.ln1.params(&join(prefix, "ln1"), out);
        self.q.params(&join(prefix, "attn.q"), out);
        self.k.params(&join(prefix, "attn.k"), out);
        self.v.params(&join(prefix, "attn.v"), out);
        self.out.params(&join(prefix, "attn.out"), out);
        self.ln2.params(&join(prefix, "ln2"), out);
        self.ff1.params(&join(prefix, "ffn.fc1"), out);
        self.ff2.params(&join(prefix, "ffn.fc2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.ln1.params_mut(&join(prefix, "ln1"), out);
        self.q.params_mut(&join(prefix, "attn.q"), out);
        self.k.params_mut(&join(prefix, "attn.k"), out);
        self.v.params_mut(&join(prefix, "attn.v"), out);
        self.out.params_mut(&join(prefix, "attn.out"), out);
        self.ln2.params_mut(&join(prefix, "ln2"), out);
        self.ff1.params_mut(&join(prefix, "ffn.fc1"), out);
        self.ff2.params_mut(&join(prefix, "ffn.fc2"), out);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub heads: usize,
    pub ln1: LayerNormVars,
    pub q: LinearVars,
    pub k: LinearVars,
    pub v: LinearVars,
    pub out: LinearVars,
    pub ln2: LayerNormVars,
    pub ff1: LinearVars,
    pub ff2: LinearVars,
}

impl BlockVars {
    /// Multi-head self-attention with row-softmax of `Q K^T / sqrt(d/h)`.
    pub fn attention(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let d = tape.value(x).cols();
        let dq = tape.value(self.q.weight).rows();
        if d != dq {
            return Err(Error::Shape {
                op: "attention",
                lhs: tape.value(x).dims().to_vec(),
                rhs: tape.value(self.q.weight).dims().to_vec(),
            });
        }
        let q = self.q.forward(tape, x)?;
        let k = self.k.forward(tape, x)?;
        let v = self.v.forward(tape, x)?;
        let head_dim = d / self.heads;
        let scale = 1.0 / (head_dim as f32).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * head_dim, head_dim)?,
                    tape.slice_cols(k, h * head_dim, head_dim)?,
                    tape.slice_cols(v, h * head_dim, head_dim)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale)?;
            let weights = tape.softmax_rows(scores)?;
            outs.push(tape.matmul(weights, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        self.out.forward(tape, merged)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.ln1.forward(tape, x)?;
        let a = self.attention(tape, h)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, x)?;
        let h = self.ff1.forward(tape, h)?;
        let h = tape.gelu(h)?;
        let h = self.ff2.forward(tape, h)?;
        tape.add(x, h)
    }
}
