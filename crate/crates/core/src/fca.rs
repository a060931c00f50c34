//! Fused cross-attention adapters.
//!
//! Each layer owns `m` learnable tokens and (optionally) a learnable copy of
//! the block it wraps. The tokens are refined by the learnable block,
//! appended below the point tokens, pushed through the frozen teacher block
//! together with them, and dropped again, so the point-token count never
//! changes. A disabled layer is an exact pass-through to the frozen block.

use rand_distr::{Distribution, Normal};

use crate::encoder::{BlockVars, PointEncoder, SaBlock};
use crate::error::{invalid, Error, Result};
use crate::numerics::{RngStream, Tape, Tensor, Var};
use crate::params::{join, Binder, Parameters};

/// Number of learnable tokens per layer unless configured otherwise.
pub const DEFAULT_TOKENS: usize = 12;
/// Standard deviation of the learnable-token initialization.
pub const TOKEN_INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct FcaLayer {
    /// `m x d` learnable tokens, shared across inputs.
    pub tokens: Tensor,
    /// Refines the tokens before fusion. `None` appends the raw tokens.
    pub learnable_block: Option<SaBlock>,
    /// Index of the teacher block this layer wraps.
    pub frozen_block: usize,
    pub enabled: bool,
}

impl FcaLayer {
    pub fn num_tokens(&self) -> usize {
        self.tokens.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcaStack {
    pub layers: Vec<FcaLayer>,
}

impl FcaStack {
    /// One layer per teacher block. Tokens are drawn from `N(0, 0.02^2)`;
    /// with `cross_attention` each learnable block starts as a copy of the
    /// teacher block it wraps.
    pub fn init(model: &PointEncoder, m: usize, seed: u64, cross_attention: bool) -> Result<Self> {
        if m == 0 {
            return Err(invalid("an FCA layer needs at least one learnable token"));
        }
        let d = model.config.dim;
        let mut rng = RngStream::new(seed, "init/fca");
        let normal = Normal::new(0.0f32, TOKEN_INIT_STD).expect("valid std");
        let layers = model
            .blocks
            .iter()
            .enumerate()
            .map(|(i, block)| {
                let data = (0..m * d).map(|_| normal.sample(&mut rng)).collect();
                FcaLayer {
                    tokens: Tensor::matrix(m, d, data).expect("sized"),
                    learnable_block: cross_attention.then(|| block.clone()),
                    frozen_block: i,
                    enabled: true,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Checks the stack against `model` and enables every layer.
    pub fn attach(&mut self, model: &PointEncoder) -> Result<()> {
        if self.layers.len() != model.blocks.len() {
            return Err(invalid(format!(
                "stack has {} layers but the model has {} blocks",
                self.layers.len(),
                model.blocks.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.frozen_block != i {
                return Err(invalid(format!(
                    "layer {i} wraps block {}",
                    layer.frozen_block
                )));
            }
            let frozen = &model.blocks[i];
            if layer.tokens.cols() != frozen.dim() {
                return Err(Error::Shape {
                    op: "attach",
                    lhs: layer.tokens.dims().to_vec(),
                    rhs: vec![frozen.dim()],
                });
            }
            if let Some(b) = &layer.learnable_block {
                if !b.same_shape(frozen) {
                    return Err(invalid(format!(
                        "learnable block {i} does not match teacher block shapes"
                    )));
                }
            }
        }
        self.layers.iter_mut().for_each(|l| l.enabled = true);
        Ok(())
    }

    /// Turns every layer into a pass-through. Weights are untouched.
    pub fn detach(&mut self) {
        self.layers.iter_mut().for_each(|l| l.enabled = false);
    }

    pub fn is_attached(&self) -> bool {
        self.layers.iter().any(|l| l.enabled)
    }

    pub fn num_tokens(&self) -> usize {
        self.layers.first().map_or(0, FcaLayer::num_tokens)
    }

    pub fn has_cross_attention(&self) -> bool {
        self.layers.iter().all(|l| l.learnable_block.is_some())
    }

    /// Names and values of everything adaptation may change.
    pub fn trainable_params(&self) -> Vec<(String, Tensor)> {
        self.named_tensors()
    }

    /// Places the stack on `tape`; names follow [`Parameters`] under `prefix`.
    pub fn bind(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        trainable: bool,
    ) -> FcaStackVars {
        FcaStackVars {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let prefix = join(prefix, &format!("layers.{i}"));
                    FcaLayerVars {
                        tokens: binder.bind(tape, join(&prefix, "tokens"), &l.tokens, trainable),
                        block: l
                            .learnable_block
                            .as_ref()
                            .map(|b| b.bind(tape, binder, &join(&prefix, "block"), trainable)),
                        enabled: l.enabled,
                    }
                })
                .collect(),
        }
    }

    /// Rebuilds a stack from tensors named like [`Parameters`] emits under
    /// `prefix`. A layer without block tensors is a tokens-only layer.
    pub fn from_tensors(
        model: &PointEncoder,
        tensors: &std::collections::BTreeMap<String, Tensor>,
        prefix: &str,
    ) -> Result<Self> {
        let layers = (0..model.blocks.len())
            .map(|i| {
                let prefix = join(prefix, &format!("layers.{i}"));
                let tokens = tensors
                    .get(&join(&prefix, "tokens"))
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("missing `{prefix}.tokens`")))?;
                let has_block = tensors
                    .keys()
                    .any(|k| k.starts_with(&format!("{prefix}.block.")));
                let learnable_block = if has_block {
                    let mut b = model.blocks[i].clone();
                    let mut slots = Vec::new();
                    b.params_mut(&join(&prefix, "block"), &mut slots);
                    for (name, slot) in slots {
                        let t = tensors
                            .get(&name)
                            .ok_or_else(|| Error::Format(format!("missing `{name}`")))?;
                        if t.dims() != slot.dims() {
                            return Err(Error::Shape {
                                op: "load",
                                lhs: slot.dims().to_vec(),
                                rhs: t.dims().to_vec(),
                            });
                        }
                        *slot = t.clone();
                    }
                    Some(b)
                } else {
                    None
                };
                Ok(FcaLayer {
                    tokens,
                    learnable_block,
                    frozen_block: i,
                    enabled: true,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut stack = Self { layers };
        stack.attach(model)?;
        Ok(stack)
    }
}

impl Parameters for FcaStack {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("layers.{i}"));
            out.push((join(&p, "tokens"), &l.tokens));
            if let Some(b) = &l.learnable_block {
                b.params(&join(&p, "block"), out);
            }
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("layers.{i}"));
            out.push((join(&p, "tokens"), &mut l.tokens));
            if let Some(b) = &mut l.learnable_block {
                b.params_mut(&join(&p, "block"), out);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FcaLayerVars {
    pub tokens: Var,
    pub block: Option<BlockVars>,
    pub enabled: bool,
}

#[derive(Clone, Debug)]
pub struct FcaStackVars {
    pub layers: Vec<FcaLayerVars>,
}

impl FcaLayerVars {
    pub fn forward(&self, tape: &mut Tape, point_tokens: Var, frozen: &BlockVars) -> Result<Var> {
        if !self.enabled {
            return frozen.forward(tape, point_tokens);
        }
        let (n, d) = {
            let t = tape.value(point_tokens);
            (t.rows(), t.cols())
        };
        if tape.value(self.tokens).cols() != d {
            return Err(Error::Shape {
                op: "fca_forward",
                lhs: tape.value(point_tokens).dims().to_vec(),
                rhs: tape.value(self.tokens).dims().to_vec(),
            });
        }
        let refined = match &self.block {
            Some(b) => b.forward(tape, self.tokens)?,
            None => self.tokens,
        };
        let fused = tape.concat_rows(&[point_tokens, refined])?;
        let out = frozen.forward(tape, fused)?;
        tape.slice_rows(out, 0, n)
    }
}

impl FcaStackVars {
    /// Runs teacher block `i`, wrapped by FCA layer `i` when one exists.
    pub fn forward_layer(
        &self,
        tape: &mut Tape,
        i: usize,
        tokens: Var,
        frozen: &BlockVars,
    ) -> Result<Var> {
        match self.layers.get(i) {
            Some(layer) => layer.forward(tape, tokens, frozen),
            None => frozen.forward(tape, tokens),
        }
    }
}

/// Applies one FCA layer around `frozen` to point tokens `tokens` (`n x d`).
pub fn fca_forward(tokens: &Tensor, layer: &FcaLayer, frozen: &SaBlock) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let frozen_vars = frozen.bind(&mut tape, &mut binder, "frozen", false);
    let vars = FcaLayerVars {
        tokens: tape.constant(layer.tokens.clone()),
        block: layer
            .learnable_block
            .as_ref()
            .map(|b| b.bind(&mut tape, &mut binder, "learnable", false)),
        enabled: layer.enabled,
    };
    let t = tape.constant(tokens.clone());
    let out = vars.forward(&mut tape, t, &frozen_vars)?;
    Ok(tape.value(out).clone())
}
