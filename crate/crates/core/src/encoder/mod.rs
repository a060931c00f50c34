//! The frozen point-cloud transformer: grouping tokenizer, pre-norm
//! self-attention blocks, mean pooling and a projection into the latent space
//! shared with the class anchors.

mod layers;
#[cfg(test)]
pub(crate) mod oracle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use layers::{BlockVars, LayerNorm, LayerNormVars, Linear, LinearVars, SaBlock};

use crate::error::{invalid, Result};
use crate::fca::{FcaStack, FcaStackVars};
use crate::geometry::{fps, knn_group, PointCloud};
use crate::numerics::{RngStream, Tape, Tensor, Var};
use crate::params::{join, Binder, Parameters};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Number of FPS group centres (point tokens).
    pub groups: usize,
    /// Neighbours per group.
    pub group_size: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub latent_dim: usize,
    pub ffn_mult: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            groups: 32,
            group_size: 8,
            dim: 64,
            blocks: 4,
            heads: 4,
            latent_dim: 64,
            ffn_mult: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.groups,
            self.group_size,
            self.dim,
            self.blocks,
            self.heads,
            self.latent_dim,
            self.ffn_mult,
        ];
        if extents.contains(&0) {
            return Err(invalid(format!(
                "encoder extents must be positive: {self:?}"
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "token dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Shared per-group MLP (3 -> d -> d, max-pooled over the group) plus a
/// linear positional embedding of the group centre.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    pub mlp1: Linear,
    pub mlp2: Linear,
    pub pos: Linear,
}

impl Tokenizer {
    pub fn init(dim: usize, rng: &mut RngStream) -> Self {
        Self {
            mlp1: Linear::init(3, dim, rng),
            mlp2: Linear::init(dim, dim, rng),
            pos: Linear::init(3, dim, rng),
        }
    }
}

impl Parameters for Tokenizer {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.mlp1.params(&join(prefix, "mlp1"), out);
        self.mlp2.params(&join(prefix, "mlp2"), out);
        self.pos.params(&join(prefix, "pos"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.mlp1.params_mut(&join(prefix, "mlp1"), out);
        self.mlp2.params_mut(&join(prefix, "mlp2"), out);
        self.pos.params_mut(&join(prefix, "pos"), out);
    }
}

/// Geometry-only preprocessing of a cloud: neighbourhoods expressed relative
/// to their centres, and the centres themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouped {
    /// `(g * s) x 3`, group-major.
    pub relative: Tensor,
    /// `g x 3`.
    pub centers: Tensor,
    pub group_size: usize,
}

impl Grouped {
    pub fn num_groups(&self) -> usize {
        self.centers.rows()
    }
}

/// Normalizes the cloud, picks `min(groups, n)` FPS centres (seeded by the
/// cloud's provenance seed) and gathers `group_size` neighbours per centre.
pub fn group_cloud(pc: &PointCloud, cfg: &EncoderConfig) -> Result<Grouped> {
    if pc.is_empty() {
        return Err(invalid("cannot tokenize an empty cloud"));
    }
    let normalized = pc.normalized();
    let g = cfg.groups.min(normalized.len());
    let centers = fps(&normalized, g, pc.seed)?;
    let index = knn_group(&normalized, &centers, cfg.group_size)?;
    let s = cfg.group_size;
    let mut relative = Vec::with_capacity(g * s * 3);
    let mut centre_rows = Vec::with_capacity(g * 3);
    for (gi, &c) in centers.iter().enumerate() {
        let cp = normalized.points[c];
        centre_rows.extend_from_slice(&cp);
        for &j in index.row(gi) {
            let p = normalized.points[j];
            relative.extend_from_slice(&[p[0] - cp[0], p[1] - cp[1], p[2] - cp[2]]);
        }
    }
    Ok(Grouped {
        relative: Tensor::matrix(g * s, 3, relative)?,
        centers: Tensor::matrix(g, 3, centre_rows)?,
        group_size: s,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct TokenizerVars {
    pub mlp1: LinearVars,
    pub mlp2: LinearVars,
    pub pos: LinearVars,
}

impl TokenizerVars {
    pub fn forward(&self, tape: &mut Tape, grouped: &Grouped) -> Result<Var> {
        let rel = tape.constant(grouped.relative.clone());
        let h = self.mlp1.forward(tape, rel)?;
        let h = tape.gelu(h)?;
        let h = self.mlp2.forward(tape, h)?;
        let pooled = tape.segment_max(h, grouped.group_size)?;
        let centers = tape.constant(grouped.centers.clone());
        let pos = self.pos.forward(tape, centers)?;
        tape.add(pooled, pos)
    }
}

/// The pre-trained teacher network.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEncoder {
    pub config: EncoderConfig,
    pub tokenizer: Tokenizer,
    pub blocks: Vec<SaBlock>,
    pub proj: Linear,
}

impl PointEncoder {
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed, "init/encoder");
        let tokenizer = Tokenizer::init(config.dim, &mut rng);
        let blocks = (0..config.blocks)
            .map(|_| SaBlock::init(config.dim, config.heads, config.ffn_mult, &mut rng))
            .collect();
        let proj = Linear::init(config.dim, config.latent_dim, &mut rng);
        Ok(Self {
            config: config.clone(),
            tokenizer,
            blocks,
            proj,
        })
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut Binder, trainable: bool) -> EncoderVars {
        EncoderVars {
            tokenizer: TokenizerVars {
                mlp1: self
                    .tokenizer
                    .mlp1
                    .bind(tape, binder, "tokenizer.mlp1", trainable),
                mlp2: self
                    .tokenizer
                    .mlp2
                    .bind(tape, binder, "tokenizer.mlp2", trainable),
                pos: self
                    .tokenizer
                    .pos
                    .bind(tape, binder, "tokenizer.pos", trainable),
            },
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.bind(tape, binder, &format!("blocks.{i}"), trainable))
                .collect(),
            proj: self.proj.bind(tape, binder, "proj", trainable),
        }
    }

    /// Point tokens of `pc` before the first block.
    pub fn tokenize(&self, pc: &PointCloud) -> Result<Tensor> {
        let grouped = group_cloud(pc, &self.config)?;
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let vars = self.bind(&mut tape, &mut binder, false);
        let t = vars.tokenizer.forward(&mut tape, &grouped)?;
        Ok(tape.value(t).clone())
    }
}

impl Parameters for PointEncoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.tokenizer.params(&join(prefix, "tokenizer"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.proj.params(&join(prefix, "proj"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.tokenizer.params_mut(&join(prefix, "tokenizer"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.proj.params_mut(&join(prefix, "proj"), out);
    }
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub tokenizer: TokenizerVars,
    pub blocks: Vec<BlockVars>,
    pub proj: LinearVars,
}

/// Optional trainable pieces attached to the frozen encoder.
#[derive(Clone, Copy, Debug, Default)]
pub struct AdapterVars<'a> {
    pub fca: Option<&'a FcaStackVars>,
    /// Linear head between the projection and the final normalization.
    pub head: Option<&'a LinearVars>,
}

impl EncoderVars {
    /// Representation (`1 x C`, unit norm) of a grouped cloud.
    pub fn represent(
        &self,
        tape: &mut Tape,
        grouped: &Grouped,
        adapters: AdapterVars<'_>,
    ) -> Result<Var> {
        let mut tokens = self.tokenizer.forward(tape, grouped)?;
        for (i, block) in self.blocks.iter().enumerate() {
            tokens = match adapters.fca {
                Some(stack) => stack.forward_layer(tape, i, tokens, block)?,
                None => block.forward(tape, tokens)?,
            };
        }
        let pooled = tape.mean_rows(tokens)?;
        let mut z = self.proj.forward(tape, pooled)?;
        if let Some(head) = adapters.head {
            z = head.forward(tape, z)?;
        }
        tape.l2_normalize_rows(z)
    }
}

/// Unit-norm latent representation of `pc`, optionally through an FCA stack.
pub fn encode(model: &PointEncoder, pc: &PointCloud, fca: Option<&FcaStack>) -> Result<Tensor> {
    encode_with(model, pc, fca, None)
}

pub fn encode_with(
    model: &PointEncoder,
    pc: &PointCloud,
    fca: Option<&FcaStack>,
    head: Option<&Linear>,
) -> Result<Tensor> {
    let grouped = group_cloud(pc, &model.config)?;
    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let vars = model.bind(&mut tape, &mut binder, false);
    let fca_vars = fca.map(|s| s.bind(&mut tape, &mut binder, "fca", false));
    let head_vars = head.map(|h| h.bind(&mut tape, &mut binder, "head", false));
    let adapters = AdapterVars {
        fca: fca_vars.as_ref(),
        head: head_vars.as_ref(),
    };
    let r = vars.represent(&mut tape, &grouped, adapters)?;
    Ok(tape.value(r).clone())
}

/// Encodes many clouds in parallel; output order follows input order.
pub fn encode_all(
    model: &PointEncoder,
    clouds: &[PointCloud],
    fca: Option<&FcaStack>,
    head: Option<&Linear>,
) -> Result<Vec<Tensor>> {
    clouds
        .par_iter()
        .map(|pc| encode_with(model, pc, fca, head))
        .collect()
}
