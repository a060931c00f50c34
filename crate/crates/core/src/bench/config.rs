use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{AdaptationConfig, DataConfig, PretrainConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::geometry::Sampler;

/// The three seeds that fully determine a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub teacher: u64,
    pub adapt: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::uniform(0)
    }
}

impl Seeds {
    pub fn uniform(seed: u64) -> Self {
        Self {
            data: seed,
            teacher: seed,
            adapt: seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sparsities: Vec<usize>,
    pub sampler: Sampler,
    /// Also score the untouched dense clouds.
    pub include_dense: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sparsities: vec![16, 64, 128],
            sampler: Sampler::Uniform,
            include_dense: true,
        }
    }
}

/// Everything a pipeline run needs. Every field has a default, so `{}` is a
/// complete config; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Seeds,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptationConfig,
    pub eval: EvalConfig,
    /// Seeds used by multi-seed sweeps; each entry fills all three seeds.
    pub sweep_seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)?;
        Ok((Self::from_json(&text)?, text))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.data.validate().map_err(wrap)?;
        self.encoder.validate().map_err(wrap)?;
        self.adapt.validate().map_err(wrap)?;
        if self.eval.sparsities.contains(&0) {
            return Err(Error::Config(
                "evaluation sparsities must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.sweep_seeds.is_empty() {
            vec![0, 1, 2]
        } else {
            self.sweep_seeds.clone()
        }
    }

    /// Evaluation sparsities plus the dense count when requested.
    pub fn eval_sparsities(&self) -> Vec<usize> {
        let mut s = self.eval.sparsities.clone();
        if self.eval.include_dense && !s.contains(&self.data.dense_points) {
            s.push(self.data.dense_points);
        }
        s
    }
}
