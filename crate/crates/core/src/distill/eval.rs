use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Adapter;
use crate::alignment::{complementary_labels, pseudo_label, similarity, AnchorSet};
use crate::encoder::{encode, PointEncoder};
use crate::error::{invalid, Result};
use crate::geometry::{PointCloud, Sampler, ShapeFamily};
use crate::numerics::{derive_seed, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategorySplit {
    Seen,
    Unseen,
}

impl CategorySplit {
    pub fn name(self) -> &'static str {
        match self {
            CategorySplit::Seen => "seen",
            CategorySplit::Unseen => "unseen",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub sparsity: usize,
    pub split: CategorySplit,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f32,
}

/// How often the teacher-derived labels are wrong on a set of clouds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelErrors {
    /// Point count the clouds were thinned to; `None` for dense clouds.
    pub sparsity: Option<usize>,
    pub k: usize,
    pub samples: usize,
    /// Fraction whose argmax label differs from the true category.
    pub pseudo_error: f32,
    /// Fraction whose true category is among the `k` complementary labels.
    pub complementary_error: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sampler: Option<Sampler>,
    pub cells: Vec<AccuracyCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_errors: Option<LabelErrors>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_curve: Vec<f32>,
}

impl Metrics {
    pub fn accuracy(&self, sparsity: usize, split: CategorySplit) -> Option<f32> {
        self.cells
            .iter()
            .find(|c| c.sparsity == sparsity && c.split == split)
            .map(|c| c.accuracy)
    }

    /// Mean accuracy over the evaluated sparsities for one split.
    pub fn mean(&self, split: CategorySplit) -> Option<f32> {
        let v: Vec<f32> = self
            .cells
            .iter()
            .filter(|c| c.split == split)
            .map(|c| c.accuracy)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f32>() / v.len() as f32)
    }

    pub fn sparsities(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.cells.iter().map(|c| c.sparsity).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Thins `pc` to `n` points; counts at or above the cloud size keep it whole.
pub(crate) fn thin(pc: &PointCloud, n: usize, sampler: Sampler, seed: u64) -> Result<PointCloud> {
    if n >= pc.len() {
        Ok(pc.clone())
    } else {
        sampler.apply(pc, n, seed)
    }
}

fn sampler_seed(seed: u64, sampler: Sampler, n: usize) -> u64 {
    derive_seed(seed, &format!("eval/{}/{n}", sampler.name()))
}

fn represent(model: &PointEncoder, adapter: Option<&Adapter>, pc: &PointCloud) -> Result<Tensor> {
    match adapter {
        Some(a) => a.encode(model, pc),
        None => encode(model, pc, None),
    }
}

/// Zero-shot accuracy over every anchor, per sparsity and seen/unseen split.
/// The thinned clouds depend only on `(cloud, sampler, sparsity, seed)`, so
/// different models are compared on identical inputs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &PointEncoder,
    adapter: Option<&Adapter>,
    clouds: &[PointCloud],
    anchors: &AnchorSet,
    sparsities: &[usize],
    sampler: Sampler,
    unseen: &[ShapeFamily],
    seed: u64,
) -> Result<Metrics> {
    if clouds.is_empty() || sparsities.is_empty() {
        return Err(invalid("evaluation needs clouds and at least one sparsity"));
    }
    let mut cells = Vec::new();
    for &n in sparsities {
        if n == 0 {
            return Err(invalid("sparsity must be positive"));
        }
        let s = sampler_seed(seed, sampler, n);
        let hits = clouds
            .par_iter()
            .map(|pc| {
                let r = represent(model, adapter, &thin(pc, n, sampler, s)?)?;
                Ok(pseudo_label(&similarity(anchors, r.data())?) == pc.category_id)
            })
            .collect::<Result<Vec<bool>>>()?;
        for split in [CategorySplit::Seen, CategorySplit::Unseen] {
            let (correct, total) = clouds.iter().zip(&hits).fold((0, 0), |(c, t), (pc, &hit)| {
                let is_unseen = unseen.iter().any(|f| f.id() == pc.category_id);
                if is_unseen == (split == CategorySplit::Unseen) {
                    (c + hit as usize, t + 1)
                } else {
                    (c, t)
                }
            });
            if total > 0 {
                cells.push(AccuracyCell {
                    sparsity: n,
                    split,
                    correct,
                    total,
                    accuracy: correct as f32 / total as f32,
                });
            }
        }
    }
    Ok(Metrics {
        sampler: Some(sampler),
        cells,
        label_errors: None,
        loss_curve: Vec::new(),
    })
}

/// Pseudo-label and complementary-label error rates of `model` (plus
/// `adapter`) over every anchor, optionally on uniformly thinned clouds.
pub fn label_error_rates(
    model: &PointEncoder,
    adapter: Option<&Adapter>,
    clouds: &[PointCloud],
    anchors: &AnchorSet,
    k: usize,
    sparsity: Option<usize>,
    seed: u64,
) -> Result<LabelErrors> {
    if clouds.is_empty() {
        return Err(invalid("no clouds to measure label errors on"));
    }
    let s = sampler_seed(seed, Sampler::Uniform, sparsity.unwrap_or(0));
    let flags = clouds
        .par_iter()
        .map(|pc| {
            let input = match sparsity {
                Some(n) => thin(pc, n, Sampler::Uniform, s)?,
                None => pc.clone(),
            };
            let q = similarity(anchors, represent(model, adapter, &input)?.data())?;
            let negatives = complementary_labels(&q, k)?;
            Ok((
                pseudo_label(&q) != pc.category_id,
                negatives.contains(&pc.category_id),
            ))
        })
        .collect::<Result<Vec<(bool, bool)>>>()?;
    let n = clouds.len() as f32;
    Ok(LabelErrors {
        sparsity,
        k,
        samples: clouds.len(),
        pseudo_error: flags.iter().filter(|f| f.0).count() as f32 / n,
        complementary_error: flags.iter().filter(|f| f.1).count() as f32 / n,
    })
}
