//! Teacher pre-training, dense-to-sparse self-distillation of the adapters,
//! and evaluation.

mod adapt;
mod check;
mod data;
mod eval;
mod pretrain;

use std::collections::BTreeMap;

pub use adapt::{
    adapt, batch_gradients, teacher_targets, AdaptReport, AdaptationConfig, Adapter, AdapterKind,
    Method, Target,
};
pub use check::check_adaptation_gradients;
pub use data::{cloud_seed, generate_corpus, generate_split, restrict, Corpus, DataConfig, Split};
pub use eval::{evaluate, label_error_rates, AccuracyCell, CategorySplit, LabelErrors, Metrics};
pub use pretrain::{pretrain_teacher, PretrainConfig, PretrainReport};

use crate::geometry::ShapeFamily;
use crate::numerics::Tensor;

/// Default held-out families, unseen during adaptation.
pub const DEFAULT_UNSEEN: [ShapeFamily; 4] = [
    ShapeFamily::Torus,
    ShapeFamily::Cone,
    ShapeFamily::Helix,
    ShapeFamily::Cross,
];

pub fn default_unseen() -> Vec<ShapeFamily> {
    DEFAULT_UNSEEN.to_vec()
}

pub fn seen_families(unseen: &[ShapeFamily]) -> Vec<ShapeFamily> {
    ShapeFamily::ALL
        .iter()
        .copied()
        .filter(|f| !unseen.contains(f))
        .collect()
}

/// Sums per-sample gradient maps in index order, then scales.
pub(crate) fn reduce_gradients(
    parts: Vec<BTreeMap<String, Tensor>>,
    scale: f32,
) -> BTreeMap<String, Tensor> {
    let mut iter = parts.into_iter();
    let mut acc = iter.next().unwrap_or_default();
    for part in iter {
        for (name, g) in part {
            match acc.get_mut(&name) {
                Some(a) => a
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(x, y)| *x += y),
                None => {
                    acc.insert(name, g);
                }
            }
        }
    }
    for g in acc.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    acc
}
