use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::reduce_gradients;
use crate::alignment::AnchorSet;
use crate::encoder::{encode_all, group_cloud, AdapterVars, EncoderConfig, Grouped, PointEncoder};
use crate::error::{invalid, Error, Result};
use crate::geometry::PointCloud;
use crate::losses::pl_loss;
use crate::numerics::{Adam, AdamConfig, RngStream, Tape};
use crate::params::{Binder, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Upper bound on passes over the training set.
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub tau: f32,
    /// Stop as soon as held-out dense accuracy reaches this.
    pub target_accuracy: f32,
    /// Below this after `max_epochs` the run is treated as broken.
    pub min_accuracy: f32,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            tau: 0.07,
            target_accuracy: 0.95,
            min_accuracy: 0.8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f32>,
    /// Held-out dense accuracy after each epoch.
    pub val_accuracy: Vec<f32>,
}

impl PretrainReport {
    pub fn final_accuracy(&self) -> f32 {
        self.val_accuracy.last().copied().unwrap_or(0.0)
    }
}

/// Accuracy of argmax cosine against every anchor.
pub(crate) fn dense_accuracy(
    model: &PointEncoder,
    clouds: &[PointCloud],
    anchors: &AnchorSet,
) -> Result<f32> {
    let reps = encode_all(model, clouds, None, None)?;
    let correct = reps
        .iter()
        .zip(clouds)
        .filter(|(r, pc)| {
            let q = crate::alignment::similarity(anchors, r.data()).expect("unit rows");
            crate::alignment::pseudo_label(&q) == pc.category_id
        })
        .count();
    Ok(correct as f32 / clouds.len() as f32)
}

fn sample_gradients(
    model: &PointEncoder,
    grouped: &Grouped,
    label: usize,
    anchors: &AnchorSet,
    tau: f32,
) -> Result<(
    f32,
    std::collections::BTreeMap<String, crate::numerics::Tensor>,
)> {
    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let vars = model.bind(&mut tape, &mut binder, true);
    let r = vars.represent(&mut tape, grouped, AdapterVars::default())?;
    let e = tape.constant(anchors.embeddings.clone());
    let q = tape.matmul_nt(r, e)?;
    let loss = pl_loss(&mut tape, q, &[label], tau)?;
    let mut grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), binder.gradients(&tape, &mut grads)))
}

/// Trains every teacher weight with cross-entropy of `cos(E, encode(pc)) / tau`
/// against the true labels, stopping once held-out dense accuracy reaches the
/// target.
pub fn pretrain_teacher(
    train: &[PointCloud],
    val: &[PointCloud],
    anchors: &AnchorSet,
    encoder: &EncoderConfig,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(PointEncoder, PretrainReport)> {
    if train.is_empty() || val.is_empty() {
        return Err(invalid(
            "pre-training needs nonempty train and held-out sets",
        ));
    }
    if let Some(pc) = train
        .iter()
        .chain(val)
        .find(|pc| pc.category_id >= anchors.len())
    {
        return Err(invalid(format!(
            "category {} has no anchor",
            pc.category_id
        )));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(invalid("batch size and epoch budget must be positive"));
    }
    let mut model = PointEncoder::init(encoder, seed)?;
    let grouped: Vec<Grouped> = train
        .par_iter()
        .map(|pc| group_cloud(pc, encoder))
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut report = PretrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let mut rng = RngStream::new(seed, &format!("pretrain/epoch{epoch}"));
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let parts = batch
                .par_iter()
                .map(|&i| {
                    sample_gradients(&model, &grouped[i], train[i].category_id, anchors, cfg.tau)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            let (losses, grads): (Vec<f32>, Vec<_>) = parts.into_iter().unzip();
            total += losses.iter().map(|&l| l as f64).sum::<f64>();
            let grads = reduce_gradients(grads, 1.0 / batch.len() as f32);
            adam.step(model.named_tensors_mut(), &grads)?;
        }
        report.loss_curve.push((total / train.len() as f64) as f32);
        report
            .val_accuracy
            .push(dense_accuracy(&model, val, anchors)?);
        report.epochs_run = epoch + 1;
        if report.final_accuracy() >= cfg.target_accuracy {
            break;
        }
    }
    if report.final_accuracy() < cfg.min_accuracy {
        return Err(Error::Training(format!(
            "teacher reached only {:.3} held-out accuracy after {} epochs (losses {:?})",
            report.final_accuracy(),
            report.epochs_run,
            report.loss_curve
        )));
    }
    Ok((model, report))
}
