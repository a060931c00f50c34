use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_unseen, reduce_gradients, seen_families};
use crate::alignment::{complementary_labels, pseudo_label, similarity, AnchorSet};
use crate::encoder::{encode_all, encode_with, group_cloud, AdapterVars, Linear, PointEncoder};
use crate::error::{invalid, Error, Result};
use crate::fca::{FcaStack, DEFAULT_TOKENS};
use crate::geometry::{downsample_uniform, PointCloud, ShapeFamily};
use crate::losses::{cl_loss, infonce_loss, pl_loss, total_loss, LossConfig};
use crate::numerics::{Adam, AdamConfig, RngStream, Tape, Tensor, Var};
use crate::params::{join, Binder, Parameters};

/// Which objective drives adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `lambda * InfoNCE + complementary loss`.
    Cl,
    /// `pseudo-label CE + lambda * InfoNCE`.
    Pl,
    #[serde(alias = "infonce")]
    InfonceOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cl => "cl",
            Method::Pl => "pl",
            Method::InfonceOnly => "infonce",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cl" => Ok(Method::Cl),
            "pl" => Ok(Method::Pl),
            "infonce" | "infonce_only" => Ok(Method::InfonceOnly),
            _ => Err(Error::Config(format!(
                "unknown method `{s}` (expected cl, pl or infonce)"
            ))),
        }
    }
}

/// What gets trained on top of the frozen teacher.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    /// Learnable tokens refined by a learnable block, fused per layer.
    Fca,
    /// Learnable tokens fused directly, no learnable block.
    TokensOnly,
    /// A linear head between the projection and the final normalization.
    Head,
}

impl AdapterKind {
    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::Fca => "fca",
            AdapterKind::TokensOnly => "tokens",
            AdapterKind::Head => "head",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationConfig {
    pub method: Method,
    pub adapter: AdapterKind,
    /// Learnable tokens per layer.
    pub tokens: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Each training example is thinned to a count drawn uniformly from here.
    pub sparsities: Vec<usize>,
    pub lr: f32,
    pub loss: LossConfig,
    /// Families withheld from adaptation.
    pub unseen: Vec<ShapeFamily>,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            method: Method::Cl,
            adapter: AdapterKind::Fca,
            tokens: DEFAULT_TOKENS,
            epochs: 16,
            batch_size: 32,
            sparsities: vec![16, 32, 64, 128],
            lr: 1e-3,
            loss: LossConfig::default(),
            unseen: default_unseen(),
        }
    }
}

impl AdaptationConfig {
    pub fn seen(&self) -> Vec<ShapeFamily> {
        seen_families(&self.unseen)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size < 2 {
            return Err(invalid("batch size must be at least 2"));
        }
        if self.tokens == 0 {
            return Err(invalid("at least one learnable token per layer"));
        }
        if self.sparsities.is_empty() || self.sparsities.iter().any(|&s| s < 8) {
            return Err(invalid(format!(
                "every sparsity must be >= 8, got {:?}",
                self.sparsities
            )));
        }
        if self.seen().is_empty() || self.unseen.is_empty() {
            return Err(invalid(
                "the seen set must be nonempty and a proper subset of all families",
            ));
        }
        let n = ShapeFamily::ALL.len();
        let k = self.loss.k_for(n);
        if self.method == Method::Cl && (k == 0 || k >= n) {
            return Err(invalid(format!(
                "k = {k} is out of range for {n} categories"
            )));
        }
        Ok(())
    }
}

/// Trainable parts attached to the frozen teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub fca: Option<FcaStack>,
    pub head: Option<Linear>,
    /// Whether the head participates; FCA layers carry their own flags.
    pub head_enabled: bool,
}

impl Adapter {
    pub fn init(model: &PointEncoder, kind: AdapterKind, tokens: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            AdapterKind::Fca | AdapterKind::TokensOnly => Self {
                fca: Some(FcaStack::init(
                    model,
                    tokens,
                    seed,
                    kind == AdapterKind::Fca,
                )?),
                head: None,
                head_enabled: false,
            },
            AdapterKind::Head => Self {
                fca: None,
                head: Some(Linear::identity(model.config.latent_dim)),
                head_enabled: true,
            },
        })
    }

    pub fn kind(&self) -> AdapterKind {
        match &self.fca {
            Some(s) if s.has_cross_attention() => AdapterKind::Fca,
            Some(_) => AdapterKind::TokensOnly,
            None => AdapterKind::Head,
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.fca.as_ref().map_or(0, FcaStack::num_tokens)
    }

    pub fn attach(&mut self, model: &PointEncoder) -> Result<()> {
        if let Some(s) = &mut self.fca {
            s.attach(model)?;
        }
        if let Some(h) = &self.head {
            if h.in_dim() != model.config.latent_dim || h.out_dim() != model.config.latent_dim {
                return Err(invalid("head does not match the latent dimension"));
            }
            self.head_enabled = true;
        }
        Ok(())
    }

    /// Rolls the model back to the teacher without touching any weight.
    pub fn detach(&mut self) {
        if let Some(s) = &mut self.fca {
            s.detach();
        }
        self.head_enabled = false;
    }

    pub fn encode(&self, model: &PointEncoder, pc: &PointCloud) -> Result<Tensor> {
        encode_with(model, pc, self.fca.as_ref(), self.active_head())
    }

    pub fn encode_all(&self, model: &PointEncoder, clouds: &[PointCloud]) -> Result<Vec<Tensor>> {
        encode_all(model, clouds, self.fca.as_ref(), self.active_head())
    }

    fn active_head(&self) -> Option<&Linear> {
        self.head.as_ref().filter(|_| self.head_enabled)
    }

    /// Rebuilds an adapter from tensors named `fca.*` and `head.*`.
    pub fn from_tensors(model: &PointEncoder, tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let fca = if tensors.keys().any(|k| k.starts_with("fca.")) {
            Some(FcaStack::from_tensors(model, tensors, "fca")?)
        } else {
            None
        };
        let head = match (tensors.get("head.weight"), tensors.get("head.bias")) {
            (Some(w), Some(b)) => Some(Linear {
                weight: w.clone(),
                bias: b.clone(),
            }),
            (None, None) => None,
            _ => return Err(Error::Format("head needs both weight and bias".into())),
        };
        if fca.is_none() && head.is_none() {
            return Err(Error::Format("archive holds no adapter tensors".into()));
        }
        let mut adapter = Self {
            fca,
            head_enabled: head.is_some(),
            head,
        };
        adapter.attach(model)?;
        Ok(adapter)
    }
}

impl Parameters for Adapter {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(s) = &self.fca {
            s.params(&join(prefix, "fca"), out);
        }
        if let Some(h) = &self.head {
            h.params(&join(prefix, "head"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        if let Some(s) = &mut self.fca {
            s.params_mut(&join(prefix, "fca"), out);
        }
        if let Some(h) = &mut self.head {
            h.params_mut(&join(prefix, "head"), out);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub steps: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f32>,
}

/// What the frozen teacher says about one dense cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub dense: Vec<f32>,
    pub pseudo: usize,
    /// Empty unless the method uses complementary labels.
    pub negatives: Vec<usize>,
}

/// Teacher targets for every cloud; category ids are not read.
pub fn teacher_targets(
    teacher: &PointEncoder,
    clouds: &[PointCloud],
    anchors: &AnchorSet,
    cfg: &AdaptationConfig,
) -> Result<Vec<Target>> {
    let k = cfg.loss.k_for(anchors.len());
    encode_all(teacher, clouds, None, None)?
        .into_iter()
        .map(|r| {
            let q = similarity(anchors, r.data())?;
            Ok(Target {
                pseudo: pseudo_label(&q),
                negatives: if cfg.method == Method::Cl {
                    complementary_labels(&q, k)?
                } else {
                    Vec::new()
                },
                dense: r.into_data(),
            })
        })
        .collect()
}

/// Adaptation loss on one batch of already thinned clouds, and its gradient
/// for every adapter tensor.
pub fn batch_gradients(
    teacher: &PointEncoder,
    adapter: &Adapter,
    sparse: &[PointCloud],
    targets: &[&Target],
    anchors: &AnchorSet,
    cfg: &AdaptationConfig,
) -> Result<(f32, BTreeMap<String, Tensor>)> {
    if sparse.len() != targets.len() || sparse.len() < 2 {
        return Err(invalid(format!(
            "{} clouds for {} targets",
            sparse.len(),
            targets.len()
        )));
    }
    let c = anchors.dim();
    let passes = sparse
        .par_iter()
        .map(|pc| student_pass(teacher, adapter, pc))
        .collect::<Result<Vec<_>>>()?;
    let student = Tensor::matrix(
        passes.len(),
        c,
        passes
            .iter()
            .flat_map(|p| p.tape.value(p.rep).data().to_vec())
            .collect(),
    )?;
    let (loss, grad_rows) = batch_loss(student, targets, &anchors.embeddings, cfg)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "adaptation loss",
        });
    }
    let parts = passes
        .into_par_iter()
        .enumerate()
        .map(|(j, p)| {
            let seed_grad = Tensor::matrix(1, c, grad_rows.row(j).to_vec())?;
            let mut g = p.tape.backward_with(p.rep, &seed_grad)?;
            Ok(p.binder.gradients(&p.tape, &mut g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, reduce_gradients(parts, 1.0)))
}

struct StudentPass {
    tape: Tape,
    binder: Binder,
    rep: Var,
}

fn student_pass(model: &PointEncoder, adapter: &Adapter, pc: &PointCloud) -> Result<StudentPass> {
    let grouped = group_cloud(pc, &model.config)?;
    let mut tape = Tape::new();
    let mut binder = Binder::new();
    let vars = model.bind(&mut tape, &mut binder, false);
    let fca = adapter
        .fca
        .as_ref()
        .map(|s| s.bind(&mut tape, &mut binder, "fca", true));
    let head = adapter
        .head
        .as_ref()
        .map(|h| h.bind(&mut tape, &mut binder, "head", true));
    let adapters = AdapterVars {
        fca: fca.as_ref(),
        head: head.as_ref(),
    };
    let rep = vars.represent(&mut tape, &grouped, adapters)?;
    Ok(StudentPass { tape, binder, rep })
}

/// Loss over a batch of student representations; returns the value and its
/// gradient with respect to each representation row.
fn batch_loss(
    student: Tensor,
    targets: &[&Target],
    anchors: &Tensor,
    cfg: &AdaptationConfig,
) -> Result<(f32, Tensor)> {
    let b = targets.len();
    let c = student.cols();
    let mut tape = Tape::new();
    let s = tape.leaf(student, true);
    let dense = Tensor::matrix(
        b,
        c,
        targets
            .iter()
            .flat_map(|t| t.dense.iter().copied())
            .collect(),
    )?;
    let d = tape.constant(dense);
    let e = tape.constant(anchors.clone());
    let q = tape.matmul_nt(s, e)?;
    let tau = cfg.loss.tau;
    let sd = infonce_loss(&mut tape, d, s, tau)?;
    let loss = match cfg.method {
        Method::Cl => {
            let negs: Vec<Vec<usize>> = targets.iter().map(|t| t.negatives.clone()).collect();
            let cl = cl_loss(&mut tape, q, &negs, tau)?;
            total_loss(&mut tape, sd, cl, cfg.loss.lambda)?
        }
        Method::Pl => {
            let labels: Vec<usize> = targets.iter().map(|t| t.pseudo).collect();
            let pl = pl_loss(&mut tape, q, &labels, tau)?;
            total_loss(&mut tape, sd, pl, cfg.loss.lambda)?
        }
        Method::InfonceOnly => sd,
    };
    let mut grads = tape.backward(loss)?;
    let gs = grads.take(s).expect("student rows are trainable");
    Ok((tape.scalar(loss), gs))
}

/// Dense-to-sparse self-distillation of a fresh adapter on `clouds`.
///
/// `clouds` should already be restricted to the seen families. Category ids
/// are never read: targets come from the frozen teacher's dense pass.
pub fn adapt(
    teacher: &PointEncoder,
    clouds: &[PointCloud],
    anchors: &AnchorSet,
    cfg: &AdaptationConfig,
    seed: u64,
) -> Result<(Adapter, AdaptReport)> {
    cfg.validate()?;
    if clouds.len() < 2 {
        return Err(invalid("adaptation needs at least two clouds"));
    }
    if anchors.len() != ShapeFamily::ALL.len() {
        return Err(invalid(format!(
            "expected one anchor per family, got {}",
            anchors.len()
        )));
    }
    let mut adapter = Adapter::init(teacher, cfg.adapter, cfg.tokens, seed)?;
    let mut report = AdaptReport::default();
    if cfg.epochs == 0 {
        adapter.detach();
        return Ok((adapter, report));
    }

    let targets = teacher_targets(teacher, clouds, anchors, cfg)?;

    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = RngStream::new(seed, &format!("adapt/epoch{epoch}"));
        order.shuffle(&mut rng);
        let draws: Vec<(usize, u64)> = order
            .iter()
            .map(|_| {
                (
                    cfg.sparsities[rng.gen_range(0..cfg.sparsities.len())],
                    rng.next_u64(),
                )
            })
            .collect();
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            // A lone trailing sample has no negatives to contrast with.
            if batch.len() < 2 {
                continue;
            }
            let fail = |e: Error| Error::Training(format!("epoch {epoch} batch {bi}: {e}"));
            let offset = bi * cfg.batch_size;
            let sparse = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let (n, s) = draws[offset + j];
                    downsample_uniform(&clouds[i], n.min(clouds[i].len()), s)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(fail)?;
            let batch_targets: Vec<&Target> = batch.iter().map(|&i| &targets[i]).collect();
            let (loss, grads) =
                batch_gradients(teacher, &adapter, &sparse, &batch_targets, anchors, cfg)
                    .map_err(fail)?;
            adam.step(adapter.named_tensors_mut(), &grads)
                .map_err(fail)?;
            total += loss as f64;
            batches += 1;
            report.steps += 1;
        }
        report
            .loss_curve
            .push((total / batches.max(1) as f64) as f32);
    }
    Ok((adapter, report))
}
