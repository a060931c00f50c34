//! End-to-end runs: corpus, anchors, teacher, adaptation variants, metrics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Seeds};
use crate::alignment::{make_anchors, AnchorSet};
use crate::distill::{
    adapt, evaluate, generate_corpus, label_error_rates, pretrain_teacher, AdaptReport,
    AdaptationConfig, Adapter, AdapterKind, Corpus, LabelErrors, Method, Metrics, PretrainReport,
};
use crate::encoder::PointEncoder;
use crate::error::Result;
use crate::geometry::{Sampler, ShapeFamily};
use crate::numerics::derive_seed;
use crate::params::Parameters;

/// Anchors shared by pre-training, adaptation and evaluation.
pub fn anchors_for(cfg: &ExperimentConfig, seeds: Seeds) -> Result<AnchorSet> {
    let names = ShapeFamily::ALL
        .iter()
        .map(|f| f.name().to_string())
        .collect();
    make_anchors(
        ShapeFamily::ALL.len(),
        cfg.encoder.latent_dim,
        derive_seed(seeds.teacher, "anchors"),
    )?
    .with_names(names)
}

/// A corpus, its anchors and a teacher pre-trained on them.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub seeds: Seeds,
    pub corpus: Corpus,
    pub anchors: AnchorSet,
    pub teacher: PointEncoder,
    pub pretrain: Option<PretrainReport>,
}

pub fn prepare(cfg: &ExperimentConfig, seeds: Seeds) -> Result<Prepared> {
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.data, seeds.data)?;
    let anchors = anchors_for(cfg, seeds)?;
    let (teacher, report) = pretrain_teacher(
        &corpus.train,
        &corpus.val,
        &anchors,
        &cfg.encoder,
        &cfg.pretrain,
        seeds.teacher,
    )?;
    Ok(Prepared {
        seeds,
        corpus,
        anchors,
        teacher,
        pretrain: Some(report),
    })
}

/// One model to score: the frozen teacher, or the teacher plus an adapter
/// trained with `adapt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub adapt: Option<AdaptationConfig>,
}

impl Variant {
    pub fn teacher() -> Self {
        Self {
            label: "teacher".into(),
            adapt: None,
        }
    }

    pub fn adapted(label: impl Into<String>, cfg: AdaptationConfig) -> Self {
        Self {
            label: label.into(),
            adapt: Some(cfg),
        }
    }

    /// Tokens per layer, or 0 when the variant has none.
    pub fn tokens(&self) -> usize {
        match &self.adapt {
            Some(a) if a.adapter != AdapterKind::Head => a.tokens,
            _ => 0,
        }
    }

    /// Complementary labels per sample, or 0 when the loss uses none.
    pub fn k(&self) -> usize {
        match &self.adapt {
            Some(a) if a.method == Method::Cl => a.loss.k_for(ShapeFamily::ALL.len()),
            _ => 0,
        }
    }

    /// Loss temperature, or 0 for the frozen teacher.
    pub fn tau(&self) -> f32 {
        self.adapt.as_ref().map_or(0.0, |a| a.loss.tau)
    }
}

/// Everything measured for one variant under one seed triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seeds: Seeds,
    pub metrics: Vec<Metrics>,
    pub label_errors: Option<LabelErrors>,
    pub adapt: Option<AdaptReport>,
    pub trainable_params: usize,
    pub seconds: f64,
}

impl RunRecord {
    pub fn metrics_for(&self, sampler: Sampler) -> Option<&Metrics> {
        self.metrics.iter().find(|m| m.sampler == Some(sampler))
    }
}

/// Adapts (when the variant asks for it) and evaluates on the eval split.
/// Thinned clouds are seeded from the data seed so every variant sees the
/// same inputs.
pub fn run_variant(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    variant: &Variant,
    samplers: &[Sampler],
) -> Result<(RunRecord, Option<Adapter>)> {
    let start = Instant::now();
    let seeds = prepared.seeds;
    let (adapter, report) = match &variant.adapt {
        Some(a) => {
            let train = prepared.corpus.seen_train(&a.seen());
            let (adapter, report) =
                adapt(&prepared.teacher, &train, &prepared.anchors, a, seeds.adapt)?;
            (Some(adapter), Some(report))
        }
        None => (None, None),
    };
    let record = score(
        cfg,
        prepared,
        variant,
        adapter.as_ref(),
        report,
        samplers,
        start,
    )?;
    Ok((record, adapter))
}

/// Evaluates an already trained (or absent) adapter.
pub fn score(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    variant: &Variant,
    adapter: Option<&Adapter>,
    report: Option<AdaptReport>,
    samplers: &[Sampler],
    start: Instant,
) -> Result<RunRecord> {
    let unseen = variant
        .adapt
        .as_ref()
        .map_or(&cfg.adapt.unseen, |a| &a.unseen);
    let metrics = samplers
        .iter()
        .map(|&s| {
            evaluate(
                &prepared.teacher,
                adapter,
                &prepared.corpus.eval,
                &prepared.anchors,
                &cfg.eval_sparsities(),
                s,
                unseen,
                prepared.seeds.data,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let k = cfg.adapt.loss.k_for(prepared.anchors.len());
    let label_errors = label_error_rates(
        &prepared.teacher,
        adapter,
        &prepared.corpus.eval,
        &prepared.anchors,
        k,
        Some(64),
        prepared.seeds.data,
    )?;
    Ok(RunRecord {
        variant: variant.clone(),
        seeds: prepared.seeds,
        metrics,
        label_errors: Some(label_errors),
        adapt: report,
        trainable_params: adapter.map_or(0, |a| a.num_scalars()),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Named sweeps over the base config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Frozen teacher, `pl` and `cl` at the base settings.
    Methods,
    Tokens,
    Modules,
    Sampling,
    KNegatives,
    Tau,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Methods,
        Ablation::Tokens,
        Ablation::Modules,
        Ablation::Sampling,
        Ablation::KNegatives,
        Ablation::Tau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Methods => "methods",
            Ablation::Tokens => "tokens",
            Ablation::Modules => "modules",
            Ablation::Sampling => "sampling",
            Ablation::KNegatives => "k_negatives",
            Ablation::Tau => "tau",
        }
    }

    pub fn variants(self, base: &AdaptationConfig) -> Vec<Variant> {
        let with = |label: String, f: &dyn Fn(&mut AdaptationConfig)| {
            let mut a = base.clone();
            f(&mut a);
            Variant::adapted(label, a)
        };
        let cl = |a: &mut AdaptationConfig| {
            a.method = Method::Cl;
            a.adapter = AdapterKind::Fca;
        };
        match self {
            Ablation::Methods => vec![
                Variant::teacher(),
                with("pl".into(), &|a| {
                    a.method = Method::Pl;
                    a.adapter = AdapterKind::Fca;
                }),
                with("cl".into(), &cl),
            ],
            Ablation::Tokens => [4, 8, 12, 24]
                .into_iter()
                .map(|m| {
                    with("cl".into(), &|a| {
                        cl(a);
                        a.tokens = m;
                    })
                })
                .collect(),
            Ablation::Modules => vec![
                Variant::teacher(),
                with("infonce+head".into(), &|a| {
                    a.method = Method::InfonceOnly;
                    a.adapter = AdapterKind::Head;
                }),
                with("infonce+tokens".into(), &|a| {
                    a.method = Method::InfonceOnly;
                    a.adapter = AdapterKind::TokensOnly;
                }),
                with("infonce+tokens+ca".into(), &|a| {
                    a.method = Method::InfonceOnly;
                    a.adapter = AdapterKind::Fca;
                }),
                with("cl".into(), &cl),
            ],
            Ablation::Sampling => vec![Variant::teacher(), with("cl".into(), &cl)],
            Ablation::KNegatives => (1..=ShapeFamily::ALL.len() - 1)
                .step_by(2)
                .map(|k| {
                    with("cl".into(), &|a| {
                        cl(a);
                        a.loss.k = Some(k);
                    })
                })
                .collect(),
            Ablation::Tau => [0.03, 0.07, 0.1, 0.2]
                .into_iter()
                .map(|tau| {
                    with("cl".into(), &|a| {
                        cl(a);
                        a.loss.tau = tau;
                    })
                })
                .collect(),
        }
    }

    pub fn samplers(self, base: Sampler) -> Vec<Sampler> {
        match self {
            Ablation::Sampling => vec![Sampler::Uniform, Sampler::KnnPatch],
            _ => vec![base],
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown sweep `{s}`")))
    }
}

/// Runs `ablation` once per sweep seed; `on_run` sees each record as it
/// finishes.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    ablation: Ablation,
    mut on_run: impl FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let variants = ablation.variants(&cfg.adapt);
    let samplers = ablation.samplers(cfg.eval.sampler);
    let mut runs = Vec::new();
    for seed in cfg.sweep_seeds() {
        let prepared = prepare(cfg, Seeds::uniform(seed))?;
        for v in &variants {
            let (record, _) = run_variant(cfg, &prepared, v, &samplers)?;
            on_run(&record);
            runs.push(record);
        }
    }
    Ok(runs)
}
