use sparse_fca::alignment::make_anchors;
use sparse_fca::bench::checkpoint;
use sparse_fca::bench::pipeline::{Ablation, Variant};
use sparse_fca::distill::{
    adapt, generate_corpus, AdaptationConfig, AdapterKind, DataConfig, Method,
};
use sparse_fca::encoder::{encode, EncoderConfig, PointEncoder};
use sparse_fca::geometry::PointCloud;
use sparse_fca::params::Parameters;

fn small() -> (
    PointEncoder,
    Vec<PointCloud>,
    sparse_fca::alignment::AnchorSet,
    AdaptationConfig,
) {
    let enc = EncoderConfig {
        groups: 8,
        group_size: 8,
        dim: 16,
        blocks: 2,
        heads: 2,
        latent_dim: 16,
        ffn_mult: 2,
    };
    let data = DataConfig {
        dense_points: 128,
        train_per_category: 3,
        val_per_category: 1,
        eval_per_category: 1,
        ..DataConfig::default()
    };
    let corpus = generate_corpus(&data, 4).unwrap();
    let cfg = AdaptationConfig {
        tokens: 3,
        epochs: 2,
        batch_size: 4,
        ..AdaptationConfig::default()
    };
    let train = corpus.seen_train(&cfg.seen());
    (
        PointEncoder::init(&enc, 1).unwrap(),
        train,
        make_anchors(10, 16, 2).unwrap(),
        cfg,
    )
}

#[test]
fn ground_truth_labels_never_reach_the_loss() {
    let (teacher, train, anchors, cfg) = small();
    let blind: Vec<PointCloud> = train
        .iter()
        .enumerate()
        .map(|(i, pc)| PointCloud {
            category_id: (i * 7) % 3,
            ..pc.clone()
        })
        .collect();
    for method in [Method::Cl, Method::Pl, Method::InfonceOnly] {
        let cfg = AdaptationConfig {
            method,
            ..cfg.clone()
        };
        let (a, ra) = adapt(&teacher, &train, &anchors, &cfg, 9).unwrap();
        let (b, rb) = adapt(&teacher, &blind, &anchors, &cfg, 9).unwrap();
        assert_eq!(a, b, "{method:?}");
        assert_eq!(ra, rb);
    }
}

#[test]
fn adaptation_leaves_the_teacher_untouched() {
    let (teacher, train, anchors, cfg) = small();
    let before = checkpoint::to_bytes(&teacher.named_tensors()).unwrap();
    let (adapter, report) = adapt(&teacher, &train, &anchors, &cfg, 3).unwrap();
    assert!(report.steps > 0);
    assert_eq!(
        checkpoint::to_bytes(&teacher.named_tensors()).unwrap(),
        before
    );
    // The adapter did learn something.
    let fresh =
        sparse_fca::distill::Adapter::init(&teacher, AdapterKind::Fca, cfg.tokens, 3).unwrap();
    assert_ne!(adapter, fresh);
}

#[test]
fn adaptation_is_deterministic_per_seed() {
    let (teacher, train, anchors, cfg) = small();
    let (a, ra) = adapt(&teacher, &train, &anchors, &cfg, 5).unwrap();
    let (b, rb) = adapt(&teacher, &train, &anchors, &cfg, 5).unwrap();
    let (c, _) = adapt(&teacher, &train, &anchors, &cfg, 6).unwrap();
    assert_eq!(
        checkpoint::to_bytes(&a.named_tensors()).unwrap(),
        checkpoint::to_bytes(&b.named_tensors()).unwrap()
    );
    assert_eq!(ra, rb);
    assert_ne!(a, c);
}

#[test]
fn detached_adapter_reproduces_the_teacher_exactly() {
    let (teacher, train, anchors, cfg) = small();
    let (mut adapter, _) = adapt(&teacher, &train, &anchors, &cfg, 3).unwrap();
    adapter.detach();
    for pc in &train {
        assert!(adapter
            .encode(&teacher, pc)
            .unwrap()
            .bit_eq(&encode(&teacher, pc, None).unwrap()));
    }
}

#[test]
fn zero_epochs_returns_a_detached_adapter() {
    let (teacher, train, anchors, cfg) = small();
    let (adapter, report) = adapt(
        &teacher,
        &train,
        &anchors,
        &AdaptationConfig { epochs: 0, ..cfg },
        3,
    )
    .unwrap();
    assert_eq!(report.steps, 0);
    let pc = &train[0];
    assert!(adapter
        .encode(&teacher, pc)
        .unwrap()
        .bit_eq(&encode(&teacher, pc, None).unwrap()));
}

#[test]
fn every_adapter_kind_trains() {
    let (teacher, train, anchors, cfg) = small();
    for adapter in [AdapterKind::Fca, AdapterKind::TokensOnly, AdapterKind::Head] {
        let cfg = AdaptationConfig {
            adapter,
            method: Method::InfonceOnly,
            epochs: 1,
            ..cfg.clone()
        };
        let (a, report) = adapt(&teacher, &train, &anchors, &cfg, 3).unwrap();
        assert_eq!(a.kind(), adapter);
        assert!(report.loss_curve.iter().all(|l| l.is_finite()));
    }
}

#[test]
fn sweeps_have_the_documented_structure() {
    let base = AdaptationConfig::default();
    let tokens: Vec<usize> = Ablation::Tokens
        .variants(&base)
        .iter()
        .map(Variant::tokens)
        .collect();
    assert_eq!(tokens, vec![4, 8, 12, 24]);

    let modules = Ablation::Modules.variants(&base);
    let labels: Vec<&str> = modules.iter().map(|v| v.label.as_str()).collect();
    assert_eq!(
        labels,
        [
            "teacher",
            "infonce+head",
            "infonce+tokens",
            "infonce+tokens+ca",
            "cl"
        ]
    );
    let kinds: Vec<Option<AdapterKind>> = modules
        .iter()
        .map(|v| v.adapt.as_ref().map(|a| a.adapter))
        .collect();
    assert_eq!(
        kinds,
        [
            None,
            Some(AdapterKind::Head),
            Some(AdapterKind::TokensOnly),
            Some(AdapterKind::Fca),
            Some(AdapterKind::Fca)
        ]
    );

    let ks: Vec<usize> = Ablation::KNegatives
        .variants(&base)
        .iter()
        .map(Variant::k)
        .collect();
    assert_eq!(ks, vec![1, 3, 5, 7, 9]);
    assert_eq!(
        Ablation::Sampling
            .samplers(sparse_fca::geometry::Sampler::Uniform)
            .len(),
        2
    );
    assert!("bogus".parse::<Ablation>().is_err());
    for a in Ablation::ALL {
        assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        for v in a.variants(&base) {
            if let Some(cfg) = &v.adapt {
                cfg.validate().unwrap();
            }
        }
    }
}
