//! Finite-difference check of the adaptation gradient through learnable
//! tokens, the learnable block's projections and FFN, the frozen encoder
//! and the combined loss.
//!
//!     cargo run --release --example gradient_check

use std::collections::BTreeMap;

use sparse_fca::alignment::make_anchors;
use sparse_fca::distill::{
    check_adaptation_gradients, teacher_targets, AdaptationConfig, Adapter, AdapterKind,
};
use sparse_fca::encoder::{EncoderConfig, PointEncoder};
use sparse_fca::geometry::{downsample_uniform, sample_shape, ShapeFamily, ShapeSpec};
use sparse_fca::numerics::GradCheckOptions;

const PROBED: [&str; 6] = [
    "tokens",
    "attn.q.weight",
    "attn.k.weight",
    "attn.v.weight",
    "ffn.fc1.weight",
    "ffn.fc2.weight",
];

fn main() -> sparse_fca::Result<()> {
    let enc = EncoderConfig::default();
    let teacher = PointEncoder::init(&enc, 0)?;
    let anchors = make_anchors(ShapeFamily::ALL.len(), enc.latent_dim, 0)?;
    let cfg = AdaptationConfig::default();
    let adapter = Adapter::init(&teacher, AdapterKind::Fca, cfg.tokens, 1)?;

    let dense = ["sphere", "cube", "cylinder", "torus"]
        .iter()
        .enumerate()
        .map(|(i, f)| sample_shape(&ShapeSpec::new(f, 0.15, 0.01)?, 512, i as u64))
        .collect::<sparse_fca::Result<Vec<_>>>()?;
    let targets = teacher_targets(&teacher, &dense, &anchors, &cfg)?;
    let sparse = dense
        .iter()
        .map(|pc| downsample_uniform(pc, 32, 9))
        .collect::<sparse_fca::Result<Vec<_>>>()?;
    let refs: Vec<_> = targets.iter().collect();

    // f32 forward passes put the loss's rounding floor near 1e-6, so only
    // coordinates well above it are informative.
    let opts = GradCheckOptions {
        eps: 1e-2,
        tolerance: 1e-2,
        max_coords: Some(96),
        richardson: true,
        min_grad: 5e-3,
        seed: 0,
    };
    let select = |n: &str| PROBED.iter().any(|s| n.ends_with(s));
    let report = check_adaptation_gradients(
        &teacher, &adapter, &sparse, &refs, &anchors, &cfg, select, &opts,
    )?;

    let mut per_kind: BTreeMap<&str, (usize, f32)> = BTreeMap::new();
    for c in &report.coords {
        let kind = PROBED
            .iter()
            .find(|s| c.name.ends_with(*s))
            .expect("selected");
        let e = per_kind.entry(kind).or_default();
        e.0 += 1;
        e.1 = e.1.max(c.rel_err);
    }
    for (kind, (n, worst)) in &per_kind {
        println!("{kind:<16} {n:>3} coordinates, max relative error {worst:.2e}");
    }
    println!(
        "{} coordinates in total, max relative error {:.2e}, pass: {}",
        report.coords.len(),
        report.max_rel_err,
        report.pass
    );
    Ok(())
}
