//! Pre-trains a teacher on the procedural corpus and shows how its
//! zero-shot accuracy falls as clouds are thinned.
//!
//!     cargo run --release --example pretrain [config.json]

use sparse_fca::bench::pipeline::prepare;
use sparse_fca::bench::{ExperimentConfig, Seeds};
use sparse_fca::distill::{evaluate, CategorySplit};
use sparse_fca::geometry::Sampler;

fn main() -> sparse_fca::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?.0,
        None => ExperimentConfig::default(),
    };
    let p = prepare(&cfg, Seeds::uniform(0))?;
    let report = p.pretrain.as_ref().expect("prepare pre-trains");
    println!("pre-training: {} epochs", report.epochs_run);
    for (e, (loss, acc)) in report
        .loss_curve
        .iter()
        .zip(&report.val_accuracy)
        .enumerate()
    {
        println!("  epoch {e}: loss {loss:.4}, held-out dense accuracy {acc:.3}");
    }

    let sparsities = [16, 32, 64, 128, 256, cfg.data.dense_points];
    for sampler in [Sampler::Uniform, Sampler::KnnPatch] {
        let m = evaluate(
            &p.teacher,
            None,
            &p.corpus.eval,
            &p.anchors,
            &sparsities,
            sampler,
            &cfg.adapt.unseen,
            0,
        )?;
        println!("{} sampler", sampler.name());
        for split in [CategorySplit::Seen, CategorySplit::Unseen] {
            let row: Vec<String> = sparsities
                .iter()
                .map(|&n| format!("{n}:{:.3}", m.accuracy(n, split).unwrap_or(f32::NAN)))
                .collect();
            println!("  {:<7} {}", split.name(), row.join("  "));
        }
    }
    Ok(())
}
