//! Adapts a teacher to sparse inputs with complementary-label distillation
//! and compares it with the frozen teacher and the pseudo-label variant.
//!
//!     cargo run --release --example adapt [config.json]
//!
//! The default config takes a few minutes per method on one core.

use sparse_fca::bench::pipeline::{prepare, run_variant, Variant};
use sparse_fca::bench::report::{rows, summarize, to_markdown};
use sparse_fca::bench::{ExperimentConfig, Seeds};
use sparse_fca::distill::Method;

fn main() -> sparse_fca::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?.0,
        None => ExperimentConfig::default(),
    };
    let p = prepare(&cfg, Seeds::uniform(0))?;
    let mut pl = cfg.adapt.clone();
    pl.method = Method::Pl;
    let variants = [
        Variant::teacher(),
        Variant::adapted("pl", pl),
        Variant::adapted("cl", cfg.adapt.clone()),
    ];
    let mut runs = Vec::new();
    for v in &variants {
        let (record, _) = run_variant(&cfg, &p, v, &[cfg.eval.sampler])?;
        if let Some(a) = &record.adapt {
            println!("{}: {} steps, loss {:?}", v.label, a.steps, a.loss_curve);
        }
        if let Some(le) = &record.label_errors {
            println!(
                "{}: at {} points, pseudo-label error {:.3}, true label among {} complementary labels {:.3}",
                v.label,
                le.sparsity.unwrap_or(0),
                le.pseudo_error,
                le.k,
                le.complementary_error
            );
        }
        runs.push(record);
    }
    print!("{}", to_markdown(&summarize(&rows(&runs))));
    Ok(())
}
