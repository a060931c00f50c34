//! Runs one named sweep (tokens, modules, sampling, k_negatives, tau or
//! methods) and prints the seed-averaged table.
//!
//!     cargo run --release --example ablation -- tokens [config.json]
//!
//! Full sweeps over three seeds take tens of minutes; the bundled
//! `configs/quick.json` finishes in a few.

use sparse_fca::bench::pipeline::{run_ablation, Ablation};
use sparse_fca::bench::report::{rows, summarize, to_csv, to_markdown};
use sparse_fca::bench::ExperimentConfig;

fn main() -> sparse_fca::Result<()> {
    let mut args = std::env::args().skip(1);
    let ablation: Ablation = args.next().as_deref().unwrap_or("tokens").parse()?;
    let cfg = match args.next() {
        Some(path) => ExperimentConfig::load(path)?.0,
        None => ExperimentConfig::default(),
    };
    let runs = run_ablation(&cfg, ablation, |r| {
        eprintln!(
            "  {} seed {} done in {:.1}s",
            r.variant.label, r.seeds.adapt, r.seconds
        )
    })?;
    let table = rows(&runs);
    print!("{}", to_markdown(&summarize(&table)));
    println!();
    print!("{}", to_csv(&table)?);
    Ok(())
}
