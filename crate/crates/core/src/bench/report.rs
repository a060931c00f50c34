//! Metrics files and the CSV / markdown tables rendered from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::RunRecord;
use crate::distill::CategorySplit;
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 9] = [
    "method", "sampler", "m", "k", "tau", "sparsity", "split", "accuracy", "seed",
];

/// What every command that measures something writes: the resolved config,
/// the document it was parsed from, and one record per (variant, seeds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub command: String,
    pub config: ExperimentConfig,
    /// Config text exactly as given, when it came from a file.
    pub config_source: Option<String>,
    pub runs: Vec<RunRecord>,
}

impl MetricsFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub method: String,
    pub sampler: String,
    pub m: usize,
    pub k: usize,
    pub tau: f32,
    pub sparsity: usize,
    pub split: String,
    pub accuracy: f32,
    pub seed: u64,
}

impl Row {
    fn key(&self) -> (&str, &str, usize, usize, u32, &str) {
        (
            &self.method,
            &self.sampler,
            self.m,
            self.k,
            self.tau.to_bits(),
            &self.split,
        )
    }
}

/// Flattens runs into rows, sorted so the output does not depend on the
/// order runs or files were given in. The seed column is the adaptation seed.
pub fn rows(runs: &[RunRecord]) -> Vec<Row> {
    let mut out = Vec::new();
    for run in runs {
        for metrics in &run.metrics {
            let sampler = metrics.sampler.map_or("-", |s| s.name());
            for cell in &metrics.cells {
                out.push(Row {
                    method: run.variant.label.clone(),
                    sampler: sampler.to_string(),
                    m: run.variant.tokens(),
                    k: run.variant.k(),
                    tau: run.variant.tau(),
                    sparsity: cell.sparsity,
                    split: cell.split.name().to_string(),
                    accuracy: cell.accuracy,
                    seed: run.seeds.adapt,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        (a.key(), a.sparsity, a.seed)
            .cmp(&(b.key(), b.sparsity, b.seed))
            .then(a.accuracy.total_cmp(&b.accuracy))
    });
    out
}

pub fn to_csv(rows: &[Row]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_csv(text: &str) -> Result<Vec<Row>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

/// One table line: a configuration and split, with seed-averaged accuracy
/// per sparsity.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryLine {
    pub method: String,
    pub sampler: String,
    pub m: usize,
    pub k: usize,
    pub tau: f32,
    pub split: String,
    pub cells: BTreeMap<usize, Stat>,
}

impl SummaryLine {
    /// Mean over sparsities of the per-sparsity means.
    pub fn mean(&self) -> f64 {
        self.cells.values().map(|s| s.mean).sum::<f64>() / self.cells.len().max(1) as f64
    }

    pub fn at(&self, sparsity: usize) -> Option<f64> {
        self.cells.get(&sparsity).map(|s| s.mean)
    }
}

pub fn summarize(rows: &[Row]) -> Vec<SummaryLine> {
    let mut groups: BTreeMap<_, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.method.clone(),
            r.sampler.clone(),
            r.m,
            r.k,
            r.tau.to_bits(),
            r.split.clone(),
        );
        groups
            .entry(key)
            .or_default()
            .entry(r.sparsity)
            .or_default()
            .push(r.accuracy as f64);
    }
    groups
        .into_iter()
        .map(|((method, sampler, m, k, tau, split), cells)| SummaryLine {
            method,
            sampler,
            m,
            k,
            tau: f32::from_bits(tau),
            split,
            cells: cells.into_iter().map(|(n, v)| (n, Stat::of(&v))).collect(),
        })
        .collect()
}

/// Finds the summary line for a method / token count / split.
pub fn find<'a>(
    lines: &'a [SummaryLine],
    method: &str,
    m: usize,
    split: CategorySplit,
) -> Option<&'a SummaryLine> {
    lines
        .iter()
        .find(|l| l.method == method && l.m == m && l.split == split.name())
}

/// Markdown table of seed means (with std and seed count) per sparsity.
pub fn to_markdown(lines: &[SummaryLine]) -> String {
    let sparsities: Vec<usize> = {
        let mut s: Vec<usize> = lines.iter().flat_map(|l| l.cells.keys().copied()).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut out = String::from("| method | sampler | m | k | tau | split |");
    for n in &sparsities {
        let _ = write!(out, " N={n} |");
    }
    out.push_str(" mean | seeds |\n|");
    for _ in 0..sparsities.len() + 8 {
        out.push_str("---|");
    }
    out.push('\n');
    for l in lines {
        let _ = write!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            l.method, l.sampler, l.m, l.k, l.tau, l.split
        );
        for n in &sparsities {
            match l.cells.get(n) {
                Some(s) => {
                    let _ = write!(out, " {:.1} ± {:.1} |", 100.0 * s.mean, 100.0 * s.std);
                }
                None => out.push_str(" - |"),
            }
        }
        let seeds = l.cells.values().map(|s| s.n).max().unwrap_or(0);
        let _ = writeln!(out, " {:.1} | {seeds} |", 100.0 * l.mean());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::Seeds;
    use crate::bench::pipeline::Variant;
    use crate::distill::{AccuracyCell, AdaptationConfig, Metrics};
    use crate::geometry::Sampler;

    fn run(label: &str, seed: u64, acc: [f32; 2]) -> RunRecord {
        let cells = [
            (16, CategorySplit::Seen, acc[0]),
            (16, CategorySplit::Unseen, acc[1]),
        ]
        .into_iter()
        .map(|(sparsity, split, accuracy)| AccuracyCell {
            sparsity,
            split,
            correct: 0,
            total: 0,
            accuracy,
        })
        .collect();
        let variant = if label == "teacher" {
            Variant::teacher()
        } else {
            Variant::adapted(label, AdaptationConfig::default())
        };
        RunRecord {
            variant,
            seeds: Seeds::uniform(seed),
            metrics: vec![Metrics {
                sampler: Some(Sampler::Uniform),
                cells,
                label_errors: None,
                loss_curve: Vec::new(),
            }],
            label_errors: None,
            adapt: None,
            trainable_params: 0,
            seconds: 0.0,
        }
    }

    #[test]
    fn csv_has_the_stable_header_and_round_trips() {
        let r = rows(&[run("cl", 0, [0.5, 0.25])]);
        let text = to_csv(&r).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "cl,uniform,12,5,0.07,16,seen,0.5,0"
        );
        assert_eq!(from_csv(&text).unwrap(), r);
    }

    #[test]
    fn teacher_rows_carry_no_adapter_settings() {
        let r = rows(&[run("teacher", 3, [0.5, 0.25])]);
        assert!(r
            .iter()
            .all(|row| row.m == 0 && row.k == 0 && row.tau == 0.0 && row.seed == 3));
    }

    #[test]
    fn merging_is_order_independent() {
        let a = run("cl", 0, [0.5, 0.25]);
        let b = run("teacher", 1, [0.75, 0.5]);
        let c = run("cl", 1, [0.25, 0.75]);
        let one = to_csv(&rows(&[a.clone(), b.clone(), c.clone()])).unwrap();
        let two = to_csv(&rows(&[c, a, b])).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn summary_averages_over_seeds() {
        let lines = summarize(&rows(&[
            run("cl", 0, [0.5, 0.25]),
            run("cl", 1, [0.25, 0.75]),
        ]));
        let unseen = find(&lines, "cl", 12, CategorySplit::Unseen).unwrap();
        assert_eq!(unseen.at(16), Some(0.5));
        assert_eq!(unseen.cells[&16].n, 2);
        assert!((unseen.cells[&16].std - 0.125f64.sqrt()).abs() < 1e-12);
        let md = to_markdown(&lines);
        assert!(md.starts_with("| method | sampler | m | k | tau | split | N=16 | mean | seeds |"));
        assert_eq!(md.lines().count(), 2 + 2);
    }

    #[test]
    fn stat_of_single_value_has_zero_spread() {
        assert_eq!(
            Stat::of(&[0.5]),
            Stat {
                mean: 0.5,
                std: 0.0,
                n: 1
            }
        );
    }
}
