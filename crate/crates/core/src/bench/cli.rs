//! Command-line front end. `main_with` never panics on bad input; every
//! failure becomes one `error:` line on stderr and a documented exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::config::{ExperimentConfig, Seeds};
use super::pipeline::{anchors_for, run_ablation, run_variant, score, Ablation, Prepared, Variant};
use super::report::{self, MetricsFile};
use super::store;
use crate::distill::{generate_corpus, pretrain_teacher, Corpus, Method, PretrainReport};
use crate::error::{Error, Result};
use crate::geometry::Sampler;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_BAD_CONFIG: i32 = 4;
pub const EXIT_VERSION: i32 = 5;
pub const EXIT_BAD_ARCHIVE: i32 = 6;
pub const EXIT_TRAINING: i32 = 7;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error
  3  missing or unreadable file
  4  invalid config or argument
  5  unsupported archive version
  6  malformed archive or metrics file
  7  training failed or diverged

Failures print one line to stderr: error: code=<n> kind=<kind> message=<text>";

#[derive(Debug, Parser)]
#[command(name = "sparse-fca", version, about = "Sparse point-cloud adaptation benchmark", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long)]
    pub out: PathBuf,
    /// Sets the data, teacher and adaptation seeds at once.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural corpus: one archive per split plus manifest.json.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train the teacher and write teacher.fcaz.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Corpus directory from gen-data; regenerated from the config if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train an adapter on the seen categories; writes fca.fcaz, adapt.json and adapt.csv.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        /// Training point counts, e.g. 16,32,64,128.
        #[arg(long, value_delimiter = ',')]
        sparsities: Option<Vec<usize>>,
    },
    /// Score the teacher, with or without an adapter; writes eval.json and eval.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
        /// Adapter archive from `adapt`; the bare teacher is scored without it.
        #[arg(long)]
        fca: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Row label for the adapter.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        sampler: Option<Sampler>,
        /// Evaluation point counts, e.g. 16,64,128.
        #[arg(long, value_delimiter = ',')]
        sparsities: Option<Vec<usize>>,
    },
    /// Run a named sweep (methods, tokens, modules, sampling, k_negatives, tau) over every sweep seed.
    Ablate {
        name: Ablation,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sampler: Option<Sampler>,
        #[arg(long, value_delimiter = ',')]
        sparsities: Option<Vec<usize>>,
    },
    /// Merge metrics files into report.csv and report.md.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_MISSING_FILE,
        Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownCategory(_) => EXIT_BAD_CONFIG,
        Error::Version(_) => EXIT_VERSION,
        Error::Format(_) | Error::Json(_) => EXIT_BAD_ARCHIVE,
        Error::Training(_) | Error::NonFinite { .. } => EXIT_TRAINING,
        _ => EXIT_INTERNAL,
    }
}

fn kind(code: i32) -> &'static str {
    match code {
        EXIT_MISSING_FILE => "io",
        EXIT_BAD_CONFIG => "config",
        EXIT_VERSION => "version",
        EXIT_BAD_ARCHIVE => "format",
        EXIT_TRAINING => "training",
        EXIT_USAGE => "usage",
        _ => "internal",
    }
}

/// `error: code=<n> kind=<kind> message=<text>` with newlines flattened.
pub fn error_line(code: i32, message: &str) -> String {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error: code={code} kind={} message={flat}", kind(code))
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("bad arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", error_line(EXIT_USAGE, first));
            return EXIT_USAGE;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_line(code, &e.to_string()));
            code
        }
    }
}

struct Loaded {
    cfg: ExperimentConfig,
    source: Option<String>,
}

fn load_config(common: &Common) -> Result<Loaded> {
    let (mut cfg, source) = match &common.config {
        Some(path) => {
            let (cfg, text) = ExperimentConfig::load(path).map_err(|e| with_path(e, path))?;
            (cfg, Some(text))
        }
        None => (ExperimentConfig::default(), None),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = Seeds::uniform(seed);
        cfg.sweep_seeds = vec![seed];
    }
    Ok(Loaded { cfg, source })
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// The corpus from `--data`, or regenerated from the config. A stored corpus
/// brings its own data seed.
fn corpus(cfg: &mut ExperimentConfig, data: Option<&Path>) -> Result<Corpus> {
    match data {
        Some(dir) => {
            let (corpus, manifest) = store::read_corpus(dir).map_err(|e| with_path(e, dir))?;
            cfg.seeds.data = manifest.seed;
            cfg.data = manifest.data;
            Ok(corpus)
        }
        None => generate_corpus(&cfg.data, cfg.seeds.data),
    }
}

fn load_prepared(
    cfg: &mut ExperimentConfig,
    teacher: &Path,
    data: Option<&Path>,
) -> Result<Prepared> {
    let (model, anchors) = store::load_teacher(teacher).map_err(|e| with_path(e, teacher))?;
    cfg.encoder = model.config.clone();
    let corpus = corpus(cfg, data)?;
    Ok(Prepared {
        seeds: cfg.seeds,
        corpus,
        anchors,
        teacher: model,
        pretrain: None,
    })
}

fn write_metrics(out: &Path, stem: &str, file: &MetricsFile) -> Result<()> {
    file.save(out.join(format!("{stem}.json")))?;
    let rows = report::rows(&file.runs);
    fs::write(out.join(format!("{stem}.csv")), report::to_csv(&rows)?)?;
    Ok(())
}

#[derive(Serialize)]
struct PretrainFile<'a> {
    config: &'a ExperimentConfig,
    config_source: &'a Option<String>,
    seeds: Seeds,
    report: &'a PretrainReport,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let Loaded { cfg, .. } = load_config(&common)?;
            fs::create_dir_all(&common.out)?;
            let corpus = generate_corpus(&cfg.data, cfg.seeds.data)?;
            let manifest = store::write_corpus(&common.out, &corpus, &cfg.data)?;
            let counts: Vec<String> = manifest
                .splits
                .iter()
                .map(|s| format!("{}={}", s.split.name(), s.count))
                .collect();
            eprintln!(
                "wrote corpus ({}) to {}",
                counts.join(" "),
                common.out.display()
            );
        }
        Command::Pretrain { common, data } => {
            let Loaded { mut cfg, source } = load_config(&common)?;
            fs::create_dir_all(&common.out)?;
            let corpus = corpus(&mut cfg, data.as_deref())?;
            let anchors = anchors_for(&cfg, cfg.seeds)?;
            let (teacher, report) = pretrain_teacher(
                &corpus.train,
                &corpus.val,
                &anchors,
                &cfg.encoder,
                &cfg.pretrain,
                cfg.seeds.teacher,
            )?;
            store::save_teacher(&common.out.join("teacher.fcaz"), &teacher, &anchors)?;
            let file = PretrainFile {
                config: &cfg,
                config_source: &source,
                seeds: cfg.seeds,
                report: &report,
            };
            write_json(&common.out.join("pretrain.json"), &file)?;
            eprintln!(
                "teacher: {} epochs, val accuracy {:.3}",
                report.epochs_run,
                report.final_accuracy()
            );
        }
        Command::Adapt {
            common,
            teacher,
            data,
            method,
            sparsities,
        } => {
            let Loaded { mut cfg, source } = load_config(&common)?;
            if let Some(m) = method {
                cfg.adapt.method = m;
            }
            if let Some(s) = sparsities {
                cfg.adapt.sparsities = s;
            }
            cfg.validate()?;
            fs::create_dir_all(&common.out)?;
            let prepared = load_prepared(&mut cfg, &teacher, data.as_deref())?;
            let variant = Variant::adapted(cfg.adapt.method.name(), cfg.adapt.clone());
            let (record, adapter) = run_variant(&cfg, &prepared, &variant, &[cfg.eval.sampler])?;
            let adapter = adapter.expect("adapted variants return an adapter");
            store::save_adapter(&common.out.join("fca.fcaz"), &adapter)?;
            eprintln!("adapted in {:.1}s", record.seconds);
            let file = MetricsFile {
                command: "adapt".into(),
                config: cfg,
                config_source: source,
                runs: vec![record],
            };
            write_metrics(&common.out, "adapt", &file)?;
        }
        Command::Eval {
            common,
            teacher,
            fca,
            data,
            method,
            sampler,
            sparsities,
        } => {
            let Loaded { mut cfg, source } = load_config(&common)?;
            if let Some(s) = sampler {
                cfg.eval.sampler = s;
            }
            if let Some(s) = sparsities {
                cfg.eval.sparsities = s;
            }
            if let Some(m) = method {
                cfg.adapt.method = m;
            }
            cfg.validate()?;
            fs::create_dir_all(&common.out)?;
            let prepared = load_prepared(&mut cfg, &teacher, data.as_deref())?;
            let adapter = match &fca {
                Some(path) => Some(
                    store::load_adapter(path, &prepared.teacher).map_err(|e| with_path(e, path))?,
                ),
                None => None,
            };
            let variant = match &adapter {
                Some(a) => {
                    let mut ac = cfg.adapt.clone();
                    ac.adapter = a.kind();
                    if a.num_tokens() > 0 {
                        ac.tokens = a.num_tokens();
                    }
                    Variant::adapted(ac.method.name(), ac)
                }
                None => Variant::teacher(),
            };
            let record = score(
                &cfg,
                &prepared,
                &variant,
                adapter.as_ref(),
                None,
                &[cfg.eval.sampler],
                Instant::now(),
            )?;
            let file = MetricsFile {
                command: "eval".into(),
                config: cfg,
                config_source: source,
                runs: vec![record],
            };
            write_metrics(&common.out, "eval", &file)?;
        }
        Command::Ablate {
            name,
            common,
            sampler,
            sparsities,
        } => {
            let Loaded { mut cfg, source } = load_config(&common)?;
            if let Some(s) = sampler {
                cfg.eval.sampler = s;
            }
            if let Some(s) = sparsities {
                cfg.eval.sparsities = s;
            }
            cfg.validate()?;
            fs::create_dir_all(&common.out)?;
            let runs = run_ablation(&cfg, name, |r| {
                eprintln!(
                    "{} seed={} m={} k={} tau={} ({:.1}s)",
                    r.variant.label,
                    r.seeds.adapt,
                    r.variant.tokens(),
                    r.variant.k(),
                    r.variant.tau(),
                    r.seconds
                )
            })?;
            let file = MetricsFile {
                command: format!("ablate {}", name.name()),
                config: cfg,
                config_source: source,
                runs,
            };
            let stem = format!("ablate_{}", name.name());
            write_metrics(&common.out, &stem, &file)?;
            let md = report::to_markdown(&report::summarize(&report::rows(&file.runs)));
            fs::write(common.out.join(format!("{stem}.md")), md)?;
        }
        Command::Report { files, out } => {
            let mut runs = Vec::new();
            for path in &files {
                runs.extend(
                    MetricsFile::load(path)
                        .map_err(|e| with_path(e, path))?
                        .runs,
                );
            }
            fs::create_dir_all(&out)?;
            let rows = report::rows(&runs);
            fs::write(out.join("report.csv"), report::to_csv(&rows)?)?;
            fs::write(
                out.join("report.md"),
                report::to_markdown(&report::summarize(&rows)),
            )?;
        }
    }
    Ok(())
}
