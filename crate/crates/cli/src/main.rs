//! `hybridhash` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybridhash::config::{RunConfig, TrainingConfig};
use hybridhash::data::{generate_splits, DatasetSplits, Split};
use hybridhash::model::Checkpoint;
use hybridhash::pipeline::{encode_checkpoint, evaluate, evaluate_checkpoint, run_gradcheck, run_training, StepRecord};
use hybridhash::retrieval::{run_retrieval, CodeDatabase};
use hybridhash::{Error, Result};

/// Exit status when a gradient check runs but exceeds its tolerance.
const GRADCHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "hybridhash", version, about = "Deep hashing with hybrid convolution/attention encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes the TSV loss log and checkpoints named in the config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint up to `training.steps` total steps.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Encode one dataset split to an HHC1 code file.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        /// Directory holding train.hhds, query.hhds and database.hhds.
        #[arg(long)]
        dataset: PathBuf,
        /// Fail unless the checkpoint emits this many bits.
        #[arg(long)]
        bits: Option<usize>,
        /// Pre-crop resize side; defaults to 8/7 of the model's image size.
        #[arg(long)]
        resize_to: Option<usize>,
    },
    /// Rank the database for every query; writes one TSV line per query.
    Retrieve {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        database: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MAP@k of query codes against database codes.
    Eval {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        database: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check of the configured model in 64-bit.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a procedural multi-class dataset directory.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("HH_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("HH_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

/// Returns `Ok(false)` when a command ran but its check failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train { config, resume } => {
            let cfg = RunConfig::from_file(&config)?;
            let summary = run_training(&cfg, resume.as_deref())?;
            if cfg.paths.log.is_none() {
                println!("{}", StepRecord::TSV_HEADER);
                for r in &summary.records {
                    println!("{}", r.to_tsv());
                }
            }
            let last = summary.records.last().map_or(f32::NAN, |r| r.loss);
            eprintln!(
                "trained to step {} (final loss {last})",
                summary.checkpoint.step
            );
            if let Some(report) = evaluate_checkpoint(&cfg, &summary.checkpoint)? {
                println!("{report}");
            }
        }
        Command::Encode {
            checkpoint,
            split,
            out,
            dataset,
            bits,
            resize_to,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = DatasetSplits::load_split(&dataset, split)?;
            let resize = resize_to.unwrap_or_else(|| TrainingConfig::resize_for(ckpt.config.image_size));
            let codes = encode_checkpoint(&ckpt, &data, resize, bits)?;
            codes.save(&out)?;
            eprintln!("wrote {} {}-bit codes to {}", codes.len(), codes.bits(), out.display());
        }
        Command::Retrieve { queries, database, k, out } => {
            let run = run_retrieval(&CodeDatabase::load(&queries)?, &CodeDatabase::load(&database)?, k)?;
            let mut text = String::from("query\tranked_ids\tdistances\n");
            for q in &run.queries {
                let ids: Vec<String> = q.ranked.iter().map(u64::to_string).collect();
                let dist: Vec<String> = q.distances.iter().map(u32::to_string).collect();
                text.push_str(&format!("{}\t{}\t{}\n", q.query_id, ids.join(","), dist.join(",")));
            }
            match out {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Eval { queries, database, k, out } => {
            let report = evaluate(&CodeDatabase::load(&queries)?, &CodeDatabase::load(&database)?, k)?;
            println!("{report}");
            if let Some(path) = out {
                write_text(&path, &format!("{report}\n"))?;
            }
        }
        Command::Gradcheck { config } => {
            let report = run_gradcheck(&RunConfig::from_file(&config)?)?;
            println!("{report}");
            return Ok(report.passed());
        }
        Command::Synth {
            classes,
            per_class,
            size,
            seed,
            out,
        } => {
            let splits = generate_splits(classes, per_class, size, seed)?;
            splits.save_dir(&out)?;
            eprintln!(
                "wrote {} train, {} query and {} database images to {}",
                splits.train.len(),
                splits.query.len(),
                splits.database.len(),
                out.display()
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(GRADCHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
