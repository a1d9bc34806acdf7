use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use m3col::data::{generate_synthetic, write_dataset, Manifest};
use m3col::eval::CorruptTarget;
use m3col::experiment::{
    evaluate_checkpoint, load_synthetic_config, run_gradcheck_suite, run_training, run_variants,
    write_run, RunConfig, Split, Variant, DEFAULT_TOLERANCE,
};
use m3col::model::Checkpoint;
use m3col::Error;

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "m3col", version, about = "Multimodal mixup-contrastive training and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config and write report.json, curves.csv, checkpoint.json and config.toml.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config value, e.g. --set optim.epochs=50
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on the data named by a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Replace one modality (name or index) or `all` with moment-matched noise.
        #[arg(long, value_name = "MODALITY|all")]
        corrupt: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every loss on a frozen micro-batch.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the ablation variants over several seeds and print mean ± std.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Comma-separated subset of variants; all five by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        threads: Option<usize>,
        /// Also write ablation.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Generate a synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Verify(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(Error::Io { path: path.to_path_buf(), source: e })
}

fn emit_json(text: String, out: Option<&Path>) -> Result<(), Failure> {
    println!("{text}");
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

fn train(config: &Path, seed: Option<u64>, out: Option<&Path>, overrides: &[String]) -> Result<(), Failure> {
    let mut config = RunConfig::load(config, overrides)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let dir = config.resolve_out_dir(out);
    let outcome = run_training(&config)?;
    write_run(&dir, &outcome)?;
    let test = &outcome.report.test.fused;
    println!(
        "{}: {} epochs, seed {}, test acc {:.4}, written to {}",
        config.name,
        config.optim.epochs,
        config.seed,
        test.acc,
        dir.display()
    );
    Ok(())
}

fn parse_corrupt(spec: &str, names: &[String]) -> Result<CorruptTarget, Failure> {
    match spec {
        "all" => Ok(CorruptTarget::All),
        "none" => Ok(CorruptTarget::None),
        _ => names
            .iter()
            .position(|n| n == spec)
            .or_else(|| spec.parse().ok().filter(|&i: &usize| i < names.len()))
            .map(CorruptTarget::Modality)
            .ok_or_else(|| {
                Failure::Run(Error::Config(format!(
                    "unknown modality {spec:?}; expected one of {names:?}, an index, or all"
                )))
            }),
    }
}

fn eval(
    checkpoint: &Path,
    manifest: &Path,
    corrupt: Option<&str>,
    split: &str,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let checkpoint = Checkpoint::load(checkpoint)?;
    let dataset = Manifest::load(manifest)?;
    if dataset.modality_names() != checkpoint.modality_names.as_slice() {
        return Err(Failure::Run(Error::Shape {
            op: "eval",
            left: format!("checkpoint modalities {:?}", checkpoint.modality_names),
            right: format!("manifest modalities {:?}", dataset.modality_names()),
        }));
    }
    let split = match split {
        "test" => Split::Test,
        "train" => Split::Train,
        other => return Err(Failure::Run(Error::Config(format!("unknown split {other:?}")))),
    };
    let target = corrupt.map(|c| parse_corrupt(c, dataset.modality_names())).transpose()?;
    let report = evaluate_checkpoint(&checkpoint, &dataset, split, target, seed)?;
    emit_json(serde_json::to_string_pretty(&report).map_err(Error::from)?, out)
}

fn gradcheck(tol: f64, seed: u64) -> Result<(), Failure> {
    let start = Instant::now();
    let report = run_gradcheck_suite(tol, seed)?;
    println!("{:<34} {:>12} {:>8}  status", "loss", "max_rel_err", "entries");
    for r in &report.rows {
        let status = if r.passed { "ok" } else { "FAIL" };
        println!("{:<34} {:>12.3e} {:>8}  {status}", r.loss, r.max_relative_error, r.entries);
    }
    println!("tolerance {:e}, step {:e}, {:.2}s", report.tolerance, report.step, start.elapsed().as_secs_f64());
    let failures: Vec<&str> = report.failures().iter().map(|r| r.loss.as_str()).collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("gradient check failed for: {}", failures.join(", "))))
    }
}

fn ablate(
    config: &Path,
    seeds: &[u64],
    variants: &[String],
    threads: Option<usize>,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<(), Failure> {
    let config = RunConfig::load(config, overrides)?;
    let variants = if variants.is_empty() {
        Variant::ABLATIONS.to_vec()
    } else {
        variants
            .iter()
            .map(|v| {
                Variant::parse(v)
                    .ok_or_else(|| Failure::Run(Error::Config(format!("unknown variant {v:?}"))))
            })
            .collect::<Result<_, _>>()?
    };
    let threads = threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let table = run_variants(&config, &variants, seeds, threads)?;
    print!("{}", table.to_text());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join("ablation.json");
        let text = serde_json::to_string_pretty(&table).map_err(Error::from)?;
        std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}

fn synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut config = load_synthetic_config(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let dataset = generate_synthetic(&config)?;
    let manifest = write_dataset(out, &dataset)?;
    println!(
        "{} train / {} test samples, {} modalities, {} classes; manifest {}",
        dataset.train.len(),
        dataset.test.len(),
        dataset.train.num_modalities(),
        dataset.num_classes(),
        manifest.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, seed, out, overrides } => train(config, *seed, out.as_deref(), overrides),
        Command::Eval { checkpoint, manifest, corrupt, split, seed, out } => {
            eval(checkpoint, manifest, corrupt.as_deref(), split, *seed, out.as_deref())
        }
        Command::Gradcheck { tol, seed } => gradcheck(*tol, *seed),
        Command::Ablate { config, seeds, variants, threads, out, overrides } => {
            ablate(config, seeds, variants, *threads, out.as_deref(), overrides)
        }
        Command::Synth { config, out, seed } => synth(config, out, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite { .. } => ExitCode::from(EXIT_NUMERIC),
                _ => ExitCode::from(EXIT_USAGE),
            }
        }
    }
}
