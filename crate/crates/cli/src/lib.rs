//! Subcommands of the `rtf` binary. Each writes its `key=value` log lines to
//! the given writer so tests can run them in-process.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

mod bench;
mod count;
mod deblur;
mod gen_data;
mod pad;
mod train;

pub use deblur::deblur_image;
pub use pad::{padded_len, reflect_pad};
pub use train::{read_config, RunConfig};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// Consulted when no `--seed` is given.
pub const SEED_ENV: &str = "RTF_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "rtf",
    version,
    about = "Real-time motion deblurring: inference, training, accounting and benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deblur one image or every .ppm in a directory.
    Deblur(DeblurArgs),
    /// Train on a paired dataset directory.
    Train(TrainArgs),
    /// Print exact parameter and MAC counts.
    Count(CountArgs),
    /// Measure eval-mode inference latency.
    Bench(BenchArgs),
    /// Build a blur/sharp dataset from sharp images or synthetic scenes.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct DeblurArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// An image, or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// A file for a single input, a directory otherwise.
    #[arg(long)]
    pub output: PathBuf,
    /// Sharp references: a file for a single input, a directory with matching names otherwise.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with `blur/` and `sharp/` subdirectories.
    #[arg(long)]
    pub data: PathBuf,
    /// `key=value` file with network and training keys. `total_steps` sets the
    /// schedule length when a run is split across several invocations.
    #[arg(long)]
    pub config: PathBuf,
    /// Total number of optimizer steps, counted from the start of training.
    #[arg(long)]
    pub steps: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write `--out` after every this many steps; 0 writes only at the end.
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: u64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// Network config, or a training config whose training keys are ignored.
    /// The calibrated default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub h: usize,
    #[arg(long, default_value_t = 256)]
    pub w: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub h: usize,
    #[arg(long, default_value_t = 256)]
    pub w: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["sharp", "synthetic"])))]
pub struct GenDataArgs {
    /// Directory of sharp .ppm images.
    #[arg(long)]
    pub sharp: Option<PathBuf>,
    /// Generate this many synthetic sharp scenes instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side of the synthetic scenes.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "linear:len=9,angle=30")]
    pub kernel: String,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// An error the user caused by how the command was invoked.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Deblur(a) => deblur::run(&a, out),
        Command::Train(a) => train::run(&a, out),
        Command::Count(a) => count::run(&a, out),
        Command::Bench(a) => bench::run(&a, out),
        Command::GenData(a) => gen_data::run(&a, out),
    }
}

/// 3 for file problems, 4 for NaN or infinity, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rtf_core::Error>() {
            return match e {
                rtf_core::Error::Io { .. } | rtf_core::Error::Format { .. } => EXIT_IO,
                rtf_core::Error::NonFinite(_) => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

/// The whole error chain on one line.
pub fn diagnostic(err: &anyhow::Error) -> String {
    let text = format!("error: {err:#}");
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `--seed`, else `RTF_SEED`, else `fallback`.
pub(crate) fn resolve_seed(flag: Option<u64>, fallback: u64) -> anyhow::Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

/// Sorted `.ppm` files of a directory.
pub(crate) fn list_images(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry.with_context(|| format!("reading {}", dir.display()))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == rtf_core::train::IMAGE_EXT) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Refuse to overwrite an input.
pub(crate) fn ensure_distinct(input: &Path, output: &Path) -> anyhow::Result<()> {
    if let (Ok(a), Ok(b)) = (input.canonicalize(), output.canonicalize()) {
        if a == b {
            return Err(usage(format!("output {} would overwrite an input", output.display())));
        }
    }
    Ok(())
}

pub(crate) fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
