mod commands;
mod config;
mod hooks;
mod png_io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Selective, sensitivity-graded encryption of image regions.
#[derive(Parser)]
#[command(name = "pso-shield", version)]
struct Cli {
    /// System configuration (TOML, or JSON with a .json extension).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate all keys, wrap one key chain per group and publish the key store.
    Setup {
        /// Replace existing key material (invalidates every issued user key).
        #[arg(long)]
        force: bool,
    },
    /// Issue a user key for a set of attributes.
    Register(RegisterArgs),
    /// Post-correct annotations, encrypt an image and store the container.
    Protect(ProtectArgs),
    /// Restore what a user key allows and export a PNG.
    Unlock(UnlockArgs),
    /// Describe a container without any key.
    Inspect {
        container: PathBuf,
        /// Print a JSON summary instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check every container and the key store in a repository.
    Verify {
        /// Repository directory; defaults to the configured one.
        #[arg(long)]
        repository: Option<PathBuf>,
    },
    /// Time encryption and decryption over a corpus and write a CSV report.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RegisterArgs {
    /// User identifier recorded in the roster.
    #[arg(long)]
    user: String,
    /// Attribute to grant; repeat for several. None yields a key that opens nothing.
    #[arg(long = "attr")]
    attributes: Vec<String>,
    /// Where to write the key; defaults to `<user>.s2sk` in the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-register an existing user and overwrite the key file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ProtectArgs {
    /// Lossless input image (PNG).
    #[arg(long)]
    image: PathBuf,
    /// Detector output in the annotation JSON shape.
    #[arg(long)]
    annotations: PathBuf,
    /// Container path; defaults to `<repository>/<image_id>.s2sc`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UnlockArgs {
    container: PathBuf,
    /// User key file. Without one the scrambled image is exported as stored.
    #[arg(long)]
    key: Option<PathBuf>,
    /// Key store to fetch wrapped keys from; defaults to the configured one.
    #[arg(long)]
    key_store: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of `<name>.png` + `<name>.json` pairs; synthetic images otherwise.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of synthetic images.
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    min_side: u32,
    #[arg(long, default_value_t = 768)]
    max_side: u32,
    /// Timed runs per measurement (median reported).
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// CSV destination; printed to stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Setup { force } => commands::setup(config, force),
        Command::Register(a) => commands::register(config, &a.user, &a.attributes, a.out.as_deref(), a.force),
        Command::Protect(a) => commands::protect(config, &a.image, &a.annotations, a.out.as_deref()),
        Command::Unlock(a) => commands::unlock(config, &a.container, a.key.as_deref(), a.key_store.as_deref(), &a.out),
        Command::Inspect { container, json } => commands::inspect(&container, json),
        Command::Verify { repository } => commands::verify(config, repository.as_deref()),
        Command::Bench(a) => commands::bench(
            config,
            &commands::BenchRequest {
                corpus: a.corpus,
                images: a.images,
                seed: a.seed,
                min_side: a.min_side,
                max_side: a.max_side,
                repetitions: a.repetitions,
                csv: a.csv,
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
