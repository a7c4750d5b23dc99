//! Command-line front end: corpus generation, index training, adding,
//! activation, querying and evaluation.
//!
//! Exit codes: 0 success, 2 usage or invalid input (including missing ids),
//! 3 malformed or corrupt files, 4 numeric or internal failures, 5 I/O.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use activeindex::eval::ExperimentConfig;
use activeindex::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "activeindex", version, about = "Active indexing for image copy detection")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Experiment configuration (JSON); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug messages.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// Feature extractor selection, shared by every command that extracts.
#[derive(Args, Debug, Clone)]
pub struct ExtractorArgs {
    /// Extractor weight file; overrides --extractor-seed and --resolution.
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    /// Seed of the randomly initialised extractor.
    #[arg(long)]
    extractor_seed: Option<u64>,
    /// Extractor input resolution.
    #[arg(long)]
    resolution: Option<usize>,
}

/// Activation settings.
#[derive(Args, Debug, Clone)]
pub struct ActivationArgs {
    /// Perturbation strength.
    #[arg(long)]
    alpha: Option<f64>,
    /// Image-loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Optimisation steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Average the loss over random blur and rotation at every step.
    #[arg(long)]
    eot: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural corpus of PPM images and a manifest.
    Gen {
        /// Number of images.
        #[arg(long)]
        count: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an empty index on the features of a corpus.
    Train {
        /// Training corpus directory.
        #[arg(long)]
        corpus: PathBuf,
        /// Index preset: ivfpq, ivfpq_dagger, pq, opq, ivf or lsh.
        #[arg(long)]
        preset: Option<String>,
        /// Output index file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        extractor: ExtractorArgs,
    },
    /// Add every image of a corpus to an index under its manifest id.
    Add {
        /// Index file to extend.
        #[arg(long)]
        index: PathBuf,
        /// Corpus directory.
        #[arg(long)]
        corpus: PathBuf,
        /// Output index file (default: overwrite --index).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        extractor: ExtractorArgs,
    },
    /// Activate indexed images and write them with a per-image CSV.
    Activate {
        /// Index holding the images.
        #[arg(long)]
        index: PathBuf,
        /// Corpus directory of the indexed images.
        #[arg(long)]
        corpus: PathBuf,
        /// Activate only the first N images of the corpus.
        #[arg(long)]
        count: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        activation: ActivationArgs,
        #[command(flatten)]
        extractor: ExtractorArgs,
    },
    /// Print the top-k `id distance` lines for one query.
    Query {
        /// Index file.
        #[arg(long)]
        index: PathBuf,
        /// Query image (PPM).
        #[arg(long, conflicts_with = "feature", required_unless_present = "feature")]
        image: Option<PathBuf>,
        /// Query feature: whitespace-separated floats.
        #[arg(long)]
        feature: Option<PathBuf>,
        /// Results to print.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Cells to probe (default: the index setting).
        #[arg(long)]
        nprobe: Option<usize>,
        #[command(flatten)]
        extractor: ExtractorArgs,
    },
    /// Run an evaluation and write report.json, report.csv, pr_curve.csv
    /// and timing.json.
    ///
    /// Without --index the whole experiment runs on procedural corpora.
    /// With --index, the given query, activated and negative directories
    /// are evaluated against it.
    Eval {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Index preset for a procedural run.
        #[arg(long)]
        preset: Option<String>,
        /// Existing index to evaluate.
        #[arg(long, requires_all = ["queries", "negatives"])]
        index: Option<PathBuf>,
        /// Original images of the positive queries; ids are reference ids.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Activated versions of the positive queries.
        #[arg(long)]
        activated: Option<PathBuf>,
        /// Images absent from the index.
        #[arg(long)]
        negatives: Option<PathBuf>,
        /// Candidates kept per query.
        #[arg(long)]
        k: Option<usize>,
        /// Cells probed per query.
        #[arg(long)]
        nprobe: Option<usize>,
        /// Run passive queries only.
        #[arg(long)]
        passive_only: bool,
        #[command(flatten)]
        activation: ActivationArgs,
        #[command(flatten)]
        extractor: ExtractorArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Train { .. } => "train",
            Command::Add { .. } => "add",
            Command::Activate { .. } => "activate",
            Command::Query { .. } => "query",
            Command::Eval { .. } => "eval",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::NotFound(_) => 2,
        Error::Format { .. } | Error::CorruptIndex(_) | Error::Json(_) => 3,
        Error::Numeric(_) | Error::Internal(_) => 4,
        Error::Io(_) => 5,
    }
}

fn base_config(global: &GlobalArgs) -> activeindex::Result<ExperimentConfig> {
    let mut config = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> activeindex::Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    let config = base_config(&cli.global)?;
    match cli.command {
        Command::Gen { count, size, out } => commands::gen(&config, count, size, &out),
        Command::Train {
            corpus,
            preset,
            out,
            extractor,
        } => commands::train(config, &extractor, &corpus, preset.as_deref(), &out),
        Command::Add {
            index,
            corpus,
            out,
            extractor,
        } => commands::add(config, &extractor, &index, &corpus, out.as_ref().unwrap_or(&index)),
        Command::Activate {
            index,
            corpus,
            count,
            out,
            activation,
            extractor,
        } => commands::activate_cmd(config, &extractor, &activation, &index, &corpus, count, &out),
        Command::Query {
            index,
            image,
            feature,
            k,
            nprobe,
            extractor,
        } => commands::query(config, &extractor, &index, image.as_deref(), feature.as_deref(), k, nprobe),
        Command::Eval {
            out,
            preset,
            index,
            queries,
            activated,
            negatives,
            k,
            nprobe,
            passive_only,
            activation,
            extractor,
        } => commands::eval(
            config,
            commands::EvalArgs {
                out,
                preset,
                index,
                queries,
                activated,
                negatives,
                k,
                nprobe,
                passive_only,
                activation,
                extractor,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let stage = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{stage}]: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
