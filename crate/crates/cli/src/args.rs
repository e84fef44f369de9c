use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Dependent,
    IndependentBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Marginal,
    PersonaJoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Location,
    Gender,
}

#[derive(Debug, Parser)]
#[command(name = "aegis", version, about = "Simulate content-based attribute inference and suggest obfuscation topics")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// RNG seed for every randomized step.
    #[arg(long, global = true, env = "AEGIS_SEED")]
    pub seed: Option<u64>,
    /// Topic repository file.
    #[arg(long, global = true)]
    pub repo: Option<PathBuf>,
    /// User profile JSON.
    #[arg(long, global = true)]
    pub profile: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// TOML file with defaults for the flags above and engine knobs.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add JSONL posts to the repository, creating it if needed.
    Ingest {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Schema for a new repository.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "persona-joint")]
        mode: ModeArg,
        #[arg(long, default_value_t = 1024)]
        batch_size: usize,
    },
    /// Build the dependent topic tree for the profile.
    Classify {
        /// Only report where these topics are placed.
        #[arg(long, value_delimiter = ',')]
        topic: Vec<String>,
        /// Export every node instead of the user's branch.
        #[arg(long)]
        full: bool,
    },
    /// Run the attack on a topic set.
    Evaluate {
        #[arg(long, value_delimiter = ',', required = true)]
        topics: Vec<String>,
        /// JSON array of previously published groups.
        #[arg(long)]
        timeline: Option<PathBuf>,
    },
    /// Rank obfuscation topics for a draft post.
    Suggest {
        #[arg(long, value_delimiter = ',', required = true)]
        topics: Vec<String>,
        #[arg(long)]
        timeline: Option<PathBuf>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        max_candidates: Option<usize>,
    },
    /// Line-oriented session on stdin/stdout.
    Session {
        /// Queue file, read if present and rewritten on exit.
        #[arg(long)]
        queue: Option<PathBuf>,
        /// Published-groups file, read if present and rewritten on exit.
        #[arg(long)]
        timeline: Option<PathBuf>,
        /// Fixed clock in unix seconds.
        #[arg(long)]
        now: Option<i64>,
    },
    /// Publish every queued post that is due.
    QueueDrain {
        #[arg(long)]
        queue: PathBuf,
        #[arg(long)]
        now: Option<i64>,
        /// Append published posts here as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    Generate {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        out: PathBuf,
        /// Per-topic calibration report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Measure obfuscation cost on a corpus.
    Experiment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        attr: String,
        #[arg(long, conflicts_with = "ks", required_unless_present = "ks")]
        k: Option<usize>,
        /// Several cover sizes, run as a sweep.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long)]
        category: String,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Schema JSON; inferred from the corpus labels when absent.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Persona as attr=value pairs; defaults to the most frequent one.
        #[arg(long, value_delimiter = ',')]
        persona: Vec<String>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Start the local HTTP service.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        /// Directory of static UI files.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Append released posts here as JSON lines.
        #[arg(long)]
        publish: Option<PathBuf>,
    },
}
