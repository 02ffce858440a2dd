mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cotsrf_core::collect::CorpusRole;
use cotsrf_core::divergence::DecisionRule;

#[derive(Parser)]
#[command(name = "cotsrf", version, about = "Fingerprint a model by its reasoning style and verify suspects")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a CoT query set from a question file or synthetic questions.
    BuildQueries(BuildQueries),
    /// Collect responses from a chat-completion endpoint.
    Collect(Collect),
    /// Simulated model endpoints.
    #[command(subcommand)]
    Stylesim(Stylesim),
    /// Train the CoT feature extractor.
    Train(Train),
    /// Compare analytic and numeric gradients of a model.
    GradCheck(GradCheck),
    /// Verify a suspect corpus against the source.
    Verify(Verify),
    /// Run simulator experiments.
    Evaluate(Evaluate),
}

#[derive(Args)]
struct BuildQueries {
    /// JSONL questions, one `{"id"?, "text"}` per line.
    #[arg(long, conflicts_with = "synthetic")]
    questions: Option<PathBuf>,
    /// Generate this many synthetic word problems instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Number of queries I.
    #[arg(long)]
    count: usize,
    /// Extra disjoint queries for a holdout set.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CoT prompt appended to every question.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the holdout set (default: `<out stem>.holdout.jsonl`).
    #[arg(long)]
    holdout_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Source,
    Benign,
    Suspect,
}

impl From<RoleArg> for CorpusRole {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Source => CorpusRole::Source,
            RoleArg::Benign => CorpusRole::Benign,
            RoleArg::Suspect => CorpusRole::Suspect,
        }
    }
}

#[derive(Args)]
struct Collect {
    /// Endpoint config JSON.
    #[arg(long)]
    endpoint: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum)]
    role: RoleArg,
    /// Samples per query J (suspects always use 1).
    #[arg(long, default_value_t = 4)]
    samples: u32,
    /// Sampling temperature; ignored for suspects.
    #[arg(long, default_value_t = 1.5)]
    temperature: f64,
    #[arg(long)]
    out: PathBuf,
    /// Continue an interrupted collection into `--out`.
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Allow source collections with J <= 3.
    #[arg(long)]
    allow_few_samples: bool,
}

#[derive(Subcommand)]
enum Stylesim {
    /// Serve a profile over the chat-completion protocol.
    Serve {
        /// Built-in family id or profile JSON path.
        #[arg(long)]
        profile: String,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Fraction of cells answered with empty text.
        #[arg(long, default_value_t = 0.0)]
        empty_rate: f64,
    },
    /// Write a drifted copy of a profile.
    Perturb {
        #[arg(long)]
        profile: String,
        #[arg(long)]
        drift: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a built-in profile as JSON.
    Export {
        #[arg(long)]
        profile: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a corpus in-process, without HTTP.
    Generate {
        #[arg(long)]
        profile: String,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long, default_value_t = 4)]
        samples: u32,
        #[arg(long, default_value_t = 1.5)]
        temperature: f64,
        /// Override the profile's sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    source: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    benign: Vec<PathBuf>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 5.0)]
    margin: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 4096)]
    features: usize,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    output: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-epoch loss log as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheck {
    #[arg(long)]
    model: PathBuf,
    /// Source corpus for triplets (default: simulator data).
    #[arg(long, requires = "benign")]
    source: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    benign: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 5.0)]
    margin: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    SmallKlIsMatch,
    LargeKlIsMatch,
}

impl From<RuleArg> for DecisionRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::SmallKlIsMatch => DecisionRule::SmallKlIsMatch,
            RuleArg::LargeKlIsMatch => DecisionRule::LargeKlIsMatch,
        }
    }
}

#[derive(Args)]
struct Verify {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    suspect: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Threshold; otherwise looked up by `--scenario`.
    #[arg(long, required_unless_present = "scenario")]
    tau: Option<f64>,
    /// Scenario name in the thresholds table.
    #[arg(long)]
    scenario: Option<String>,
    /// Thresholds JSON (default: the bundled table).
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, value_enum)]
    decision_rule: Option<RuleArg>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Trials,
    TempSweep,
    DriftSweep,
}

#[derive(Args)]
struct Evaluate {
    #[arg(value_enum)]
    kind: EvalKind,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run trials one after another.
    #[arg(long)]
    serial: bool,
    /// Use a trained encoder instead of training one.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::BuildQueries(a) => commands::build_queries(a),
        Command::Collect(a) => commands::collect(a),
        Command::Stylesim(s) => commands::stylesim(s),
        Command::Train(a) => commands::train(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::Verify(a) => commands::verify(a),
        Command::Evaluate(a) => commands::evaluate(a),
    }
}
