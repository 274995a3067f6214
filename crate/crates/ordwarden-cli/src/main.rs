//! ordwarden: score packet captures for message-ordering covert channels,
//! classify flows, and synthesize labeled evaluation traffic.

mod commands;
mod csvio;

use std::path::PathBuf;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ordwarden", version, about = "Message-ordering covert channel detector")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize labeled covert or legitimate flows
    Generate(GenerateArgs),
    /// Score flows in a capture with the compressibility metric
    Score(ScoreArgs),
    /// Classify scored flows with a threshold or a trained model
    Detect(DetectArgs),
    /// Train a decision-tree classifier on labeled scores
    Train(TrainArgs),
    /// Sweep thresholds over labeled scores and report all metrics
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Pcap,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Udp,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankDistArg {
    /// Every group ordering drawn uniformly (encrypted-content model)
    Uniform,
    /// Orderings carry fixed-width payload bit blocks
    Bits,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractorArg {
    Tcp32,
    Generic8,
    Generic32,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    First,
    Sliding,
}

#[derive(clap::Args)]
#[command(group(ArgGroup::new("class").required(true).args(["covert", "legit"])))]
struct GenerateArgs {
    /// Generate message-ordering covert flows
    #[arg(long)]
    covert: bool,
    /// Generate legitimate flows
    #[arg(long)]
    legit: bool,
    /// PDUs per covert group
    #[arg(long, default_value_t = 4)]
    n: u8,
    /// Covert groups per flow
    #[arg(long, default_value_t = 1000)]
    groups: u32,
    /// Packets per legitimate flow
    #[arg(long, default_value_t = 300)]
    length: u32,
    /// Number of flows
    #[arg(long, default_value_t = 1)]
    flows: u32,
    /// Master seed; flow i uses seed ^ i
    #[arg(long)]
    seed: u64,
    /// Output capture file
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth sidecar CSV
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output format; inferred from --out extension when omitted
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Sequence field width
    #[arg(long, default_value_t = 32)]
    bits: u32,
    #[arg(long, value_enum, default_value_t = TransportArg::Udp)]
    transport: TransportArg,
    /// Covert group-ordering distribution
    #[arg(long, value_enum, default_value_t = RankDistArg::Uniform)]
    rank_dist: RankDistArg,
    /// Per-packet displacement probability (legitimate model)
    #[arg(long, default_value_t = 0.01)]
    p_reorder: f64,
    /// Per-packet duplicate probability (legitimate model)
    #[arg(long, default_value_t = 0.005)]
    p_retransmit: f64,
    /// Disable the heavy-tailed per-flow quality multiplier
    #[arg(long)]
    flat_rates: bool,
    #[arg(long, default_value_t = 10)]
    iat_min_ms: u64,
    #[arg(long, default_value_t = 500)]
    iat_max_ms: u64,
}

#[derive(clap::Args)]
struct ScoreArgs {
    /// Capture to score: classic pcap, or .jsonl flow records
    #[arg(long)]
    input: PathBuf,
    /// Where the sequence field lives (pcap inputs)
    #[arg(long, value_enum, default_value_t = ExtractorArg::Tcp32)]
    extractor: ExtractorArg,
    /// Byte offset of the sequence field in the transport payload
    #[arg(long, default_value_t = 0)]
    offset: usize,
    /// Coding rule for the order-difference string
    #[arg(long, default_value = "c4")]
    coding: String,
    #[arg(long, value_enum, default_value_t = WindowArg::First)]
    window: WindowArg,
    /// Window step in sliding mode
    #[arg(long, default_value_t = 201)]
    stride: usize,
    /// Scores CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
#[command(group(ArgGroup::new("rule").required(true).args(["theta", "model"])))]
struct DetectArgs {
    /// Scores CSV from `score`
    #[arg(long)]
    scores: PathBuf,
    /// Decision threshold: covert iff kappa < theta
    #[arg(long)]
    theta: Option<String>,
    /// Trained model JSON
    #[arg(long)]
    model: Option<PathBuf>,
    /// Verdicts CSV
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth sidecar; adds a metrics summary on stderr
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 12)]
    max_depth: usize,
    #[arg(long, default_value_t = 2)]
    min_leaf: usize,
    /// Keep the full over-fitted tree
    #[arg(long)]
    no_prune: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model JSON output
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// `paper` for the published 32-threshold sweep, or a comma list
    #[arg(long, default_value = "paper")]
    thresholds: String,
    /// Metrics CSV
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate(args) => commands::generate(args),
        Cmd::Score(args) => commands::score(args),
        Cmd::Detect(args) => commands::detect(args),
        Cmd::Train(args) => commands::train(args),
        Cmd::Evaluate(args) => commands::evaluate(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("ordwarden: error: {e:#}");
            std::process::exit(3);
        }
    }
}
