//! `vlpipe`: command-line access to the vision-language pipeline toolkit.
//!
//! Every command prints a JSON summary on stdout and logs on stderr.
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "vlpipe", version, about = "Vision-language data and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan crops, padding and the vision token sequence for an image size.
    Layout(LayoutArgs),
    /// Score pointing predictions against ground-truth masks.
    EvalPoint(EvalPointArgs),
    /// Fit Bradley-Terry Elo ratings from a pairwise preference log.
    Elo(EloArgs),
    /// Pack every annotation of an image into shared training sequences.
    Pack(PackArgs),
    /// Compute dataset mixture rates and optionally sample from them.
    Mix(MixArgs),
    /// Draw a caption length hint and format the prompt.
    Caphint(CaphintArgs),
    /// Aggregate caption precision/recall judgments into cap F1.
    Capf1(Capf1Args),
    /// Parse, render or order point annotations.
    Points(PointsArgs),
    /// Extract counts from model responses.
    Count(CountArgs),
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub height: u32,
    /// TOML or JSON layout config; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub crop_size: Option<u32>,
    #[arg(long)]
    pub patch_size: Option<u32>,
    /// Overlap margin in patches.
    #[arg(long)]
    pub overlap: Option<u32>,
    #[arg(long)]
    pub pool_window: Option<u32>,
    #[arg(long)]
    pub max_crops: Option<u32>,
    /// Write the full crop and token layout as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPointArgs {
    /// Ground-truth JSONL: {id, image_w, image_h, points, masks}.
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction JSONL: {id, response_text}.
    #[arg(long)]
    pub pred: PathBuf,
    /// Per-example CSV with a final mean row.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TiePolicyArg {
    HalfWin,
    Ignore,
}

#[derive(Debug, Args)]
pub struct EloArgs {
    /// CSV with header model_a,model_b,verdict[,category].
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = vlpipe_core::ranking::DEFAULT_ANCHOR)]
    pub anchor: f64,
    #[arg(long, value_enum, default_value_t = TiePolicyArg::HalfWin)]
    pub tie_policy: TiePolicyArg,
    #[arg(long, default_value_t = 10_000)]
    pub max_iterations: usize,
    /// Ranked CSV: rank,model,rating.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include the pairwise win-rate matrix (ties excluded) in the summary.
    #[arg(long)]
    pub win_rates: bool,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    /// Annotation JSONL: {image_id, annotation_id, prompt, response, n_points?, ...}.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Vision tokens per image, shared by every sequence.
    #[arg(long)]
    pub image_tokens: usize,
    #[arg(long, default_value_t = vlpipe_core::mixture::DEFAULT_MAX_SEQUENCE_LENGTH)]
    pub max_len: usize,
    /// Packed JSONL with segment offsets and visibility blocks.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// TOML or JSON mixture spec.
    #[arg(long, conflicts_with = "sizes")]
    pub spec: Option<PathBuf>,
    /// Comma-separated dataset sizes, named d0, d1, ...
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<u64>>,
    /// Number of dataset draws to make.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampled dataset names, one per line.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaphintArgs {
    /// Character length of the target caption.
    #[arg(long)]
    pub chars: i64,
    #[arg(long, default_value_t = vlpipe_core::caption::DEFAULT_NOISE_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = vlpipe_core::caption::DEFAULT_INCLUDE_PROB)]
    pub include_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// long_caption or transcript.
    #[arg(long, default_value = "long_caption")]
    pub style: String,
}

#[derive(Debug, Args)]
pub struct Capf1Args {
    /// JSONL of {image_id, n_generated, n_consistent, n_gt, n_matched, hint?}.
    #[arg(long)]
    pub judgments: PathBuf,
    /// Report one row per length hint instead of a single aggregate.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Line chart of the sweep (requires --sweep).
    #[arg(long, requires = "sweep")]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PointsArgs {
    #[command(subcommand)]
    pub action: PointsAction,
}

#[derive(Debug, Subcommand)]
pub enum PointsAction {
    /// Extract point sets from text.
    Parse {
        #[command(flatten)]
        input: TextInput,
        /// Keep malformed tags as text instead of failing.
        #[arg(long)]
        lenient: bool,
        /// JSON array of {x, y, alt, inline}.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render JSON point sets ({x, y, alt, inline}) as canonical tags.
    Render {
        #[command(flatten)]
        input: TextInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit text with every point tag in canonical form and order.
    Order {
        #[command(flatten)]
        input: TextInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TextInput {
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// JSONL of {id, response_text, count?}.
    #[arg(long)]
    pub responses: PathBuf,
    /// count, point_then_count, count_then_point or point_regex.
    #[arg(long, default_value = "point_then_count")]
    pub strategy: String,
    /// CSV of id,predicted,expected.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Layout(_) => "layout",
        Command::EvalPoint(_) => "eval-point",
        Command::Elo(_) => "elo",
        Command::Pack(_) => "pack",
        Command::Mix(_) => "mix",
        Command::Caphint(_) => "caphint",
        Command::Capf1(_) => "capf1",
        Command::Points(_) => "points",
        Command::Count(_) => "count",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    let result = match cli.command {
        Command::Layout(a) => commands::layout(a),
        Command::EvalPoint(a) => commands::eval_point(a),
        Command::Elo(a) => commands::elo(a),
        Command::Pack(a) => commands::pack(a),
        Command::Mix(a) => commands::mix(a),
        Command::Caphint(a) => commands::caphint(a),
        Command::Capf1(a) => commands::capf1(a),
        Command::Points(a) => commands::points(a),
        Command::Count(a) => commands::count(a),
    };
    match result {
        Ok(mut summary) => {
            summary["command"] = json!(name);
            summary["ok"] = json!(true);
            output::print_summary(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e:#}");
            let code = e.exit_code();
            output::print_summary(&json!({
                "command": name,
                "ok": false,
                "exit_code": code,
                "error": format!("{e:#}"),
            }));
            ExitCode::from(code)
        }
    }
}
