//! `statenet` command-line tool: train, evaluate, track and inspect.

mod commands;

use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::UsageError;

#[derive(Parser, Debug)]
#[command(name = "statenet", version, about = "Neural dialogue state tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a tracker and write manifest, run record and best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    Evaluate(EvaluateArgs),
    /// Stream dialogues turn by turn and print every slot distribution.
    Track(TrackArgs),
    /// Print checkpoint metadata.
    InspectCheckpoint(InspectArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON training configuration; flags below take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,
    /// Training dialogues.
    #[arg(long, value_name = "PATH")]
    pub corpus: std::path::PathBuf,
    /// Validation dialogues used for model selection.
    #[arg(long, value_name = "PATH")]
    pub valid: Option<std::path::PathBuf>,
    /// Word vectors in text format.
    #[arg(long, value_name = "PATH")]
    pub embeddings: std::path::PathBuf,
    /// Slot ontology; defaults to the one embedded in the corpus file.
    #[arg(long, value_name = "PATH")]
    pub ontology: Option<std::path::PathBuf>,
    /// Token rewrites for slot and value phrases, one `token<TAB>replacement`
    /// per line. Replaces the built-in restaurant aliases.
    #[arg(long, value_name = "PATH")]
    pub aliases: Option<std::path::PathBuf>,
    /// Artifact directory.
    #[arg(long, value_name = "DIR")]
    pub out: std::path::PathBuf,
    #[arg(long, env = "STATENET_SEED")]
    pub seed: Option<u64>,
    /// separate, shared or shared_pretrained.
    #[arg(long)]
    pub regime: Option<statenet::training::Regime>,
    #[arg(long, value_name = "SLOT")]
    pub pretrain_slot: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: std::path::PathBuf,
    /// Labelled dialogues.
    #[arg(long, value_name = "PATH")]
    pub corpus: std::path::PathBuf,
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// JSON object mapping slots to replacement value lists.
    #[arg(long, value_name = "PATH")]
    pub values_override: Option<std::path::PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<std::path::PathBuf>,
    /// Also write one CSV row per turn and slot.
    #[arg(long, value_name = "PATH")]
    pub turns_csv: Option<std::path::PathBuf>,
    /// Include per-dialogue counts in the report.
    #[arg(long)]
    pub breakdown: bool,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: std::path::PathBuf,
    /// Dialogues; labels are not required.
    #[arg(long, value_name = "PATH")]
    pub corpus: std::path::PathBuf,
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long, value_name = "PATH")]
    pub values_override: Option<std::path::PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<std::path::PathBuf>,
}

/// Inputs shared by `evaluate` and `track`. Anything not given is taken from
/// `--manifest` when present.
#[derive(Args, Debug)]
pub struct ModelInputs {
    #[arg(long, value_name = "PATH", required_unless_present = "manifest")]
    pub embeddings: Option<std::path::PathBuf>,
    /// Defaults to the ontology stored in the checkpoint.
    #[arg(long, value_name = "PATH")]
    pub ontology: Option<std::path::PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub aliases: Option<std::path::PathBuf>,
    /// Manifest written by `train`; supplies embeddings and aliases.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: std::path::PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", &clap_message(&e), clap_field(&e));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Track(args) => commands::track(args),
        Command::InspectCheckpoint(args) => commands::inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = format!("{err:#}");
            if let Some(usage) = err.downcast_ref::<UsageError>() {
                report("usage", &message, usage.field.clone());
                ExitCode::from(2)
            } else if let Some(statenet::Error::Config { field, .. }) = err.downcast_ref::<statenet::Error>() {
                report("config", &message, Some(field.to_string()));
                ExitCode::from(2)
            } else {
                report("runtime", &message, None);
                ExitCode::from(1)
            }
        }
    }
}

/// Errors go to stderr as one JSON object on one line.
fn report(kind: &str, message: &str, field: Option<String>) {
    let mut error = json!({ "kind": kind, "message": message });
    if let Some(field) = field {
        error["field"] = json!(field);
    }
    eprintln!("{}", json!({ "error": error }));
}

fn clap_message(e: &clap::Error) -> String {
    let rendered = e.render().to_string();
    let first = rendered.lines().next().unwrap_or_default();
    first.trim_start_matches("error: ").to_string()
}

fn clap_field(e: &clap::Error) -> Option<String> {
    match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => Some(s.clone()),
        Some(ContextValue::Strings(v)) => Some(v.join(",")),
        _ => None,
    }
}
