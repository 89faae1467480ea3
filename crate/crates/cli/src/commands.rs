use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::json;

use statenet::autodiff::{checkpoint, Real, Scalar};
use statenet::corpus::{load_corpus, Corpus, Ontology};
use statenet::embeddings::{Aliases, EmbeddingTable};
use statenet::evaluation::{evaluate_with, write_turns_csv, EvalOptions};
use statenet::tracker::Tracker;
use statenet::training::{train as run_training, TrainingConfig, TrainingData};

use crate::{EvaluateArgs, InspectArgs, ModelInputs, TrackArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const RUN_RECORD_FILE: &str = "run_record.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Bad or missing command-line input, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError {
    pub field: Option<String>,
    pub message: String,
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for UsageError {}

fn usage(field: &str, message: impl Into<String>) -> anyhow::Error {
    UsageError {
        field: Some(field.into()),
        message: message.into(),
    }
    .into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Every default filled in.
    pub config: TrainingConfig,
    pub seed: u64,
    pub corpus: PathBuf,
    pub valid: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    pub embeddings: PathBuf,
    pub aliases: Option<PathBuf>,
    pub slots: Vec<String>,
    pub out_dir: PathBuf,
}

/// Paths are stored absolute so the manifest stays valid from any directory.
fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("cannot resolve {}", path.display()))
}

fn load_table(embeddings: &Path, aliases: Option<&Path>) -> Result<EmbeddingTable> {
    if !embeddings.is_file() {
        return Err(usage("--embeddings", format!("no such file: {}", embeddings.display())));
    }
    let aliases = match aliases {
        Some(path) => Aliases::load(path)?,
        None => Aliases::restaurant_defaults(),
    };
    Ok(EmbeddingTable::load(embeddings, None)?.with_aliases(aliases))
}

fn load_config(path: Option<&Path>) -> Result<TrainingConfig> {
    let Some(path) = path else {
        return Ok(TrainingConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage("--config", format!("{}: {e}", path.display())))
}

fn write_json_line<W: Write, S: Serialize>(out: &mut W, value: &S) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(regime) = args.regime {
        config.regime = regime;
    }
    if let Some(slot) = args.pretrain_slot {
        config.pretrain_slot = Some(slot);
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(epochs) = args.pretrain_epochs {
        config.pretrain_epochs = epochs;
    }
    let config = config.resolved();
    config.validate()?;

    let table = load_table(&args.embeddings, args.aliases.as_deref())?;
    let ontology = match &args.ontology {
        Some(path) => Ontology::load(path)?,
        None => load_corpus(&args.corpus, None)?
            .ontology
            .ok_or_else(|| usage("--ontology", "the corpus file has no ontology; pass --ontology"))?,
    };
    let train_set = load_corpus(&args.corpus, Some(&ontology))
        .with_context(|| format!("corpus {}", args.corpus.display()))?;
    let valid_set = match &args.valid {
        Some(path) => {
            Some(load_corpus(path, Some(&ontology)).with_context(|| format!("corpus {}", path.display()))?)
        }
        None => None,
    };
    let slots: Vec<String> = ontology.slot_names().map(String::from).collect();

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        config: config.clone(),
        corpus: absolute(&args.corpus)?,
        valid: args.valid.as_deref().map(absolute).transpose()?,
        ontology: args.ontology.as_deref().map(absolute).transpose()?,
        embeddings: absolute(&args.embeddings)?,
        aliases: args.aliases.as_deref().map(absolute).transpose()?,
        slots: slots.clone(),
        out_dir: absolute(&args.out)?,
    };
    fs::write(args.out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;

    let mut record_file = BufWriter::new(File::create(args.out.join(RUN_RECORD_FILE))?);
    let data = TrainingData {
        train: &train_set.dialogues,
        valid: valid_set.as_ref().map(|c: &Corpus| c.dialogues.as_slice()),
        ontology: &ontology,
        table: &table,
    };
    let mut outcome = run_training::<Real>(data, &slots, &config, &mut |epoch| {
        log::info!("{} epoch {}: loss {:.4}, joint {:.4}", epoch.phase, epoch.epoch, epoch.train_loss, epoch.validation_joint_accuracy);
        write_json_line(&mut record_file, epoch)
            .and_then(|()| record_file.flush().map_err(Into::into))
            .map_err(|e| statenet::Error::Io(io::Error::other(e.to_string())))
    })?;
    record_file.flush()?;

    let checkpoint_path = args.out.join(CHECKPOINT_FILE);
    outcome.tracker.save(&checkpoint_path)?;
    outcome.record.best_checkpoint = Some(CHECKPOINT_FILE.into());
    fs::write(args.out.join(SUMMARY_FILE), serde_json::to_string_pretty(&outcome.record)? + "\n")?;
    let mut stdout = io::stdout().lock();
    write_json_line(&mut stdout, &outcome.record)?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage("--manifest", format!("{}: {e}", path.display())))
}

/// Resolves the embedding table and the ontology to track with.
fn model_inputs<T: Scalar>(
    inputs: &ModelInputs,
    tracker: &Tracker<T>,
    values_override: Option<&Path>,
) -> Result<(EmbeddingTable, Ontology)> {
    let manifest = inputs.manifest.as_deref().map(read_manifest).transpose()?;
    let embeddings = inputs
        .embeddings
        .clone()
        .or_else(|| manifest.as_ref().map(|m| m.embeddings.clone()))
        .ok_or_else(|| usage("--embeddings", "an embeddings path is required"))?;
    let aliases = inputs
        .aliases
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.aliases.clone()));
    let table = load_table(&embeddings, aliases.as_deref())?;
    let mut ontology = match &inputs.ontology {
        Some(path) => Ontology::load(path)?,
        None => tracker.ontology().clone(),
    };
    if let Some(path) = values_override {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let overrides: IndexMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| usage("--values-override", format!("{}: {e}", path.display())))?;
        ontology = ontology.with_overrides(&overrides)?;
    }
    Ok((table, ontology))
}

/// Runs `$body` with `Tracker<f32>` or `Tracker<f64>` as the checkpoint says.
macro_rules! with_tracker {
    ($path:expr, |$tracker:ident| $body:expr) => {{
        let bytes = checkpoint::read_file($path)?;
        match checkpoint::peek_precision(&bytes)?.as_str() {
            "f64" => {
                let $tracker = Tracker::<f64>::from_bytes(&bytes)?;
                $body
            }
            _ => {
                let $tracker = Tracker::<f32>::from_bytes(&bytes)?;
                $body
            }
        }
    }};
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    with_tracker!(&args.checkpoint, |tracker| evaluate_tracker(&args, &tracker))
}

fn evaluate_tracker<T: Scalar>(args: &EvaluateArgs, tracker: &Tracker<T>) -> Result<()> {
    let (table, ontology) = model_inputs(&args.inputs, tracker, args.values_override.as_deref())?;
    // Labels outside an overridden value set are scored as wrong, not rejected.
    let corpus = load_corpus(&args.corpus, None).with_context(|| format!("corpus {}", args.corpus.display()))?;
    let value_sets = tracker.value_sets(&ontology, &table)?;
    let options = EvalOptions {
        breakdown: args.breakdown,
        turn_records: args.turns_csv.is_some(),
    };
    let (report, records) = evaluate_with(tracker, &corpus.dialogues, &value_sets, &table, options)?;
    if let Some(path) = &args.turns_csv {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        write_turns_csv(&records, BufWriter::new(file))?;
    }
    let mut out = output(args.out.as_deref())?;
    write_json_line(&mut out, &report)?;
    out.flush()?;
    Ok(())
}

pub fn track(args: TrackArgs) -> Result<()> {
    with_tracker!(&args.checkpoint, |tracker| track_tracker(&args, &tracker))
}

fn track_tracker<T: Scalar>(args: &TrackArgs, tracker: &Tracker<T>) -> Result<()> {
    let (table, ontology) = model_inputs(&args.inputs, tracker, args.values_override.as_deref())?;
    let corpus = load_corpus(&args.corpus, None).with_context(|| format!("corpus {}", args.corpus.display()))?;
    let value_sets = tracker.value_sets(&ontology, &table)?;
    let mut out = output(args.out.as_deref())?;
    for dialogue in &corpus.dialogues {
        let mut states: Vec<_> = value_sets.iter().map(|_| tracker.initial_state()).collect();
        for (t, turn) in dialogue.turns.iter().enumerate() {
            for (values, state) in value_sets.iter().zip(&mut states) {
                let d = tracker.track_turn(turn, values, state, &table)?;
                let best = d.probabilities.iter().enumerate().fold(0, |b, (i, p)| if *p > d.probabilities[b] { i } else { b });
                let distribution: IndexMap<&str, f64> =
                    d.values.iter().map(String::as_str).zip(d.probabilities.iter().copied()).collect();
                let line = json!({
                    "dialogue": dialogue.id,
                    "turn": t,
                    "slot": d.slot,
                    "prediction": d.values[best],
                    "distribution": distribution,
                });
                write_json_line(&mut out, &line)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    with_tracker!(&args.checkpoint, |tracker| inspect_tracker(&tracker))
}

fn inspect_tracker<T: Scalar>(tracker: &Tracker<T>) -> Result<()> {
    let info = json!({
        "precision": T::TAG,
        "shared": tracker.is_shared(),
        "model_count": tracker.models().len(),
        "parameter_count": tracker.parameter_count(),
        "slot_models": tracker.slot_models(),
        "act_vocabulary_size": tracker.vocabulary().len(),
        "config": tracker.config(),
        "ontology": tracker.ontology(),
    });
    let mut stdout = io::stdout().lock();
    write_json_line(&mut stdout, &info)?;
    Ok(())
}
