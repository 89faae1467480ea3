//! Training regimes: one model per slot, one shared model, and a shared
//! model initialized from a single-slot pre-training run.
//!
//! Each batch sums (or averages) per-dialogue losses, where a dialogue's
//! loss is the cross-entropy summed over its turns and the trained slots,
//! and takes one optimizer step. The epoch with the best validation joint
//! accuracy is kept; ties go to the earlier epoch. When no epoch runs the
//! initial parameters are kept.
//!
//! Randomness comes from ChaCha8 streams of the run seed: stream 0 for
//! weight initialization and stream 1 for shuffling. Every phase restarts
//! the shuffle stream.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Array, Optimizer, RmsProp, Scalar, Tape, Var};
use crate::corpus::{Dialogue, Ontology};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::featurizer::{build_act_vocabulary, featurize_dialogue, ActVocabulary, FeatureSettings, TurnFeatures};
use crate::model::{BoundNet, ModelConfig, ModelHyperparams, StateNet, ValueSet};
use crate::tracker::{unroll_dialogue, SlotPlan, Tracker};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Separate,
    Shared,
    SharedPretrained,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Separate => "separate",
            Regime::Shared => "shared",
            Regime::SharedPretrained => "shared_pretrained",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "separate" => Ok(Regime::Separate),
            "shared" => Ok(Regime::Shared),
            "shared_pretrained" => Ok(Regime::SharedPretrained),
            other => Err(format!(
                "unknown regime {other:?} (expected separate, shared or shared_pretrained)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
}

impl OptimizerKind {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Rmsprop => 0.0005,
            OptimizerKind::Adam => 0.001,
        }
    }

    fn step<T: Scalar>(self, learning_rate: f64, net: &mut StateNet<T>) {
        match self {
            OptimizerKind::Rmsprop => RmsProp::new(learning_rate).step(net.parameters_mut()),
            OptimizerKind::Adam => Adam::new(learning_rate).step(net.parameters_mut()),
        }
    }
}

/// How per-dialogue losses combine into a batch loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    #[default]
    Mean,
    Sum,
}

/// Training configuration as read from JSON. Unset optimizer fields take
/// regime-dependent defaults; [`TrainingConfig::resolved`] fills them in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub regime: Regime,
    /// Main-phase optimizer. Defaults to Adam for `shared_pretrained` and
    /// RMSProp otherwise.
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub pretrain_slot: Option<String>,
    pub pretrain_epochs: usize,
    pub pretrain_optimizer: Option<OptimizerKind>,
    pub pretrain_learning_rate: Option<f64>,
    pub loss_reduction: LossReduction,
    /// Global gradient-norm clip; off when unset.
    pub clip_norm: Option<f64>,
    pub model: ModelHyperparams,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            regime: Regime::SharedPretrained,
            optimizer: None,
            learning_rate: None,
            batch_size: 32,
            epochs: 150,
            seed: 0,
            pretrain_slot: None,
            pretrain_epochs: 150,
            pretrain_optimizer: None,
            pretrain_learning_rate: None,
            loss_reduction: LossReduction::Mean,
            clip_norm: None,
            model: ModelHyperparams::default(),
        }
    }
}

impl TrainingConfig {
    pub fn main_optimizer(&self) -> OptimizerKind {
        self.optimizer.unwrap_or(match self.regime {
            Regime::SharedPretrained => OptimizerKind::Adam,
            _ => OptimizerKind::Rmsprop,
        })
    }

    pub fn main_learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.main_optimizer().default_learning_rate())
    }

    pub fn pretrain_optimizer(&self) -> OptimizerKind {
        self.pretrain_optimizer.unwrap_or(OptimizerKind::Rmsprop)
    }

    pub fn pretrain_learning_rate(&self) -> f64 {
        self.pretrain_learning_rate
            .unwrap_or_else(|| self.pretrain_optimizer().default_learning_rate())
    }

    /// Copy with every defaulted optimizer setting and `lstm_hidden` written
    /// out.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.optimizer = Some(self.main_optimizer());
        out.learning_rate = Some(self.main_learning_rate());
        out.pretrain_optimizer = Some(self.pretrain_optimizer());
        out.pretrain_learning_rate = Some(self.pretrain_learning_rate());
        out.model.lstm_hidden = Some(
            self.model
                .lstm_hidden
                .unwrap_or(2 * self.model.receptor_width),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, message: &str| {
            Err(Error::Config {
                field,
                message: message.into(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.main_learning_rate().is_finite() && self.main_learning_rate() > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.pretrain_learning_rate().is_finite() && self.pretrain_learning_rate() > 0.0) {
            return bad("pretrain_learning_rate", "must be positive");
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("clip_norm", "must be positive");
            }
        }
        if self.regime == Regime::SharedPretrained && self.pretrain_slot.is_none() {
            return bad("pretrain_slot", "required by the shared_pretrained regime");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    /// 1-based.
    pub epoch: usize,
    /// Mean per-dialogue training loss over the epoch.
    pub train_loss: f64,
    pub validation_per_slot_accuracy: IndexMap<String, f64>,
    pub validation_joint_accuracy: f64,
    /// Best epoch so far; 0 means the initial parameters.
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    pub slots: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRunRecord {
    pub regime: Regime,
    pub phases: Vec<PhaseRecord>,
    pub parameter_count: usize,
    /// Where the caller stored the selected checkpoint, if anywhere.
    pub best_checkpoint: Option<String>,
}

pub struct TrainingOutcome<T: Scalar> {
    pub tracker: Tracker<T>,
    pub record: TrainingRunRecord,
}

/// Corpora and resources shared by every regime. Without a validation set
/// model selection uses the training set.
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub train: &'a [Dialogue],
    pub valid: Option<&'a [Dialogue]>,
    pub ontology: &'a Ontology,
    pub table: &'a EmbeddingTable,
}

impl<'a> TrainingData<'a> {
    fn selection_set(&self) -> &'a [Dialogue] {
        self.valid.unwrap_or(self.train)
    }
}

/// Called after every epoch of every phase.
pub type EpochCallback<'c> = dyn FnMut(&EpochRecord) -> Result<()> + 'c;

/// Value sets and slot word vectors for a fixed list of slots.
pub struct SlotTargets<T: Scalar> {
    pub value_sets: Vec<ValueSet<T>>,
    pub slot_vectors: Vec<Array<T>>,
}

impl<T: Scalar> SlotTargets<T> {
    pub fn new(ontology: &Ontology, slots: &[String], table: &EmbeddingTable) -> Result<Self> {
        let mut value_sets = Vec::with_capacity(slots.len());
        let mut slot_vectors = Vec::with_capacity(slots.len());
        for slot in slots {
            let values = ontology
                .values(slot)
                .ok_or_else(|| Error::UnknownSlot(slot.clone()))?;
            value_sets.push(ValueSet::new(slot, values, table)?);
            slot_vectors.push(table.phrase_vector(slot)?);
        }
        Ok(Self {
            value_sets,
            slot_vectors,
        })
    }

    fn plans(&self) -> Vec<SlotPlan<'_, T>> {
        self.value_sets
            .iter()
            .zip(&self.slot_vectors)
            .map(|(values, v)| SlotPlan {
                model: 0,
                slot_vector: v.clone(),
                values,
            })
            .collect()
    }
}

/// A featurized dialogue with gold value indices `[turn][slot]`.
pub struct Example<T: Scalar> {
    pub features: Vec<TurnFeatures<T>>,
    pub gold: Vec<Vec<usize>>,
}

pub fn prepare_examples<T: Scalar>(
    dialogues: &[Dialogue],
    targets: &SlotTargets<T>,
    vocab: &ActVocabulary,
    settings: FeatureSettings,
    table: &EmbeddingTable,
) -> Result<Vec<Example<T>>> {
    dialogues
        .iter()
        .map(|d| {
            let gold = d
                .turns
                .iter()
                .enumerate()
                .map(|(t, turn)| {
                    targets
                        .value_sets
                        .iter()
                        .map(|values| {
                            let value = turn.gold(&values.slot);
                            values.index_of(value).ok_or_else(|| Error::MissingLabel {
                                dialogue: d.id.clone(),
                                turn: t,
                                slot: values.slot.clone(),
                                value: value.to_string(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Example {
                features: featurize_dialogue(d, table, vocab, settings),
                gold,
            })
        })
        .collect()
}

/// Cross-entropy summed over turns and slots of one dialogue, with LSTM
/// states threaded across turns.
pub fn dialogue_loss<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    net: &BoundNet<'a, T>,
    example: &Example<T>,
    targets: &SlotTargets<T>,
) -> Result<Var> {
    let plans = targets.plans();
    let logits = unroll_dialogue(tape, std::slice::from_ref(net), &example.features, &plans)?;
    let mut terms = Vec::new();
    for (row, gold) in logits.iter().zip(&example.gold) {
        for (&l, &g) in row.iter().zip(gold) {
            terms.push(tape.softmax_cross_entropy(l, g)?);
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(Array::scalar(T::zero())));
    }
    Ok(tape.sum(&terms)?)
}

/// Adds the reduced batch-loss gradient into `net`'s gradient buffers and
/// returns the summed dialogue loss.
pub fn accumulate_batch<T: Scalar>(
    net: &mut StateNet<T>,
    batch: &[&Example<T>],
    targets: &SlotTargets<T>,
    reduction: LossReduction,
) -> Result<f64> {
    let scale = match reduction {
        LossReduction::Mean => T::lit(1.0 / batch.len().max(1) as f64),
        LossReduction::Sum => T::one(),
    };
    let mut total = 0.0;
    for example in batch {
        let grads = {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);
            let loss = dialogue_loss(&mut tape, &bound, example, targets)?;
            total += tape.value(loss).item().as_f64();
            tape.backward(loss)?;
            bound.binding().take_gradients(&mut tape)
        };
        net.parameters_mut().accumulate(&grads, scale);
    }
    Ok(total)
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Setup {
    vocab: ActVocabulary,
    config: ModelConfig,
}

fn setup(data: &TrainingData<'_>, slots: &[String], config: &TrainingConfig) -> Result<Setup> {
    config.validate()?;
    if slots.is_empty() {
        return Err(Error::Config {
            field: "slots",
            message: "at least one slot must be trained".into(),
        });
    }
    if let Some(slot) = slots.iter().find(|s| data.ontology.values(s).is_none()) {
        return Err(Error::UnknownSlot(slot.clone()));
    }
    let vocab = build_act_vocabulary(data.train, config.model.act_order)?;
    let model = config.model.resolve(data.table.dim(), vocab.len())?;
    Ok(Setup {
        vocab,
        config: model,
    })
}

struct Phase<'p> {
    name: &'p str,
    slots: &'p [String],
    optimizer: OptimizerKind,
    learning_rate: f64,
    epochs: usize,
}

fn run_phase<T: Scalar>(
    mut net: StateNet<T>,
    phase: &Phase<'_>,
    setup: &Setup,
    data: &TrainingData<'_>,
    config: &TrainingConfig,
    on_epoch: &mut EpochCallback<'_>,
) -> Result<(StateNet<T>, PhaseRecord)> {
    let ontology = data.ontology.restrict(phase.slots)?;
    let targets = SlotTargets::new(&ontology, phase.slots, data.table)?;
    let examples = prepare_examples(
        data.train,
        &targets,
        &setup.vocab,
        setup.config.feature_settings(),
        data.table,
    )?;
    let mut shuffle = rng(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best = net.clone();
    let mut best_joint = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(phase.epochs);
    for epoch in 1..=phase.epochs {
        order.shuffle(&mut shuffle);
        let mut loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &examples[i]).collect();
            net.parameters_mut().zero_gradients();
            loss += accumulate_batch(&mut net, &batch, &targets, config.loss_reduction)?;
            if let Some(max) = config.clip_norm {
                net.parameters_mut().clip_gradients(T::lit(max));
            }
            phase.optimizer.step(phase.learning_rate, &mut net);
        }
        net.parameters_mut().zero_gradients();
        let tracker = Tracker::shared(net.clone(), setup.vocab.clone(), ontology.clone())?;
        let report = evaluate(&tracker, data.selection_set(), &ontology, data.table)?;
        if report.joint_accuracy > best_joint {
            best_joint = report.joint_accuracy;
            best_epoch = epoch;
            best = net.clone();
        }
        let record = EpochRecord {
            phase: phase.name.to_string(),
            epoch,
            train_loss: loss / examples.len().max(1) as f64,
            validation_per_slot_accuracy: report.per_slot_accuracy,
            validation_joint_accuracy: report.joint_accuracy,
            best_epoch,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} joint {:.4}",
            phase.name,
            record.train_loss,
            record.validation_joint_accuracy
        );
        on_epoch(&record)?;
        epochs.push(record);
    }
    Ok((
        best,
        PhaseRecord {
            phase: phase.name.to_string(),
            slots: phase.slots.to_vec(),
            epochs,
            best_epoch,
        },
    ))
}

/// One independently initialized and selected model per slot. Every slot
/// model starts from the same seed.
pub fn train_separate<T: Scalar>(
    data: TrainingData<'_>,
    slots: &[String],
    config: &TrainingConfig,
    on_epoch: &mut EpochCallback<'_>,
) -> Result<TrainingOutcome<T>> {
    let setup = setup(&data, slots, config)?;
    let mut models = Vec::with_capacity(slots.len());
    let mut phases = Vec::with_capacity(slots.len());
    for slot in slots {
        let net = StateNet::new(setup.config.clone(), &mut rng(config.seed, INIT_STREAM))?;
        let name = format!("slot:{slot}");
        let phase = Phase {
            name: &name,
            slots: std::slice::from_ref(slot),
            optimizer: config.main_optimizer(),
            learning_rate: config.main_learning_rate(),
            epochs: config.epochs,
            };
        let (best, record) = run_phase(net, &phase, &setup, &data, config, on_epoch)?;
        models.push(best);
        phases.push(record);
    }
    let slot_models = slots.iter().cloned().zip(0..).collect();
    let tracker = Tracker::from_parts(models, setup.vocab, data.ontology.restrict(slots)?, slot_models)?;
    Ok(outcome(tracker, config.regime, phases))
}

/// A single model trained on the summed loss of all `slots`.
pub fn train_shared<T: Scalar>(
    data: TrainingData<'_>,
    slots: &[String],
    config: &TrainingConfig,
    on_epoch: &mut EpochCallback<'_>,
) -> Result<TrainingOutcome<T>> {
    let setup = setup(&data, slots, config)?;
    let net = StateNet::new(setup.config.clone(), &mut rng(config.seed, INIT_STREAM))?;
    let phase = Phase {
        name: "main",
        slots,
        optimizer: config.main_optimizer(),
        learning_rate: config.main_learning_rate(),
        epochs: config.epochs,
    };
    let (best, record) = run_phase(net, &phase, &setup, &data, config, on_epoch)?;
    let tracker = Tracker::shared(best, setup.vocab, data.ontology.restrict(slots)?)?;
    Ok(outcome(tracker, config.regime, vec![record]))
}

/// Pre-trains a shared model on `pretrain_slot` alone, keeps its best
/// validation checkpoint, then trains it on all `slots` with fresh
/// optimizer state.
pub fn pretrain_then_train<T: Scalar>(
    data: TrainingData<'_>,
    slots: &[String],
    config: &TrainingConfig,
    on_epoch: &mut EpochCallback<'_>,
) -> Result<TrainingOutcome<T>> {
    let setup = setup(&data, slots, config)?;
    let pretrain_slot = config.pretrain_slot.clone().ok_or(Error::Config {
        field: "pretrain_slot",
        message: "required by the shared_pretrained regime".into(),
    })?;
    if !slots.contains(&pretrain_slot) {
        return Err(Error::Config {
            field: "pretrain_slot",
            message: format!("{pretrain_slot:?} is not one of the trained slots"),
        });
    }
    let net = StateNet::new(setup.config.clone(), &mut rng(config.seed, INIT_STREAM))?;
    let pretrain = Phase {
        name: "pretrain",
        slots: std::slice::from_ref(&pretrain_slot),
        optimizer: config.pretrain_optimizer(),
        learning_rate: config.pretrain_learning_rate(),
        epochs: config.pretrain_epochs,
    };
    let (mut init, first) = run_phase(net, &pretrain, &setup, &data, config, on_epoch)?;
    init.parameters_mut().reset_optimizer_state();
    let main = Phase {
        name: "main",
        slots,
        optimizer: config.main_optimizer(),
        learning_rate: config.main_learning_rate(),
        epochs: config.epochs,
    };
    let (best, second) = run_phase(init, &main, &setup, &data, config, on_epoch)?;
    let tracker = Tracker::shared(best, setup.vocab, data.ontology.restrict(slots)?)?;
    Ok(outcome(tracker, config.regime, vec![first, second]))
}

/// Dispatches on `config.regime`.
pub fn train<T: Scalar>(
    data: TrainingData<'_>,
    slots: &[String],
    config: &TrainingConfig,
    on_epoch: &mut EpochCallback<'_>,
) -> Result<TrainingOutcome<T>> {
    match config.regime {
        Regime::Separate => train_separate(data, slots, config, on_epoch),
        Regime::Shared => train_shared(data, slots, config, on_epoch),
        Regime::SharedPretrained => pretrain_then_train(data, slots, config, on_epoch),
    }
}

fn outcome<T: Scalar>(tracker: Tracker<T>, regime: Regime, phases: Vec<PhaseRecord>) -> TrainingOutcome<T> {
    TrainingOutcome {
        record: TrainingRunRecord {
            regime,
            phases,
            parameter_count: tracker.parameter_count(),
            best_checkpoint: None,
        },
        tracker,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_defaults_follow_optimizer() {
        let mut c = TrainingConfig {
            regime: Regime::Shared,
            ..Default::default()
        };
        assert_eq!(c.main_optimizer(), OptimizerKind::Rmsprop);
        assert_eq!(c.main_learning_rate(), 0.0005);
        c.regime = Regime::SharedPretrained;
        assert_eq!(c.main_optimizer(), OptimizerKind::Adam);
        assert_eq!(c.main_learning_rate(), 0.001);
        assert_eq!(c.pretrain_learning_rate(), 0.0005);
        c.learning_rate = Some(0.1);
        assert_eq!(c.main_learning_rate(), 0.1);
    }

    #[test]
    fn pretrained_regime_requires_slot() {
        let c = TrainingConfig {
            regime: Regime::SharedPretrained,
            ..Default::default()
        };
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "pretrain_slot"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let c: TrainingConfig = serde_json::from_str(r#"{"regime":"shared","epochs":3}"#).unwrap();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.loss_reduction, LossReduction::Mean);
        let r = c.resolved();
        assert_eq!(r.model.lstm_hidden, Some(256));
        let back: TrainingConfig = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<TrainingConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn regime_parses_cli_spellings() {
        assert_eq!("shared-pretrained".parse::<Regime>().unwrap(), Regime::SharedPretrained);
        assert_eq!("SEPARATE".parse::<Regime>().unwrap(), Regime::Separate);
        assert!("both".parse::<Regime>().is_err());
    }
}
