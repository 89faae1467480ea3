//! A trained tracker: one or more [`StateNet`]s, the frozen act vocabulary,
//! the training ontology and the slot → model assignment.
//!
//! With parameter sharing there is a single model and every slot (including
//! slots never seen in training) routes to it. Per-slot training produces
//! one model per slot.
//!
//! Checkpoints use the [`checkpoint`](crate::autodiff::checkpoint)
//! container; metadata is a JSON object with `config`, `act_vocabulary`,
//! `ontology`, `slot_models` and `model_count`, and arrays are named
//! `m{index}.{parameter}`.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, Array, ParameterSet, Scalar, Tape, Var};
use crate::corpus::{Dialogue, Ontology, Turn};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::featurizer::{featurize_dialogue, featurize_turn, ActVocabulary, TurnFeatures};
use crate::model::{BoundNet, ModelConfig, SlotDistribution, StateNet, TrackerState, ValueSet};

#[derive(Clone, Debug, PartialEq)]
pub struct Tracker<T: Scalar> {
    config: ModelConfig,
    vocab: ActVocabulary,
    ontology: Ontology,
    models: Vec<StateNet<T>>,
    slot_models: IndexMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    act_vocabulary: ActVocabulary,
    ontology: Ontology,
    slot_models: IndexMap<String, usize>,
    model_count: usize,
}

/// What to compute for one slot while unrolling a dialogue.
pub struct SlotPlan<'v, T: Scalar> {
    pub model: usize,
    pub slot_vector: Array<T>,
    pub values: &'v ValueSet<T>,
}

/// Runs every planned slot through every turn on one tape and returns the
/// value logits indexed `[turn][slot]`. User and act features are computed
/// once per turn and model; each slot's LSTM state starts at zero and is
/// threaded across turns.
pub fn unroll_dialogue<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    nets: &[BoundNet<'a, T>],
    turns: &[TurnFeatures<T>],
    plans: &[SlotPlan<'_, T>],
) -> Result<Vec<Vec<Var>>> {
    let slot_features = plans
        .iter()
        .map(|p| nets[p.model].slot_feature(tape, &p.slot_vector))
        .collect::<Result<Vec<_>>>()?;
    let mut states: Vec<(Var, Var)> = plans
        .iter()
        .map(|p| {
            let hidden = nets[p.model].net().config().lstm_hidden;
            (tape.constant(Array::zeros(&[hidden])), tape.constant(Array::zeros(&[hidden])))
        })
        .collect();
    let mut out = Vec::with_capacity(turns.len());
    for features in turns {
        let mut shared: Vec<Option<(Var, Var)>> = vec![None; nets.len()];
        let mut row = Vec::with_capacity(plans.len());
        for (s, plan) in plans.iter().enumerate() {
            let net = &nets[plan.model];
            let (user, act) = match shared[plan.model] {
                Some(pair) => pair,
                None => {
                    let pair = (
                        net.user_feature(tape, &features.utterance)?,
                        net.act_feature(tape, &features.acts)?,
                    );
                    shared[plan.model] = Some(pair);
                    pair
                }
            };
            let i_s = net.turn_feature(tape, user, act, slot_features[s])?;
            let (o_s, next) = net.predict_vector(tape, i_s, states[s])?;
            states[s] = next;
            row.push(net.value_logits(tape, o_s, plan.values)?);
        }
        out.push(row);
    }
    Ok(out)
}

impl<T: Scalar> Tracker<T> {
    /// A single shared model serving every slot of `ontology`.
    pub fn shared(model: StateNet<T>, vocab: ActVocabulary, ontology: Ontology) -> Result<Self> {
        let slot_models = ontology.slot_names().map(|s| (s.to_string(), 0)).collect();
        Self::from_parts(vec![model], vocab, ontology, slot_models)
    }

    pub fn from_parts(
        models: Vec<StateNet<T>>,
        vocab: ActVocabulary,
        ontology: Ontology,
        slot_models: IndexMap<String, usize>,
    ) -> Result<Self> {
        let config = models
            .first()
            .ok_or(Error::Config {
                field: "models",
                message: "a tracker needs at least one model".into(),
            })?
            .config()
            .clone();
        if models.iter().any(|m| m.config() != &config) {
            return Err(Error::Config {
                field: "models",
                message: "all models must share one configuration".into(),
            });
        }
        if config.act_input_dim != vocab.len() {
            return Err(Error::Dimension {
                what: "act vocabulary",
                expected: config.act_input_dim,
                found: vocab.len(),
            });
        }
        if let Some((slot, _)) = slot_models.iter().find(|(_, &m)| m >= models.len()) {
            return Err(Error::UnknownSlot(slot.clone()));
        }
        Ok(Self {
            config,
            vocab,
            ontology,
            models,
            slot_models,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &ActVocabulary {
        &self.vocab
    }

    /// Ontology the tracker was trained with.
    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn models(&self) -> &[StateNet<T>] {
        &self.models
    }

    pub fn models_mut(&mut self) -> &mut [StateNet<T>] {
        &mut self.models
    }

    pub fn slot_models(&self) -> &IndexMap<String, usize> {
        &self.slot_models
    }

    pub fn is_shared(&self) -> bool {
        self.models.len() == 1
    }

    /// Total trainable scalars across all models.
    pub fn parameter_count(&self) -> usize {
        self.models.iter().map(StateNet::parameter_count).sum()
    }

    /// Model serving `slot`. Shared trackers accept any slot.
    pub fn model_index(&self, slot: &str) -> Result<usize> {
        match self.slot_models.get(slot) {
            Some(&i) => Ok(i),
            None if self.is_shared() => Ok(0),
            None => Err(Error::UnknownSlot(slot.into())),
        }
    }

    pub fn featurize(&self, dialogue: &Dialogue, table: &EmbeddingTable) -> Result<Vec<TurnFeatures<T>>> {
        self.check_table(table)?;
        Ok(featurize_dialogue(dialogue, table, &self.vocab, self.config.feature_settings()))
    }

    fn check_table(&self, table: &EmbeddingTable) -> Result<()> {
        if table.dim() != self.config.embedding_dim {
            return Err(Error::Dimension {
                what: "embedding table",
                expected: self.config.embedding_dim,
                found: table.dim(),
            });
        }
        Ok(())
    }

    /// Value sets for every slot of `ontology`, in ontology order.
    pub fn value_sets(&self, ontology: &Ontology, table: &EmbeddingTable) -> Result<Vec<ValueSet<T>>> {
        ontology
            .slots()
            .iter()
            .map(|(slot, values)| ValueSet::new(slot, values, table))
            .collect()
    }

    /// Distributions for every turn (outer) and every slot of the value
    /// sets (inner, same order).
    pub fn track_dialogue(
        &self,
        dialogue: &Dialogue,
        value_sets: &[ValueSet<T>],
        table: &EmbeddingTable,
    ) -> Result<Vec<Vec<SlotDistribution>>> {
        let features = self.featurize(dialogue, table)?;
        let plans = value_sets
            .iter()
            .map(|values| {
                Ok(SlotPlan {
                    model: self.model_index(&values.slot)?,
                    slot_vector: table.phrase_vector(&values.slot)?,
                    values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let nets: Vec<_> = self.models.iter().map(|m| m.bind(&mut tape)).collect();
        let logits = unroll_dialogue(&mut tape, &nets, &features, &plans)?;
        Ok(logits
            .iter()
            .map(|row| {
                row.iter()
                    .zip(value_sets)
                    .map(|(&l, values)| SlotDistribution::from_logits(&values.slot, &values.names, tape.value(l).data()))
                    .collect()
            })
            .collect())
    }

    pub fn initial_state(&self) -> TrackerState<T> {
        TrackerState::zeros(self.config.lstm_hidden)
    }

    /// Streams one turn for one slot, updating `state` in place.
    pub fn track_turn(
        &self,
        turn: &Turn,
        values: &ValueSet<T>,
        state: &mut TrackerState<T>,
        table: &EmbeddingTable,
    ) -> Result<SlotDistribution> {
        self.check_table(table)?;
        let features: TurnFeatures<T> = featurize_turn(turn, table, &self.vocab, self.config.feature_settings());
        self.track_features(&features, values, state, table)
    }

    /// Like [`Tracker::track_turn`] on pre-computed features.
    pub fn track_features(
        &self,
        features: &TurnFeatures<T>,
        values: &ValueSet<T>,
        state: &mut TrackerState<T>,
        table: &EmbeddingTable,
    ) -> Result<SlotDistribution> {
        let model = &self.models[self.model_index(&values.slot)?];
        let slot_vector = table.phrase_vector(&values.slot)?;
        let mut tape = Tape::new();
        let net = model.bind(&mut tape);
        let f_s = net.slot_feature(&mut tape, &slot_vector)?;
        let f_u = net.user_feature(&mut tape, &features.utterance)?;
        let f_a = net.act_feature(&mut tape, &features.acts)?;
        let i_s = net.turn_feature(&mut tape, f_u, f_a, f_s)?;
        let h = tape.constant(state.hidden.clone());
        let c = tape.constant(state.cell.clone());
        let (o_s, (h, c)) = net.predict_vector(&mut tape, i_s, (h, c))?;
        let logits = net.value_logits(&mut tape, o_s, values)?;
        state.hidden = tape.value(h).clone();
        state.cell = tape.value(c).clone();
        Ok(SlotDistribution::from_logits(&values.slot, &values.names, tape.value(logits).data()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            act_vocabulary: self.vocab.clone(),
            ontology: self.ontology.clone(),
            slot_models: self.slot_models.clone(),
            model_count: self.models.len(),
        };
        let metadata = serde_json::to_string(&meta)?;
        let names: Vec<(String, &Array<T>)> = self
            .models
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.parameters().named_values().map(move |(n, a)| (format!("m{i}.{n}"), a)))
            .collect();
        Ok(checkpoint::encode(&metadata, names.iter().map(|(n, a)| (n.as_str(), *a))))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let container = checkpoint::decode::<T>(bytes)?;
        let meta: CheckpointMeta = serde_json::from_str(&container.metadata)?;
        let mut per_model: Vec<Vec<(String, Array<T>)>> = vec![Vec::new(); meta.model_count];
        for (name, array) in container.entries {
            let (prefix, rest) = name.split_once('.').ok_or_else(|| malformed(&name))?;
            let index: usize = prefix
                .strip_prefix('m')
                .and_then(|i| i.parse().ok())
                .ok_or_else(|| malformed(&name))?;
            per_model
                .get_mut(index)
                .ok_or_else(|| malformed(&name))?
                .push((rest.to_string(), array));
        }
        let models = per_model
            .into_iter()
            .map(|entries| StateNet::from_parameters(meta.config.clone(), ParameterSet::from_named(entries)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(models, meta.act_vocabulary, meta.ontology, meta.slot_models)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&checkpoint::read_file(path)?)
    }
}

fn malformed(name: &str) -> Error {
    Error::Checkpoint(checkpoint::CheckpointError::Malformed(format!("unexpected array name {name:?}")))
}
