//! Model inputs: n-gram utterance representations built from score-weighted
//! ASR word vectors, and bag-of-n-grams counts over serialized machine acts.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::autodiff::{Array, Scalar};
use crate::corpus::{prepare_hypotheses, serialize_machine_acts, AsrHypothesis, Dialogue, MachineAct, Turn};
use crate::embeddings::EmbeddingTable;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("cannot build an act vocabulary from an empty training set")]
    EmptyTrainingSet,
    #[error("training machine acts contain no tokens; the act vocabulary would be empty")]
    EmptyActVocabulary,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

/// Lowercases, drops apostrophes, turns other punctuation into spaces and
/// splits on whitespace.
pub fn tokenize_utterance(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|&c| c != '\'' && c != '’')
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_lowercase).collect()
}

/// `r_u^k` for every gram order `k = 1..=n`; gram `k` has length `k·dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRepresentation<T: Scalar> {
    per_gram: Vec<Array<T>>,
}

impl<T: Scalar> UtteranceRepresentation<T> {
    pub fn order(&self) -> usize {
        self.per_gram.len()
    }

    /// Representation of gram order `k` (1-based).
    pub fn gram(&self, k: usize) -> &Array<T> {
        &self.per_gram[k - 1]
    }

    pub fn grams(&self) -> &[Array<T>] {
        &self.per_gram
    }
}

/// Position-wise score-weighted sum of word vectors across hypotheses.
/// Hypotheses shorter than the longest contribute zero vectors at the
/// padded positions. Scores are expected to be normalized already.
pub fn weighted_word_vectors<T: Scalar>(hypotheses: &[AsrHypothesis], table: &EmbeddingTable) -> Vec<Vec<T>> {
    let longest = hypotheses.iter().map(|h| h.tokens.len()).max().unwrap_or(0);
    let mut out = vec![vec![T::zero(); table.dim()]; longest];
    for h in hypotheses {
        let weight = T::lit(h.score);
        for (slot, word) in out.iter_mut().zip(&h.tokens) {
            table.add_word(word, weight, slot);
        }
    }
    out
}

/// `r_u^k = Σ_i (u'_i ⊕ … ⊕ u'_{i+k−1})` for `k = 1..=n`. Utterances shorter
/// than `k` are right-padded with zero vectors so exactly one k-gram exists.
pub fn ngram_utterance_rep<T: Scalar>(vectors: &[Vec<T>], n: usize, dim: usize) -> UtteranceRepresentation<T> {
    let per_gram = (1..=n)
        .map(|k| {
            let mut acc = vec![T::zero(); k * dim];
            let windows = vectors.len().saturating_sub(k) + 1;
            for start in 0..windows {
                for offset in 0..k {
                    if let Some(v) = vectors.get(start + offset) {
                        let block = &mut acc[offset * dim..(offset + 1) * dim];
                        for (a, &x) in block.iter_mut().zip(v) {
                            *a = *a + x;
                        }
                    }
                }
            }
            Array::vector(acc)
        })
        .collect();
    UtteranceRepresentation { per_gram }
}

/// Frozen vocabulary of machine-act n-grams, orders `1..=m_act`, each order
/// sorted lexicographically. Feature index = position in the concatenation
/// of all orders.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActVocabulary {
    orders: Vec<Vec<Vec<String>>>,
    index: HashMap<Vec<String>, usize>,
}

impl ActVocabulary {
    pub fn from_orders(orders: Vec<Vec<Vec<String>>>) -> Self {
        let index = orders
            .iter()
            .flatten()
            .cloned()
            .enumerate()
            .map(|(i, gram)| (gram, i))
            .collect();
        Self { orders, index }
    }

    pub fn max_order(&self) -> usize {
        self.orders.len()
    }

    pub fn order(&self, j: usize) -> &[Vec<String>] {
        &self.orders[j - 1]
    }

    /// Total feature count.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index_of(&self, gram: &[String]) -> Option<usize> {
        self.index.get(gram).copied()
    }
}

impl Serialize for ActVocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.orders.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActVocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Self::from_orders(Vec::deserialize(d)?))
    }
}

/// Collects every contiguous j-gram (`j ≤ m_act`) of the serialized machine
/// acts in the training dialogues.
pub fn build_act_vocabulary<'a>(
    training: impl IntoIterator<Item = &'a Dialogue>,
    m_act: usize,
) -> Result<ActVocabulary, FeatureError> {
    if m_act == 0 {
        return Err(FeatureError::ZeroOrder);
    }
    let mut sets = vec![BTreeSet::new(); m_act];
    let mut any = false;
    for dialogue in training {
        any = true;
        for turn in &dialogue.turns {
            let tokens = serialize_machine_acts(&turn.acts);
            for (j, set) in sets.iter_mut().enumerate() {
                for gram in tokens.windows(j + 1) {
                    set.insert(gram.to_vec());
                }
            }
        }
    }
    if !any {
        return Err(FeatureError::EmptyTrainingSet);
    }
    let orders: Vec<Vec<Vec<String>>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
    if orders.iter().all(Vec::is_empty) {
        return Err(FeatureError::EmptyActVocabulary);
    }
    Ok(ActVocabulary::from_orders(orders))
}

/// Counts of the vocabulary's n-grams in one turn's machine acts; n-grams
/// outside the vocabulary are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct ActRepresentation<T: Scalar> {
    pub counts: Array<T>,
}

pub fn act_representation<T: Scalar>(acts: &[MachineAct], vocab: &ActVocabulary) -> ActRepresentation<T> {
    let mut counts = vec![T::zero(); vocab.len().max(1)];
    let tokens = serialize_machine_acts(acts);
    for j in 1..=vocab.max_order() {
        for gram in tokens.windows(j) {
            if let Some(i) = vocab.index_of(gram) {
                counts[i] = counts[i] + T::one();
            }
        }
    }
    ActRepresentation {
        counts: Array::vector(counts),
    }
}

/// Everything the model consumes from one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnFeatures<T: Scalar> {
    pub utterance: UtteranceRepresentation<T>,
    pub acts: ActRepresentation<T>,
}

/// Input settings that turn raw turns into [`TurnFeatures`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSettings {
    pub utterance_order: usize,
    pub asr_m_best: usize,
}

pub fn featurize_turn<T: Scalar>(
    turn: &Turn,
    table: &EmbeddingTable,
    vocab: &ActVocabulary,
    settings: FeatureSettings,
) -> TurnFeatures<T> {
    let hyps = prepare_hypotheses(&turn.asr, settings.asr_m_best);
    let weighted = weighted_word_vectors(&hyps, table);
    TurnFeatures {
        utterance: ngram_utterance_rep(&weighted, settings.utterance_order, table.dim()),
        acts: act_representation(&turn.acts, vocab),
    }
}

pub fn featurize_dialogue<T: Scalar>(
    dialogue: &Dialogue,
    table: &EmbeddingTable,
    vocab: &ActVocabulary,
    settings: FeatureSettings,
) -> Vec<TurnFeatures<T>> {
    dialogue
        .turns
        .iter()
        .map(|t| featurize_turn(t, table, vocab, settings))
        .collect()
}
