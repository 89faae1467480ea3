//! Dialogues, machine acts, ontologies and gold labels.
//!
//! Canonical JSON layout:
//!
//! ```json
//! {
//!   "ontology": { "food": ["none", "italian"], "area": ["north"] },
//!   "dialogues": [
//!     { "id": "d1",
//!       "turns": [
//!         { "asr":   [ { "text": "italian food", "score": 0.9 } ],
//!           "acts":  [ { "type": "request", "slot": "food" } ],
//!           "goal":  { "food": "italian" } } ] } ]
//! }
//! ```
//!
//! `ontology`, `acts` and `goal` may be omitted. Goals are the accumulated
//! user goal at each turn; slots missing from `goal` are `"none"`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::featurizer::tokenize_utterance;

/// Literal value that every slot can take.
pub const NONE_VALUE: &str = "none";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{}", schema_message(.dialogue, .turn, .message))]
    Schema {
        dialogue: String,
        turn: Option<usize>,
        message: String,
    },
    #[error("ontology: {0}")]
    Ontology(String),
}

fn schema_message(dialogue: &str, turn: &Option<usize>, message: &str) -> String {
    match turn {
        Some(t) => format!("dialogue {dialogue:?} turn {t}: {message}"),
        None => format!("dialogue {dialogue:?}: {message}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsrHypothesis {
    pub tokens: Vec<String>,
    pub score: f64,
}

impl AsrHypothesis {
    pub fn new(text: &str, score: f64) -> Self {
        Self {
            tokens: tokenize_utterance(text),
            score,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MachineAct {
    #[serde(rename = "type")]
    pub act_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl MachineAct {
    pub fn new(act_type: &str, slot: Option<&str>, value: Option<&str>) -> Self {
        Self {
            act_type: act_type.into(),
            slot: slot.map(Into::into),
            value: value.map(Into::into),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    /// Best first.
    pub asr: Vec<AsrHypothesis>,
    pub acts: Vec<MachineAct>,
    pub goal: IndexMap<String, String>,
}

impl Turn {
    /// Gold value for `slot`, `"none"` when unspecified.
    pub fn gold(&self, slot: &str) -> &str {
        self.goal.get(slot).map_or(NONE_VALUE, String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// Slots and their ordered candidate values. Every value list holds
/// `"none"` exactly once; it is prepended when a list lacks it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<String, Vec<String>>", into = "IndexMap<String, Vec<String>>")]
pub struct Ontology {
    slots: IndexMap<String, Vec<String>>,
}

impl TryFrom<IndexMap<String, Vec<String>>> for Ontology {
    type Error = CorpusError;

    fn try_from(slots: IndexMap<String, Vec<String>>) -> Result<Self, Self::Error> {
        Self::new(slots)
    }
}

impl From<Ontology> for IndexMap<String, Vec<String>> {
    fn from(o: Ontology) -> Self {
        o.slots
    }
}

impl Ontology {
    pub fn new(slots: IndexMap<String, Vec<String>>) -> Result<Self, CorpusError> {
        let mut checked = IndexMap::new();
        for (slot, values) in slots {
            checked.insert(slot.clone(), Self::check_values(&slot, values)?);
        }
        Ok(Self { slots: checked })
    }

    fn check_values(slot: &str, values: Vec<String>) -> Result<Vec<String>, CorpusError> {
        if slot.trim().is_empty() {
            return Err(CorpusError::Ontology("empty slot name".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &values {
            if v.trim().is_empty() {
                return Err(CorpusError::Ontology(format!("slot {slot:?} has an empty value")));
            }
            if !seen.insert(v.as_str()) {
                return Err(CorpusError::Ontology(format!(
                    "slot {slot:?} lists value {v:?} more than once"
                )));
            }
        }
        if seen.contains(NONE_VALUE) {
            Ok(values)
        } else {
            let mut with_none = Vec::with_capacity(values.len() + 1);
            with_none.push(NONE_VALUE.to_string());
            with_none.extend(values);
            Ok(with_none)
        }
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Ok(serde_json::from_str(&read(path)?)?)
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn slots(&self) -> &IndexMap<String, Vec<String>> {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn values(&self, slot: &str) -> Option<&[String]> {
        self.slots.get(slot).map(Vec::as_slice)
    }

    pub fn value_index(&self, slot: &str, value: &str) -> Option<usize> {
        self.slots.get(slot)?.iter().position(|v| v == value)
    }

    /// Replaces (or adds) the value lists of the given slots.
    pub fn with_overrides(&self, overrides: &IndexMap<String, Vec<String>>) -> Result<Self, CorpusError> {
        let mut slots = self.slots.clone();
        for (slot, values) in overrides {
            slots.insert(slot.clone(), Self::check_values(slot, values.clone())?);
        }
        Ok(Self { slots })
    }

    /// Appends a value to one slot at the end of its list.
    pub fn with_value(&self, slot: &str, value: &str) -> Result<Self, CorpusError> {
        let mut values = self
            .values(slot)
            .ok_or_else(|| CorpusError::Ontology(format!("unknown slot {slot:?}")))?
            .to_vec();
        values.push(value.to_string());
        let mut overrides = IndexMap::new();
        overrides.insert(slot.to_string(), values);
        self.with_overrides(&overrides)
    }

    /// Keeps only `slots`, in the given order.
    pub fn restrict(&self, slots: &[String]) -> Result<Self, CorpusError> {
        let mut kept = IndexMap::new();
        for slot in slots {
            let values = self
                .slots
                .get(slot)
                .ok_or_else(|| CorpusError::Ontology(format!("unknown slot {slot:?}")))?;
            kept.insert(slot.clone(), values.clone());
        }
        Ok(Self { slots: kept })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub ontology: Option<Ontology>,
    pub dialogues: Vec<Dialogue>,
}

#[derive(Deserialize)]
struct RawCorpus {
    #[serde(default)]
    ontology: Option<Value>,
    dialogues: Vec<Value>,
}

#[derive(Serialize, Deserialize)]
struct RawHypothesis {
    text: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    asr: Vec<RawHypothesis>,
    #[serde(default)]
    acts: Vec<MachineAct>,
    #[serde(default)]
    goal: IndexMap<String, String>,
}

#[derive(Serialize)]
struct RawDialogueOut<'a> {
    id: &'a str,
    turns: Vec<RawTurn>,
}

#[derive(Serialize)]
struct RawCorpusOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    ontology: Option<&'a Ontology>,
    dialogues: Vec<RawDialogueOut<'a>>,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn schema(dialogue: &str, turn: Option<usize>, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        dialogue: dialogue.to_string(),
        turn,
        message: message.into(),
    }
}

/// Loads and validates a corpus file. Gold labels are checked against
/// `ontology` when given, else against the file's own ontology if present.
pub fn load_corpus(path: &Path, ontology: Option<&Ontology>) -> Result<Corpus, CorpusError> {
    parse_corpus(&read(path)?, ontology)
}

pub fn parse_corpus(text: &str, ontology: Option<&Ontology>) -> Result<Corpus, CorpusError> {
    let raw: RawCorpus = serde_json::from_str(text)?;
    let file_ontology = match raw.ontology {
        Some(v) => Some(serde_json::from_value::<Ontology>(v)?),
        None => None,
    };
    let check = ontology.or(file_ontology.as_ref());
    let dialogues = raw
        .dialogues
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_dialogue(i, v, check))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus {
        ontology: file_ontology,
        dialogues,
    })
}

fn parse_dialogue(index: usize, value: Value, ontology: Option<&Ontology>) -> Result<Dialogue, CorpusError> {
    let fallback = format!("#{index}");
    let Value::Object(mut obj) = value else {
        return Err(schema(&fallback, None, "dialogue must be an object"));
    };
    let id = match obj.remove("id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s,
        Some(Value::String(_)) => return Err(schema(&fallback, None, "empty dialogue id")),
        Some(_) => return Err(schema(&fallback, None, "\"id\" must be a string")),
        None => return Err(schema(&fallback, None, "missing field \"id\"")),
    };
    let turns = match obj.remove("turns") {
        Some(Value::Array(turns)) => turns,
        Some(_) => return Err(schema(&id, None, "\"turns\" must be an array")),
        None => return Err(schema(&id, None, "missing field \"turns\"")),
    };
    if turns.is_empty() {
        return Err(schema(&id, None, "dialogue has no turns"));
    }
    let turns = turns
        .into_iter()
        .enumerate()
        .map(|(t, v)| parse_turn(&id, t, v, ontology))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dialogue { id, turns })
}

fn parse_turn(id: &str, index: usize, value: Value, ontology: Option<&Ontology>) -> Result<Turn, CorpusError> {
    let raw: RawTurn = serde_json::from_value(value).map_err(|e| schema(id, Some(index), e.to_string()))?;
    if raw.asr.is_empty() {
        return Err(schema(id, Some(index), "turn has no ASR hypotheses"));
    }
    let mut asr = Vec::with_capacity(raw.asr.len());
    for h in raw.asr {
        if !h.score.is_finite() || h.score < 0.0 {
            return Err(schema(id, Some(index), format!("hypothesis score {} must be finite and >= 0", h.score)));
        }
        asr.push(AsrHypothesis::new(&h.text, h.score));
    }
    if let Some(act) = raw.acts.iter().find(|a| a.act_type.trim().is_empty()) {
        return Err(schema(id, Some(index), format!("machine act with empty type: {act:?}")));
    }
    if let Some(ontology) = ontology {
        for (slot, value) in &raw.goal {
            let values = ontology
                .values(slot)
                .ok_or_else(|| schema(id, Some(index), format!("goal slot {slot:?} not in ontology")))?;
            if !values.iter().any(|v| v == value) {
                return Err(schema(
                    id,
                    Some(index),
                    format!("goal value {value:?} for slot {slot:?} not in ontology"),
                ));
            }
        }
    }
    Ok(Turn {
        asr,
        acts: raw.acts,
        goal: raw.goal,
    })
}

impl Corpus {
    /// Canonical JSON for this corpus (tokens re-joined with single spaces).
    pub fn to_json(&self) -> String {
        let out = RawCorpusOut {
            ontology: self.ontology.as_ref(),
            dialogues: self
                .dialogues
                .iter()
                .map(|d| RawDialogueOut {
                    id: &d.id,
                    turns: d
                        .turns
                        .iter()
                        .map(|t| RawTurn {
                            asr: t
                                .asr
                                .iter()
                                .map(|h| RawHypothesis {
                                    text: h.text(),
                                    score: h.score,
                                })
                                .collect(),
                            acts: t.acts.clone(),
                            goal: t.goal.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&out).expect("corpus serializes")
    }

    pub fn turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }
}

/// Hex SHA-256 of the canonical form of `dialogues`; identifies the corpus
/// an evaluation report was computed on.
pub fn dialogues_digest(dialogues: &[Dialogue]) -> String {
    let corpus = Corpus {
        ontology: None,
        dialogues: dialogues.to_vec(),
    };
    let digest = Sha256::digest(corpus.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Scales scores to sum to one; all-zero lists become uniform.
pub fn normalize_scores(hypotheses: &[AsrHypothesis]) -> Vec<AsrHypothesis> {
    let total: f64 = hypotheses.iter().map(|h| h.score).sum();
    let uniform = 1.0 / hypotheses.len().max(1) as f64;
    hypotheses
        .iter()
        .map(|h| AsrHypothesis {
            tokens: h.tokens.clone(),
            score: if total > 0.0 { h.score / total } else { uniform },
        })
        .collect()
}

/// Keeps the first `m_best` hypotheses and renormalizes over them.
pub fn prepare_hypotheses(hypotheses: &[AsrHypothesis], m_best: usize) -> Vec<AsrHypothesis> {
    let kept = &hypotheses[..hypotheses.len().min(m_best.max(1))];
    normalize_scores(kept)
}

/// Flattens machine acts to tokens: for each act, its type, then the slot
/// token, then the value's tokens. `request(food)` → `["request", "food"]`.
pub fn serialize_machine_acts(acts: &[MachineAct]) -> Vec<String> {
    let mut tokens = Vec::new();
    for act in acts {
        tokens.push(act.act_type.trim().to_lowercase());
        if let Some(slot) = &act.slot {
            tokens.push(slot.trim().to_lowercase());
        }
        if let Some(value) = &act.value {
            tokens.extend(value.split_whitespace().map(str::to_lowercase));
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_json(turns: &str) -> String {
        format!(
            r#"{{"ontology": {{"food": ["none", "italian", "chinese"], "area": ["north"]}},
                "dialogues": [{{"id": "d1", "turns": {turns}}}]}}"#
        )
    }

    #[test]
    fn loads_single_turn() {
        let text = corpus_json(r#"[{"asr": [{"text": "Italian food!", "score": 1.0}], "goal": {"food": "italian"}}]"#);
        let c = parse_corpus(&text, None).unwrap();
        assert_eq!(c.dialogues.len(), 1);
        assert_eq!(c.dialogues[0].turns.len(), 1);
        let turn = &c.dialogues[0].turns[0];
        assert_eq!(turn.asr[0].tokens, vec!["italian", "food"]);
        assert_eq!(turn.gold("food"), "italian");
        assert_eq!(turn.gold("area"), "none");
        assert_eq!(c.ontology.unwrap().values("area").unwrap(), &["none", "north"]);
    }

    #[test]
    fn empty_hypotheses_rejected_with_location() {
        let text = corpus_json(r#"[{"asr": [{"text": "hi", "score": 1}]}, {"asr": []}]"#);
        let err = parse_corpus(&text, None).unwrap_err();
        match &err {
            CorpusError::Schema { dialogue, turn, .. } => {
                assert_eq!(dialogue, "d1");
                assert_eq!(*turn, Some(1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("turn 1"));
    }

    #[test]
    fn gold_outside_ontology_rejected() {
        let text = corpus_json(r#"[{"asr": [{"text": "hi", "score": 1}], "goal": {"food": "klingon"}}]"#);
        let err = parse_corpus(&text, None).unwrap_err();
        assert!(err.to_string().contains("klingon"), "{err}");
    }

    #[test]
    fn malformed_turn_names_dialogue_and_turn() {
        let text = corpus_json(r#"[{"asr": [{"text": 3, "score": 1}]}]"#);
        let err = parse_corpus(&text, None).unwrap_err();
        assert!(err.to_string().starts_with("dialogue \"d1\" turn 0"), "{err}");
    }

    #[test]
    fn ontology_invariants() {
        let mut m = IndexMap::new();
        m.insert("food".to_string(), vec!["a".to_string(), "a".to_string()]);
        assert!(Ontology::new(m).is_err());
        let mut m = IndexMap::new();
        m.insert("food".to_string(), vec!["a".to_string(), "none".to_string()]);
        let o = Ontology::new(m).unwrap();
        assert_eq!(o.values("food").unwrap(), &["a", "none"]);
        let o2 = o.with_value("food", "b").unwrap();
        assert_eq!(o2.value_index("food", "b"), Some(2));
        assert!(o.with_value("food", "none").is_err());
    }

    #[test]
    fn normalize_examples() {
        let hyps = vec![AsrHypothesis::new("a", 3.0), AsrHypothesis::new("b", 1.0)];
        let n = normalize_scores(&hyps);
        assert_eq!((n[0].score, n[1].score), (0.75, 0.25));
        let n = normalize_scores(&[AsrHypothesis::new("a", 0.2)]);
        assert_eq!(n[0].score, 1.0);
        let n = normalize_scores(&[AsrHypothesis::new("a", 0.0), AsrHypothesis::new("b", 0.0)]);
        assert_eq!((n[0].score, n[1].score), (0.5, 0.5));
    }

    #[test]
    fn truncation_keeps_top_m() {
        let hyps: Vec<_> = (0..5).map(|i| AsrHypothesis::new("x", 5.0 - i as f64)).collect();
        let kept = prepare_hypotheses(&hyps, 3);
        assert_eq!(kept.len(), 3);
        assert!((kept[0].score - 5.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn serialize_acts_examples() {
        let inform = MachineAct::new("inform", Some("food"), Some("italian"));
        assert_eq!(serialize_machine_acts(std::slice::from_ref(&inform)), vec!["inform", "food", "italian"]);
        assert!(serialize_machine_acts(&[]).is_empty());
        let request = MachineAct::new("request", Some("food"), None);
        assert_eq!(serialize_machine_acts(std::slice::from_ref(&request)), vec!["request", "food"]);
        assert_eq!(
            serialize_machine_acts(&[request, inform]),
            vec!["request", "food", "inform", "food", "italian"]
        );
        let multi = MachineAct::new("inform", Some("food"), Some("modern european"));
        assert_eq!(serialize_machine_acts(&[multi]), vec!["inform", "food", "modern", "european"]);
    }

    #[test]
    fn json_roundtrip_preserves_structure() {
        let text = corpus_json(
            r#"[{"asr": [{"text": "cheap food", "score": 0.6}, {"text": "chinese food", "score": 0.4}],
                 "acts": [{"type": "request", "slot": "food"}], "goal": {"food": "chinese"}}]"#,
        );
        let c = parse_corpus(&text, None).unwrap();
        let again = parse_corpus(&c.to_json(), None).unwrap();
        assert_eq!(c, again);
        assert_eq!(dialogues_digest(&c.dialogues), dialogues_digest(&again.dialogues));
    }
}
