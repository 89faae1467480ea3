//! Per-slot and joint goal accuracy over turns.
//!
//! Every turn counts, including turns whose gold labels are all `none`. A
//! turn is jointly correct iff the argmax of every slot equals its gold
//! value. A gold value missing from the evaluated value set can never be
//! predicted and so counts as wrong.

use std::io::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::corpus::{dialogues_digest, Dialogue, Ontology};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::ValueSet;
use crate::tracker::Tracker;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_slot_accuracy: IndexMap<String, f64>,
    pub joint_accuracy: f64,
    pub turn_count: usize,
    /// SHA-256 of the evaluated dialogues; reports are comparable only when
    /// digests agree.
    pub corpus_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogues: Option<Vec<DialogueBreakdown>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueBreakdown {
    pub id: String,
    pub turn_count: usize,
    pub joint_correct: usize,
    pub slot_correct: IndexMap<String, usize>,
}

/// One row of the per-turn CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub dialogue: String,
    pub turn: usize,
    pub slot: String,
    pub gold: String,
    pub predicted: String,
    /// Probability of the predicted value.
    pub probability: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub breakdown: bool,
    pub turn_records: bool,
}

/// Differences `b − a` between two reports on the same corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub per_slot_accuracy: IndexMap<String, f64>,
    pub joint_accuracy: f64,
}

fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Evaluates `tracker` on `dialogues` with the value sets of `ontology`.
pub fn evaluate<T: Scalar>(
    tracker: &Tracker<T>,
    dialogues: &[Dialogue],
    ontology: &Ontology,
    table: &EmbeddingTable,
) -> Result<EvalReport> {
    let value_sets = tracker.value_sets(ontology, table)?;
    Ok(evaluate_with(tracker, dialogues, &value_sets, table, EvalOptions::default())?.0)
}

/// Evaluation on prepared value sets, optionally collecting a per-dialogue
/// breakdown and per-turn records.
pub fn evaluate_with<T: Scalar>(
    tracker: &Tracker<T>,
    dialogues: &[Dialogue],
    value_sets: &[ValueSet<T>],
    table: &EmbeddingTable,
    options: EvalOptions,
) -> Result<(EvalReport, Vec<TurnRecord>)> {
    let mut slot_correct = vec![0usize; value_sets.len()];
    let mut joint_correct = 0usize;
    let mut turn_count = 0usize;
    let mut breakdown = Vec::new();
    let mut records = Vec::new();
    for dialogue in dialogues {
        let distributions = tracker.track_dialogue(dialogue, value_sets, table)?;
        let mut local = DialogueBreakdown {
            id: dialogue.id.clone(),
            turn_count: dialogue.turns.len(),
            joint_correct: 0,
            slot_correct: value_sets.iter().map(|v| (v.slot.clone(), 0)).collect(),
        };
        for (t, (turn, row)) in dialogue.turns.iter().zip(&distributions).enumerate() {
            let mut all = true;
            for (s, dist) in row.iter().enumerate() {
                let gold = turn.gold(&dist.slot);
                let predicted = dist.prediction();
                if predicted == gold {
                    slot_correct[s] += 1;
                    local.slot_correct[s] += 1;
                } else {
                    all = false;
                }
                if options.turn_records {
                    records.push(TurnRecord {
                        dialogue: dialogue.id.clone(),
                        turn: t,
                        slot: dist.slot.clone(),
                        gold: gold.to_string(),
                        predicted: predicted.to_string(),
                        probability: dist.probabilities[dist.argmax()],
                    });
                }
            }
            if all {
                joint_correct += 1;
                local.joint_correct += 1;
            }
        }
        turn_count += dialogue.turns.len();
        if options.breakdown {
            breakdown.push(local);
        }
    }
    let report = EvalReport {
        per_slot_accuracy: value_sets
            .iter()
            .zip(&slot_correct)
            .map(|(v, &c)| (v.slot.clone(), ratio(c, turn_count)))
            .collect(),
        joint_accuracy: ratio(joint_correct, turn_count),
        turn_count,
        corpus_digest: dialogues_digest(dialogues),
        dialogues: options.breakdown.then_some(breakdown),
    };
    debug_assert!(report.per_slot_accuracy.values().all(|&a| report.joint_accuracy <= a));
    Ok((report, records))
}

pub fn write_turns_csv<W: Write>(records: &[TurnRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-metric `b − a` over the slots both reports share.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<ReportDelta> {
    if a.corpus_digest != b.corpus_digest || a.turn_count != b.turn_count {
        return Err(Error::CorpusMismatch);
    }
    Ok(ReportDelta {
        per_slot_accuracy: a
            .per_slot_accuracy
            .iter()
            .filter_map(|(slot, &x)| b.per_slot_accuracy.get(slot).map(|&y| (slot.clone(), y - x)))
            .collect(),
        joint_accuracy: b.joint_accuracy - a.joint_accuracy,
    })
}
