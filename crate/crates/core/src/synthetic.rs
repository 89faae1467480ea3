//! Seeded toy restaurant-style corpora for tests, demos and smoke runs.
//!
//! Slots are named `slot{k}` except the first three (`food`, `area`,
//! `price`); values are `{slot}{i}`. Every word gets a distinct
//! non-negative vector and `none` is the zero vector. Each user turn
//! restates every goal value set so far, so the gold value's word always
//! appears in the utterance.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AsrHypothesis, Dialogue, MachineAct, Ontology, Turn, NONE_VALUE};
use crate::embeddings::EmbeddingTable;

const FILLERS: [&str; 8] = ["i", "want", "please", "and", "hello", "thanks", "some", "with"];
const NAMED_SLOTS: [&str; 3] = ["food", "area", "price"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToySpec {
    pub dialogues: usize,
    pub max_turns: usize,
    pub slots: usize,
    /// Candidate values per slot, not counting `none`.
    pub values_per_slot: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            dialogues: 20,
            max_turns: 4,
            slots: 3,
            values_per_slot: 4,
            dim: 16,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub ontology: Ontology,
    pub dialogues: Vec<Dialogue>,
    pub words: Vec<(String, Vec<f32>)>,
}

impl ToyCorpus {
    pub fn table(&self) -> EmbeddingTable {
        EmbeddingTable::from_entries(self.words[0].1.len(), self.words.iter().map(|(w, v)| (w.as_str(), v.clone())))
            .expect("toy vocabulary is non-empty")
    }

    /// The vectors in the whitespace-separated text format.
    pub fn embeddings_text(&self) -> String {
        let mut out = String::new();
        for (word, vector) in &self.words {
            out.push_str(word);
            for v in vector {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn slot_name(k: usize) -> String {
    NAMED_SLOTS.get(k).map_or_else(|| format!("slot{k}"), |s| s.to_string())
}

pub fn toy_corpus(spec: ToySpec) -> ToyCorpus {
    assert!(spec.slots > 0 && spec.values_per_slot > 0 && spec.max_turns > 0 && spec.dim > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slots: Vec<String> = (0..spec.slots).map(slot_name).collect();
    let ontology_map: IndexMap<String, Vec<String>> = slots
        .iter()
        .map(|s| {
            let mut values = vec![NONE_VALUE.to_string()];
            values.extend((0..spec.values_per_slot).map(|i| format!("{s}{i}")));
            (s.clone(), values)
        })
        .collect();
    let ontology = Ontology::new(ontology_map.clone()).expect("toy ontology is valid");

    let mut words = vec![(NONE_VALUE.to_string(), vec![0.0; spec.dim])];
    let mut vocabulary: Vec<String> = FILLERS.iter().map(|s| s.to_string()).collect();
    vocabulary.extend(slots.iter().cloned());
    vocabulary.extend(ontology_map.values().flat_map(|v| v[1..].iter().cloned()));
    for word in vocabulary {
        let vector = (0..spec.dim).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        words.push((word, vector));
    }

    let dialogues = (0..spec.dialogues)
        .map(|d| toy_dialogue(&mut rng, d, &spec, &ontology_map))
        .collect();
    ToyCorpus {
        ontology,
        dialogues,
        words,
    }
}

fn toy_dialogue(
    rng: &mut ChaCha8Rng,
    index: usize,
    spec: &ToySpec,
    ontology: &IndexMap<String, Vec<String>>,
) -> Dialogue {
    let turns = rng.gen_range(1..=spec.max_turns);
    let mut goal: IndexMap<String, String> = IndexMap::new();
    let mut out = Vec::with_capacity(turns);
    for t in 0..turns {
        let acts = if t == 0 {
            vec![MachineAct::new("welcomemsg", None, None)]
        } else {
            let unset: Vec<&String> = ontology.keys().filter(|s| !goal.contains_key(*s)).collect();
            match unset.choose(rng) {
                Some(slot) => vec![MachineAct::new("request", Some(slot), None)],
                None => {
                    let (slot, value) = goal.iter().next().expect("goal set");
                    vec![MachineAct::new("confirm", Some(slot), Some(value))]
                }
            }
        };
        if rng.gen_bool(0.7) {
            let slot = ontology.keys().nth(rng.gen_range(0..ontology.len())).expect("slot");
            let value = ontology[slot][1..].choose(rng).expect("values").clone();
            goal.insert(slot.clone(), value);
        }
        let mut text = vec!["i".to_string(), "want".to_string()];
        for (slot, value) in &goal {
            text.push(value.clone());
            text.push(slot.clone());
            text.push("and".into());
        }
        text.push(FILLERS[rng.gen_range(0..FILLERS.len())].into());
        let best = text.join(" ");
        let mut noisy = text.clone();
        noisy.remove(rng.gen_range(0..noisy.len()));
        out.push(Turn {
            asr: vec![AsrHypothesis::new(&best, 0.8), AsrHypothesis::new(&noisy.join(" "), 0.2)],
            acts,
            goal: goal.clone(),
        });
    }
    Dialogue {
        id: format!("toy-{index:03}"),
        turns: out,
    }
}
