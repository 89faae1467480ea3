mod common;

use common::*;
use indexmap::IndexMap;
use statenet::autodiff::{CheckpointError, Real};
use statenet::corpus::{Dialogue, Ontology};
use statenet::evaluation::{evaluate, evaluate_with, write_turns_csv, EvalOptions};
use statenet::featurizer::build_act_vocabulary;
use statenet::model::StateNet;
use statenet::synthetic::ToyCorpus;
use statenet::tracker::Tracker;
use statenet::training::{train, Regime};
use statenet::Error;

fn trained(regime: Regime) -> (ToyCorpus, Tracker<Real>) {
    let toy = toy();
    let table = toy.table();
    let config = quick_config(regime, 3);
    let tracker = train::<Real>(data(&toy, &table), &slots(&toy.ontology), &config, &mut |_| Ok(()))
        .unwrap()
        .tracker;
    (toy, tracker)
}

/// Tracker that always predicts `none`: the output layer emits zero.
fn always_none(toy: &ToyCorpus) -> Tracker<Real> {
    let vocab = build_act_vocabulary(&toy.dialogues, 3).unwrap();
    let config = small_model().resolve(16, vocab.len()).unwrap();
    let mut net = StateNet::<Real>::new(config, &mut rng(4)).unwrap();
    let w = net.parameters().id("output.weight").unwrap();
    net.parameters_mut().value_mut(w).fill(0.0);
    Tracker::shared(net, vocab, toy.ontology.clone()).unwrap()
}

fn with_goals(dialogue: &Dialogue, goal: &[(&str, &str)]) -> Dialogue {
    let mut d = dialogue.clone();
    for turn in &mut d.turns {
        turn.goal = goal.iter().map(|(s, v)| (s.to_string(), v.to_string())).collect();
    }
    d
}

#[test]
fn checkpoint_round_trip_preserves_bytes_and_predictions() {
    for regime in [Regime::Shared, Regime::Separate] {
        let (toy, tracker) = trained(regime);
        let table = toy.table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        tracker.save(&path).unwrap();
        let loaded = Tracker::<Real>::load(&path).unwrap();
        assert_eq!(loaded.to_bytes().unwrap(), tracker.to_bytes().unwrap());
        assert_eq!(
            evaluate(&loaded, &toy.dialogues, &toy.ontology, &table).unwrap(),
            evaluate(&tracker, &toy.dialogues, &toy.ontology, &table).unwrap()
        );
    }
}

#[test]
fn loading_with_the_wrong_precision_fails() {
    let (_, tracker) = trained(Regime::Shared);
    let bytes = tracker.to_bytes().unwrap();
    type Other = <Real as OtherPrecision>::Other;
    match Tracker::<Other>::from_bytes(&bytes) {
        Err(Error::Checkpoint(CheckpointError::PrecisionMismatch { .. })) => {}
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("loaded a checkpoint of the other precision"),
    }
}

trait OtherPrecision {
    type Other: statenet::autodiff::Scalar;
}
impl OtherPrecision for f32 {
    type Other = f64;
}
impl OtherPrecision for f64 {
    type Other = f32;
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (_, tracker) = trained(Regime::Shared);
    let bytes = tracker.to_bytes().unwrap();
    assert!(Tracker::<Real>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Tracker::<Real>::from_bytes(b"nope").is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(Tracker::<Real>::from_bytes(&bad_magic).is_err());
}

#[test]
fn streaming_turns_matches_whole_dialogue_tracking() {
    let (toy, tracker) = trained(Regime::Shared);
    let table = toy.table();
    let value_sets = tracker.value_sets(&toy.ontology, &table).unwrap();
    for dialogue in toy.dialogues.iter().take(5) {
        let whole = tracker.track_dialogue(dialogue, &value_sets, &table).unwrap();
        for (s, values) in value_sets.iter().enumerate() {
            let mut state = tracker.initial_state();
            for (t, turn) in dialogue.turns.iter().enumerate() {
                let d = tracker.track_turn(turn, values, &mut state, &table).unwrap();
                assert_eq!(d, whole[t][s]);
            }
        }
    }
}

#[test]
fn slots_with_equal_phrase_vectors_track_identically() {
    let (toy, tracker) = trained(Regime::Shared);
    let table = toy.table();
    let values = toy.ontology.values("price").unwrap().to_vec();
    let twins = Ontology::new(
        [("price".to_string(), values.clone()), ("price_".to_string(), values)]
            .into_iter()
            .collect::<IndexMap<_, _>>(),
    )
    .unwrap();
    let value_sets = tracker.value_sets(&twins, &table).unwrap();
    for dialogue in &toy.dialogues {
        for row in tracker.track_dialogue(dialogue, &value_sets, &table).unwrap() {
            assert_eq!(row[0].probabilities, row[1].probabilities);
        }
    }
}

#[test]
fn all_correct_dialogue_has_full_joint_accuracy() {
    let toy = toy();
    let table = toy.table();
    let tracker = always_none(&toy);
    let two_turns = toy.dialogues.iter().find(|d| d.turns.len() == 2).unwrap();
    let d = with_goals(two_turns, &[]);
    let report = evaluate(&tracker, &[d], &toy.ontology, &table).unwrap();
    assert_eq!(report.turn_count, 2);
    assert_eq!(report.joint_accuracy, 1.0);
    assert!(report.per_slot_accuracy.values().all(|&a| a == 1.0));
}

#[test]
fn one_wrong_slot_zeroes_joint_accuracy() {
    let toy = toy();
    let table = toy.table();
    let tracker = always_none(&toy);
    let d = with_goals(&toy.dialogues[0], &[("food", "food1")]);
    let report = evaluate(&tracker, &[d], &toy.ontology, &table).unwrap();
    assert_eq!(report.joint_accuracy, 0.0);
    assert_eq!(report.per_slot_accuracy["food"], 0.0);
    assert_eq!(report.per_slot_accuracy["area"], 1.0);
    assert_eq!(report.per_slot_accuracy["price"], 1.0);
}

#[test]
fn reports_respect_conjunction_bound_and_are_pure() {
    for regime in [Regime::Shared, Regime::Separate] {
        let (toy, tracker) = trained(regime);
        let table = toy.table();
        let a = evaluate(&tracker, &toy.dialogues, &toy.ontology, &table).unwrap();
        let b = evaluate(&tracker, &toy.dialogues, &toy.ontology, &table).unwrap();
        assert_eq!(a, b);
        assert!(a.per_slot_accuracy.values().all(|&s| a.joint_accuracy <= s));
        assert_eq!(a.turn_count, toy.dialogues.iter().map(|d| d.turns.len()).sum::<usize>());
    }
}

#[test]
fn breakdown_and_turn_records_agree_with_totals() {
    let (toy, tracker) = trained(Regime::Shared);
    let table = toy.table();
    let value_sets = tracker.value_sets(&toy.ontology, &table).unwrap();
    let options = EvalOptions {
        breakdown: true,
        turn_records: true,
    };
    let (report, records) = evaluate_with(&tracker, &toy.dialogues, &value_sets, &table, options).unwrap();
    let breakdown = report.dialogues.as_ref().unwrap();
    assert_eq!(breakdown.len(), toy.dialogues.len());
    let joint: usize = breakdown.iter().map(|d| d.joint_correct).sum();
    assert!((joint as f64 / report.turn_count as f64 - report.joint_accuracy).abs() < 1e-12);
    assert_eq!(records.len(), report.turn_count * 3);
    let food_correct = records.iter().filter(|r| r.slot == "food" && r.gold == r.predicted).count();
    assert!((food_correct as f64 / report.turn_count as f64 - report.per_slot_accuracy["food"]).abs() < 1e-12);

    let mut csv = Vec::new();
    write_turns_csv(&records, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), records.len() + 1);
    assert!(text.starts_with("dialogue,turn,slot,gold,predicted,probability"));
}

#[test]
fn separate_tracker_rejects_unknown_slot() {
    let (toy, tracker) = trained(Regime::Separate);
    let table = toy.table();
    let mut map: IndexMap<String, Vec<String>> = toy.ontology.slots().clone();
    map.insert("parking".into(), vec!["none".into()]);
    let extended = Ontology::new(map).unwrap();
    let value_sets = tracker.value_sets(&extended, &table).unwrap();
    assert!(matches!(
        tracker.track_dialogue(&toy.dialogues[0], &value_sets, &table),
        Err(Error::UnknownSlot(s)) if s == "parking"
    ));
}

#[test]
fn embedding_dimension_mismatch_is_reported() {
    let (toy, tracker) = trained(Regime::Shared);
    let small = statenet::embeddings::EmbeddingTable::from_entries(2, [("none", vec![0.0, 0.0])]).unwrap();
    assert!(matches!(
        tracker.featurize(&toy.dialogues[0], &small),
        Err(Error::Dimension { .. })
    ));
}
