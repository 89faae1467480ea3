mod common;

use common::*;
use proptest::collection::vec;
use proptest::prelude::*;
use statenet::autodiff::{softmax, Array, ParameterSet, Tape};
use statenet::corpus::{normalize_scores, parse_corpus, serialize_machine_acts, AsrHypothesis, Corpus, MachineAct};
use statenet::embeddings::EmbeddingTable;
use statenet::featurizer::{act_representation, build_act_vocabulary, ngram_utterance_rep, weighted_word_vectors};
use statenet::model::{value_distribution, ValueSet};
use statenet::synthetic::{toy_corpus, ToySpec};

const WORDS: [&str; 6] = ["cheap", "food", "in", "the", "north", "thai"];

fn word_table() -> EmbeddingTable {
    let mut r = rng(3);
    EmbeddingTable::from_entries(
        3,
        WORDS.iter().map(|w| (*w, uniform(&mut r, &[3], -1.0, 1.0).data().iter().map(|&x| x as f32).collect())),
    )
    .unwrap()
}

fn hypothesis() -> impl Strategy<Value = AsrHypothesis> {
    (vec(0..WORDS.len(), 1..6), 0.01f64..5.0).prop_map(|(idx, score)| AsrHypothesis {
        tokens: idx.iter().map(|&i| WORDS[i].to_string()).collect(),
        score,
    })
}

fn population_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

const ACT_TYPES: [&str; 4] = ["inform", "request", "confirm", "welcomemsg"];
const ACT_SLOTS: [&str; 3] = ["food", "area", "pricerange"];
const ACT_VALUES: [&str; 3] = ["thai", "north", "cheap"];

fn machine_act() -> impl Strategy<Value = MachineAct> {
    (0..ACT_TYPES.len(), proptest::option::of(0..ACT_SLOTS.len()), proptest::option::of(0..ACT_VALUES.len())).prop_map(
        |(t, s, v)| {
            // A value only ever follows a slot.
            let v = s.and(v);
            MachineAct::new(ACT_TYPES[t], s.map(|i| ACT_SLOTS[i]), v.map(|i| ACT_VALUES[i]))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn layer_norm_standardizes(xs in vec(-2.0f64..2.0, 2..16)) {
        let (_, var) = population_stats(&xs);
        prop_assume!(var >= 1e-2);
        let eps = 1e-5;
        let mut tape = Tape::<f64>::new();
        let n = xs.len();
        let x = tape.constant(Array::from_f64(&xs));
        let g = tape.constant(Array::filled(&[n], 1.0));
        let b = tape.constant(Array::zeros(&[n]));
        let y = tape.layer_norm(x, g, b, eps).unwrap();
        let (mean, out_var) = population_stats(tape.value(y).data());
        prop_assert!(mean.abs() < 1e-6);
        // The epsilon shrinks the variance to var / (var + eps).
        prop_assert!((out_var - var / (var + eps)).abs() < 1e-9);
        if var >= 0.1 {
            prop_assert!((out_var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero(logits in vec(-10.0f64..10.0, 2..10), target in any::<prop::sample::Index>()) {
        let target = target.index(logits.len());
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(Array::from_f64(&logits));
        let loss = tape.softmax_cross_entropy(x, target).unwrap();
        tape.backward(loss).unwrap();
        let sum: f64 = tape.grad(x).unwrap().data().iter().sum();
        prop_assert!(sum.abs() < 1e-6);
    }

    #[test]
    fn parameter_set_bytes_round_trip(shapes in vec(vec(1usize..4, 1..3), 1..5), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut set = ParameterSet::<f32>::new();
        for (i, shape) in shapes.iter().enumerate() {
            let a = uniform(&mut r, shape, -3.0, 3.0);
            let a = Array::new(shape.clone(), a.data().iter().map(|&x| x as f32).collect()).unwrap();
            set.add(format!("p{i}"), a).unwrap();
        }
        let bytes = set.to_bytes();
        let back = ParameterSet::<f32>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn forward_pass_is_deterministic(seed in 0u64..1000) {
        let problem = mini_problem(seed);
        let a = mini_loss(&problem.net, &problem.example, &problem.targets);
        let b = mini_loss(&problem.net, &problem.example, &problem.targets);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn phrase_vector_ignores_token_order(idx in vec(0..WORDS.len(), 1..6), shuffle_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let table = word_table();
        let mut words: Vec<&str> = idx.iter().map(|&i| WORDS[i]).collect();
        let a = table.phrase_vector::<f64>(&words.join(" ")).unwrap();
        words.shuffle(&mut rng(shuffle_seed));
        let b = table.phrase_vector::<f64>(&words.join(" ")).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_scores_sum_to_one_and_keep_rank(hyps in vec(hypothesis(), 1..6)) {
        let out = normalize_scores(&hyps);
        let total: f64 = out.iter().map(|h| h.score).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for i in 0..hyps.len() {
            for j in 0..hyps.len() {
                if hyps[i].score < hyps[j].score {
                    prop_assert!(out[i].score <= out[j].score);
                }
            }
        }
    }

    #[test]
    fn act_serialization_is_injective(a in vec(machine_act(), 0..4), b in vec(machine_act(), 0..4)) {
        if a != b {
            prop_assert_ne!(serialize_machine_acts(&a), serialize_machine_acts(&b));
        }
    }

    #[test]
    fn doubling_scores_changes_nothing(hyps in vec(hypothesis(), 1..4)) {
        let table = word_table();
        let doubled: Vec<AsrHypothesis> = hyps
            .iter()
            .map(|h| AsrHypothesis { tokens: h.tokens.clone(), score: 2.0 * h.score })
            .collect();
        let a: Vec<Vec<f64>> = weighted_word_vectors(&normalize_scores(&hyps), &table);
        let b: Vec<Vec<f64>> = weighted_word_vectors(&normalize_scores(&doubled), &table);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn unigram_representation_is_the_bag_sum(hyps in vec(hypothesis(), 1..4)) {
        let table = word_table();
        let vectors: Vec<Vec<f64>> = weighted_word_vectors(&normalize_scores(&hyps), &table);
        let rep = ngram_utterance_rep(&vectors, 2, 3);
        for d in 0..3 {
            let bag: f64 = vectors.iter().map(|v| v[d]).sum();
            prop_assert!((rep.gram(1).data()[d] - bag).abs() < 1e-12);
        }
    }

    #[test]
    fn single_certain_hypothesis_equals_transcript(idx in vec(0..WORDS.len(), 1..6)) {
        let table = word_table();
        let tokens: Vec<String> = idx.iter().map(|&i| WORDS[i].to_string()).collect();
        let hyp = AsrHypothesis { tokens: tokens.clone(), score: 1.0 };
        let via_asr: Vec<Vec<f64>> = weighted_word_vectors(&[hyp], &table);
        let plain: Vec<Vec<f64>> = tokens.iter().map(|t| table.word_vector::<f64>(t).data().to_vec()).collect();
        prop_assert_eq!(ngram_utterance_rep(&via_asr, 3, 3), ngram_utterance_rep(&plain, 3, 3));
    }

    #[test]
    fn act_features_are_counts_of_fixed_length(acts in vec(machine_act(), 0..5), seed in 0u64..50) {
        let toy = toy_corpus(ToySpec { dialogues: 5, seed, ..Default::default() });
        let vocab = build_act_vocabulary(&toy.dialogues, 3).unwrap();
        let rep = act_representation::<f64>(&acts, &vocab);
        prop_assert_eq!(rep.counts.len(), vocab.len());
        prop_assert!(rep.counts.data().iter().all(|&c| c >= 0.0 && c.fract() == 0.0));
    }

    #[test]
    fn corpus_loading_is_pure(seed in 0u64..200) {
        let toy = toy_corpus(ToySpec { dialogues: 4, seed, ..Default::default() });
        let text = Corpus { ontology: Some(toy.ontology.clone()), dialogues: toy.dialogues.clone() }.to_json();
        let a = parse_corpus(&text, None).unwrap();
        let b = parse_corpus(&text, None).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.dialogues, toy.dialogues);
    }

    #[test]
    fn value_distribution_is_valid_and_permutation_equivariant(
        o in vec(0.0f64..3.0, 3),
        points in vec(vec(-3.0f32..3.0, 3), 1..6),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut names: Vec<String> = (0..points.len()).map(|i| format!("v{i}")).collect();
        names.push("none".into());
        let table = EmbeddingTable::from_entries(
            3,
            names.iter().cloned().zip(points.iter().cloned().chain([vec![0.0; 3]])),
        )
        .unwrap();
        let values = ValueSet::<f64>::new("s", &names, &table).unwrap();
        let prediction = Array::from_f64(&o);
        let d = value_distribution(&prediction, &values, 1e-12).unwrap();
        prop_assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(d.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));

        let mut permuted = names.clone();
        permuted.shuffle(&mut rng(perm_seed));
        let pv = ValueSet::<f64>::new("s", &permuted, &table).unwrap();
        let pd = value_distribution(&prediction, &pv, 1e-12).unwrap();
        for (name, p) in permuted.iter().zip(&pd.probabilities) {
            prop_assert!((d.probability_of(name).unwrap() - p).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(xs in vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&xs);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn repeated_lookups_return_identical_bytes() {
    let table = word_table();
    let first: Vec<u32> = table.lookup("thai").unwrap().iter().map(|x| x.to_bits()).collect();
    for _ in 0..10_000 {
        let again: Vec<u32> = table.lookup("thai").unwrap().iter().map(|x| x.to_bits()).collect();
        assert_eq!(again, first);
    }
}
