#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statenet::autodiff::{Array, AutodiffError, Tape, Var};
use statenet::corpus::Ontology;
use statenet::embeddings::EmbeddingTable;
use statenet::featurizer::build_act_vocabulary;
use statenet::model::{ModelHyperparams, StateNet};
use statenet::synthetic::{toy_corpus, ToyCorpus, ToySpec};
use statenet::training::{
    dialogue_loss, prepare_examples, Example, OptimizerKind, Regime, SlotTargets, TrainingConfig, TrainingData,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array<f64> {
    let len = shape.iter().product();
    Array::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn norm(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = norm(analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied()));
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

pub type Graph = dyn Fn(&mut Tape<'static, f64>, &[Var]) -> Result<Var, AutodiffError>;

fn evaluate(inputs: &[Array<f64>], f: &Graph) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.parameter(a.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.value(loss).item()
}

/// Largest per-input relative error between backprop and central
/// differences of the scalar graph `f`.
pub fn gradient_error(inputs: &[Array<f64>], f: &Graph, step: f64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.parameter(a.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map_or_else(|| vec![0.0; input.len()], |g| g.data().to_vec());
        let mut numeric = Vec::with_capacity(input.len());
        for j in 0..input.len() {
            let mut probe = inputs.to_vec();
            probe[i].data_mut()[j] = input.data()[j] + step;
            let up = evaluate(&probe, f);
            probe[i].data_mut()[j] = input.data()[j] - step;
            let down = evaluate(&probe, f);
            numeric.push((up - down) / (2.0 * step));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Miniature model and a two-turn, two-slot, three-value dialogue.
pub struct MiniProblem {
    pub net: StateNet<f64>,
    pub example: Example<f64>,
    pub targets: SlotTargets<f64>,
}

pub fn mini_problem(seed: u64) -> MiniProblem {
    let toy = (seed..)
        .map(|s| {
            toy_corpus(ToySpec {
                dialogues: 6,
                max_turns: 2,
                slots: 2,
                values_per_slot: 2,
                dim: 4,
                seed: s,
            })
        })
        .find(|t| t.dialogues.iter().any(|d| d.turns.len() == 2))
        .unwrap();
    let table = toy.table();
    let dialogue = toy.dialogues.iter().find(|d| d.turns.len() == 2).unwrap().clone();
    let vocab = build_act_vocabulary(&toy.dialogues, 3).unwrap();
    let hyper = ModelHyperparams {
        receptor_width: 3,
        receptors_per_order: 2,
        utterance_order: 2,
        lstm_hidden: Some(3),
        ..Default::default()
    };
    let config = hyper.resolve(4, vocab.len()).unwrap();
    let mut r = rng(seed);
    let mut net = StateNet::<f64>::new(config.clone(), &mut r).unwrap();
    let names: Vec<String> = net.parameters().entries().iter().map(|e| e.name.clone()).collect();
    for name in names {
        let id = net.parameters().id(&name).unwrap();
        for v in net.parameters_mut().value_mut(id).data_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
    }
    let slots: Vec<String> = toy.ontology.slot_names().map(String::from).collect();
    let targets = SlotTargets::new(&toy.ontology, &slots, &table).unwrap();
    let example = prepare_examples(
        std::slice::from_ref(&dialogue),
        &targets,
        &vocab,
        config.feature_settings(),
        &table,
    )
    .unwrap()
    .pop()
    .unwrap();
    MiniProblem { net, example, targets }
}

pub fn mini_loss(net: &StateNet<f64>, example: &Example<f64>, targets: &SlotTargets<f64>) -> f64 {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let loss = dialogue_loss(&mut tape, &bound, example, targets).unwrap();
    tape.value(loss).item()
}

/// Worst per-tensor relative error of the full dialogue loss gradient.
pub fn model_gradient_error(problem: &mut MiniProblem, step: f64) -> f64 {
    let MiniProblem { net, example, targets } = problem;
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let loss = dialogue_loss(&mut tape, &bound, example, targets).unwrap();
        tape.backward(loss).unwrap();
        bound
            .binding()
            .take_gradients(&mut tape)
            .into_iter()
            .zip(net.parameters().entries())
            .map(|(g, e)| g.map_or_else(|| vec![0.0; e.value.len()], |g| g.data().to_vec()))
            .collect()
    };
    let names: Vec<String> = net.parameters().entries().iter().map(|e| e.name.clone()).collect();
    let mut worst = 0.0f64;
    for (name, analytic) in names.iter().zip(&analytic) {
        let id = net.parameters().id(name).unwrap();
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let original = net.parameters().value(id).data()[j];
            net.parameters_mut().value_mut(id).data_mut()[j] = original + step;
            let up = mini_loss(net, example, targets);
            net.parameters_mut().value_mut(id).data_mut()[j] = original - step;
            let down = mini_loss(net, example, targets);
            net.parameters_mut().value_mut(id).data_mut()[j] = original;
            numeric.push((up - down) / (2.0 * step));
        }
        worst = worst.max(relative_error(analytic, &numeric));
    }
    worst
}

/// Toy corpus used by the overfit, regime and determinism checks.
pub fn toy() -> ToyCorpus {
    toy_corpus(ToySpec::default())
}

pub fn slots(ontology: &Ontology) -> Vec<String> {
    ontology.slot_names().map(String::from).collect()
}

/// Small architecture that trains in seconds on the toy corpus.
pub fn small_model() -> ModelHyperparams {
    ModelHyperparams {
        receptor_width: 32,
        receptors_per_order: 2,
        ..Default::default()
    }
}

pub fn quick_config(regime: Regime, epochs: usize) -> TrainingConfig {
    TrainingConfig {
        regime,
        optimizer: Some(OptimizerKind::Adam),
        learning_rate: Some(0.003),
        batch_size: 4,
        epochs,
        seed: 11,
        pretrain_epochs: epochs,
        model: ModelHyperparams {
            receptor_width: 8,
            ..small_model()
        },
        ..Default::default()
    }
}

pub fn data<'a>(toy: &'a ToyCorpus, table: &'a EmbeddingTable) -> TrainingData<'a> {
    TrainingData {
        train: &toy.dialogues,
        valid: None,
        ontology: &toy.ontology,
        table,
    }
}
