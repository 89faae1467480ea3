//! The slot-conditioned tracker network.
//!
//! Per turn and slot:
//!
//! ```text
//! f_u = Linear(ReLU(LayerNorm(Σ_k ⊕_j (W_k^j r_u^k + b_k^j))))   [N_c]
//! f_a = ReLU(Linear(r_a))                                          [N_c]
//! f_s = ReLU(Linear(s))                                            [2N_c]
//! i_s = f_s ⊙ (f_u ⊕ f_a)                                          [2N_c]
//! o_s = ReLU(Linear(LSTM(i_s, q_{t−1})))                           [N_w]
//! p_s(v) = softmax_v(−‖o_s − v‖)
//! ```
//!
//! No parameter shape depends on the number of slots or values, so one
//! [`StateNet`] can serve every slot and any value set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Binding, LstmWeights, ParamId, ParameterSet, Scalar, Tape, Var};
use crate::corpus::NONE_VALUE;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::featurizer::{ActRepresentation, FeatureSettings, UtteranceRepresentation};

/// Architecture hyperparameters. Field names follow their role; the
/// comments give the conventional symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// N_c
    pub receptor_width: usize,
    /// N_w, must equal the embedding table dimension.
    pub embedding_dim: usize,
    /// n
    pub utterance_order: usize,
    /// m_act
    pub act_order: usize,
    /// Number of ASR hypotheses kept per turn.
    pub asr_m_best: usize,
    /// c
    pub receptors_per_order: usize,
    /// d_h
    pub lstm_hidden: usize,
    /// Size of the frozen act vocabulary.
    pub act_input_dim: usize,
    pub layer_norm_epsilon: f64,
    pub distance_epsilon: f64,
}

/// Data-independent part of [`ModelConfig`], as it appears in training
/// configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelHyperparams {
    pub receptor_width: usize,
    pub utterance_order: usize,
    pub act_order: usize,
    pub asr_m_best: usize,
    pub receptors_per_order: usize,
    /// Defaults to `2 · receptor_width`.
    pub lstm_hidden: Option<usize>,
    pub layer_norm_epsilon: f64,
    pub distance_epsilon: f64,
}

impl Default for ModelHyperparams {
    fn default() -> Self {
        Self {
            receptor_width: 128,
            utterance_order: 2,
            act_order: 3,
            asr_m_best: 3,
            receptors_per_order: 4,
            lstm_hidden: None,
            layer_norm_epsilon: 1e-5,
            distance_epsilon: 1e-12,
        }
    }
}

impl ModelHyperparams {
    pub fn resolve(&self, embedding_dim: usize, act_input_dim: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            receptor_width: self.receptor_width,
            embedding_dim,
            utterance_order: self.utterance_order,
            act_order: self.act_order,
            asr_m_best: self.asr_m_best,
            receptors_per_order: self.receptors_per_order,
            lstm_hidden: self.lstm_hidden.unwrap_or(2 * self.receptor_width),
            act_input_dim,
            layer_norm_epsilon: self.layer_norm_epsilon,
            distance_epsilon: self.distance_epsilon,
        };
        config.validate()?;
        Ok(config)
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("receptor_width", self.receptor_width),
            ("embedding_dim", self.embedding_dim),
            ("utterance_order", self.utterance_order),
            ("act_order", self.act_order),
            ("asr_m_best", self.asr_m_best),
            ("receptors_per_order", self.receptors_per_order),
            ("lstm_hidden", self.lstm_hidden),
            ("act_input_dim", self.act_input_dim),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::Config {
                    field,
                    message: "must be positive".into(),
                });
            }
        }
        for (field, value) in [
            ("layer_norm_epsilon", self.layer_norm_epsilon),
            ("distance_epsilon", self.distance_epsilon),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config {
                    field,
                    message: "must be a positive finite number".into(),
                });
            }
        }
        Ok(())
    }

    pub fn feature_settings(&self) -> FeatureSettings {
        FeatureSettings {
            utterance_order: self.utterance_order,
            asr_m_best: self.asr_m_best,
        }
    }

    /// Closed-form trainable scalar count of one model.
    pub fn parameter_count(&self) -> usize {
        let (nc, nw, c, dh) = (
            self.receptor_width,
            self.embedding_dim,
            self.receptors_per_order,
            self.lstm_hidden,
        );
        let receptors: usize = (1..=self.utterance_order).map(|k| c * (nc * k * nw + nc)).sum();
        let norm = 2 * c * nc;
        let user_out = nc * c * nc + nc;
        let act = nc * self.act_input_dim + nc;
        let slot = 2 * nc * nw + 2 * nc;
        let lstm = 4 * dh * (2 * nc + dh) + 4 * dh;
        let output = nw * dh + nw;
        receptors + norm + user_out + act + slot + lstm + output
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ParamIds {
    /// `[k−1][j]` → (weight, bias)
    receptors: Vec<Vec<(ParamId, ParamId)>>,
    norm_gain: ParamId,
    norm_bias: ParamId,
    user_w: ParamId,
    user_b: ParamId,
    act_w: ParamId,
    act_b: ParamId,
    slot_w: ParamId,
    slot_b: ParamId,
    lstm_w: ParamId,
    lstm_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Expected (name, shape) of every parameter, in creation order.
fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (nc, nw, c, dh) = (
        config.receptor_width,
        config.embedding_dim,
        config.receptors_per_order,
        config.lstm_hidden,
    );
    let mut layout = Vec::new();
    for k in 1..=config.utterance_order {
        for j in 0..c {
            layout.push((format!("receptor.{k}.{j}.weight"), vec![nc, k * nw]));
            layout.push((format!("receptor.{k}.{j}.bias"), vec![nc]));
        }
    }
    layout.push(("user_norm.gain".into(), vec![c * nc]));
    layout.push(("user_norm.bias".into(), vec![c * nc]));
    layout.push(("user_out.weight".into(), vec![nc, c * nc]));
    layout.push(("user_out.bias".into(), vec![nc]));
    layout.push(("act.weight".into(), vec![nc, config.act_input_dim]));
    layout.push(("act.bias".into(), vec![nc]));
    layout.push(("slot.weight".into(), vec![2 * nc, nw]));
    layout.push(("slot.bias".into(), vec![2 * nc]));
    layout.push(("lstm.weight".into(), vec![4 * dh, 2 * nc + dh]));
    layout.push(("lstm.bias".into(), vec![4 * dh]));
    layout.push(("output.weight".into(), vec![nw, dh]));
    layout.push(("output.bias".into(), vec![nw]));
    layout
}

/// One set of tracker weights.
#[derive(Clone, Debug, PartialEq)]
pub struct StateNet<T: Scalar> {
    config: ModelConfig,
    params: ParameterSet<T>,
    ids: ParamIds,
}

/// LSTM hidden and cell vectors for one (dialogue, slot).
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState<T: Scalar> {
    pub hidden: Array<T>,
    pub cell: Array<T>,
}

impl<T: Scalar> TrackerState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden: Array::zeros(&[hidden]),
            cell: Array::zeros(&[hidden]),
        }
    }
}

impl<T: Scalar> StateNet<T> {
    /// Fresh weights: uniform `±1/sqrt(fan_in)` for weight matrices, zero
    /// biases, unit layer-norm gain and a forget-gate bias of one.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        for (name, shape) in parameter_layout(&config) {
            let value = if name.ends_with(".weight") {
                ParameterSet::uniform_fan_in(rng, &shape, shape[1])
            } else if name == "user_norm.gain" {
                Array::filled(&shape, T::one())
            } else if name == "lstm.bias" {
                let h = config.lstm_hidden;
                let mut b = Array::zeros(&shape);
                b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = T::one());
                b
            } else {
                Array::zeros(&shape)
            };
            params.add(name, value)?;
        }
        Self::from_parameters(config, params)
    }

    /// Wraps existing weights after checking every name and shape.
    pub fn from_parameters(config: ModelConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Config {
                field: "parameters",
                message: format!("expected {} arrays, found {}", layout.len(), params.len()),
            });
        }
        for (name, shape) in &layout {
            let id = params.id(name).ok_or_else(|| Error::Config {
                field: "parameters",
                message: format!("missing array {name:?}"),
            })?;
            if params.value(id).shape() != shape.as_slice() {
                return Err(Error::Config {
                    field: "parameters",
                    message: format!("{name}: expected shape {shape:?}, found {:?}", params.value(id).shape()),
                });
            }
        }
        let id = |name: &str| params.id(name).expect("checked above");
        let receptors = (1..=config.utterance_order)
            .map(|k| {
                (0..config.receptors_per_order)
                    .map(|j| (id(&format!("receptor.{k}.{j}.weight")), id(&format!("receptor.{k}.{j}.bias"))))
                    .collect()
            })
            .collect();
        let ids = ParamIds {
            receptors,
            norm_gain: id("user_norm.gain"),
            norm_bias: id("user_norm.bias"),
            user_w: id("user_out.weight"),
            user_b: id("user_out.bias"),
            act_w: id("act.weight"),
            act_b: id("act.bias"),
            slot_w: id("slot.weight"),
            slot_b: id("slot.bias"),
            lstm_w: id("lstm.weight"),
            lstm_b: id("lstm.bias"),
            out_w: id("output.weight"),
            out_b: id("output.bias"),
        };
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn into_parameters(self) -> ParameterSet<T> {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn initial_state(&self) -> TrackerState<T> {
        TrackerState::zeros(self.config.lstm_hidden)
    }

    /// Registers the weights on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> BoundNet<'a, T> {
        BoundNet {
            net: self,
            binding: self.params.bind(tape),
        }
    }

    /// `f_u` for one utterance representation.
    pub fn user_feature(&self, rep: &UtteranceRepresentation<T>) -> Result<Array<T>> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let out = net.user_feature(&mut tape, rep)?;
        Ok(tape.value(out).clone())
    }

    /// `f_a` for one act representation.
    pub fn act_feature(&self, rep: &ActRepresentation<T>) -> Result<Array<T>> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let out = net.act_feature(&mut tape, rep)?;
        Ok(tape.value(out).clone())
    }

    /// `f_s` for a slot name, via its phrase vector.
    pub fn slot_feature(&self, slot: &str, table: &EmbeddingTable) -> Result<Array<T>> {
        let vector = table.phrase_vector(slot)?;
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let out = net.slot_feature(&mut tape, &vector)?;
        Ok(tape.value(out).clone())
    }

    /// One recurrent step from a turn feature: returns `o_s` and the next
    /// state.
    pub fn predict_vector(&self, turn_feature: &Array<T>, state: &TrackerState<T>) -> Result<(Array<T>, TrackerState<T>)> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let i_s = tape.constant(turn_feature.clone());
        let h = tape.constant(state.hidden.clone());
        let c = tape.constant(state.cell.clone());
        let (o, (h, c)) = net.predict_vector(&mut tape, i_s, (h, c))?;
        Ok((
            tape.value(o).clone(),
            TrackerState {
                hidden: tape.value(h).clone(),
                cell: tape.value(c).clone(),
            },
        ))
    }
}

/// A [`StateNet`] whose weights are leaves on a tape.
pub struct BoundNet<'a, T: Scalar> {
    net: &'a StateNet<T>,
    binding: Binding,
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { what, expected, found });
    }
    Ok(())
}

impl<'a, T: Scalar> BoundNet<'a, T> {
    pub fn binding(&self) -> &Binding {
        &self.binding
    }

    pub fn net(&self) -> &'a StateNet<T> {
        self.net
    }

    fn var(&self, id: ParamId) -> Var {
        self.binding.var(id)
    }

    pub fn user_feature(&self, tape: &mut Tape<'a, T>, rep: &UtteranceRepresentation<T>) -> Result<Var> {
        let config = &self.net.config;
        check_len("utterance gram order", config.utterance_order, rep.order())?;
        let ids = &self.net.ids;
        let mut per_gram = Vec::with_capacity(config.utterance_order);
        for (k, receptors) in ids.receptors.iter().enumerate() {
            let gram = rep.gram(k + 1);
            check_len("utterance gram length", (k + 1) * config.embedding_dim, gram.len())?;
            let x = tape.constant(gram.clone());
            let outs = receptors
                .iter()
                .map(|&(w, b)| tape.linear(x, self.var(w), self.var(b)))
                .collect::<Result<Vec<_>, _>>()?;
            per_gram.push(tape.concat(&outs)?);
        }
        let summed = tape.sum(&per_gram)?;
        let eps = T::lit(config.layer_norm_epsilon);
        let normed = tape.layer_norm(summed, self.var(ids.norm_gain), self.var(ids.norm_bias), eps)?;
        let active = tape.relu(normed);
        Ok(tape.linear(active, self.var(ids.user_w), self.var(ids.user_b))?)
    }

    pub fn act_feature(&self, tape: &mut Tape<'a, T>, rep: &ActRepresentation<T>) -> Result<Var> {
        check_len("act representation", self.net.config.act_input_dim, rep.counts.len())?;
        let x = tape.constant(rep.counts.clone());
        let pre = tape.linear(x, self.var(self.net.ids.act_w), self.var(self.net.ids.act_b))?;
        Ok(tape.relu(pre))
    }

    pub fn slot_feature(&self, tape: &mut Tape<'a, T>, slot_vector: &Array<T>) -> Result<Var> {
        check_len("slot vector", self.net.config.embedding_dim, slot_vector.len())?;
        let x = tape.constant(slot_vector.clone());
        let pre = tape.linear(x, self.var(self.net.ids.slot_w), self.var(self.net.ids.slot_b))?;
        Ok(tape.relu(pre))
    }

    pub fn turn_feature(&self, tape: &mut Tape<'a, T>, user: Var, act: Var, slot: Var) -> Result<Var> {
        turn_feature_var(tape, user, act, slot)
    }

    /// LSTM step, output projection and ReLU. Returns `(o_s, (h, c))`.
    pub fn predict_vector(&self, tape: &mut Tape<'a, T>, turn_feature: Var, state: (Var, Var)) -> Result<(Var, (Var, Var))> {
        let ids = &self.net.ids;
        check_len("tracker state", self.net.config.lstm_hidden, tape.value(state.0).len())?;
        let weights = LstmWeights {
            weight: self.var(ids.lstm_w),
            bias: self.var(ids.lstm_b),
        };
        let (h, c) = tape.lstm_cell(turn_feature, state.0, state.1, weights)?;
        let projected = tape.linear(h, self.var(ids.out_w), self.var(ids.out_b))?;
        Ok((tape.relu(projected), (h, c)))
    }

    /// Negative distances from `o_s` to each value vector, as one logit
    /// vector in value-set order.
    pub fn value_logits(&self, tape: &mut Tape<'a, T>, prediction: Var, values: &ValueSet<T>) -> Result<Var> {
        let eps = T::lit(self.net.config.distance_epsilon);
        let mut logits = Vec::with_capacity(values.len());
        for v in &values.vectors {
            let vv = tape.constant(v.clone());
            logits.push(tape.neg_l2_distance(prediction, vv, eps)?);
        }
        Ok(tape.concat(&logits)?)
    }
}

fn turn_feature_var<T: Scalar>(tape: &mut Tape<'_, T>, user: Var, act: Var, slot: Var) -> Result<Var> {
    let joined = tape.concat(&[user, act])?;
    check_len("slot feature", tape.value(joined).len(), tape.value(slot).len())?;
    Ok(tape.mul(slot, joined)?)
}

/// `i_s = f_s ⊙ (f_u ⊕ f_a)`.
pub fn turn_feature<T: Scalar>(user: &Array<T>, act: &Array<T>, slot: &Array<T>) -> Result<Array<T>> {
    let mut tape = Tape::new();
    let (u, a, s) = (
        tape.constant(user.clone()),
        tape.constant(act.clone()),
        tape.constant(slot.clone()),
    );
    let out = turn_feature_var(&mut tape, u, a, s)?;
    Ok(tape.value(out).clone())
}

/// Candidate values of one slot with their phrase vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSet<T: Scalar> {
    pub slot: String,
    pub names: Vec<String>,
    pub vectors: Vec<Array<T>>,
}

impl<T: Scalar> ValueSet<T> {
    pub fn new(slot: &str, names: &[String], table: &EmbeddingTable) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyValueSet(slot.into()));
        }
        if !names.iter().any(|n| n == NONE_VALUE) {
            return Err(Error::MissingNone(slot.into()));
        }
        let vectors = names
            .iter()
            .map(|n| table.phrase_vector(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            slot: slot.into(),
            names: names.to_vec(),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.names.iter().position(|n| n == value)
    }
}

/// Probability of each candidate value of one slot at one turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDistribution {
    pub slot: String,
    pub values: Vec<String>,
    pub probabilities: Vec<f64>,
}

impl SlotDistribution {
    /// Builds the distribution from negative-distance logits.
    pub fn from_logits<T: Scalar>(slot: &str, values: &[String], logits: &[T]) -> Self {
        let as_f64: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
        Self {
            slot: slot.into(),
            values: values.to_vec(),
            probabilities: crate::autodiff::softmax(&as_f64),
        }
    }

    /// Index of the most probable value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    pub fn prediction(&self) -> &str {
        &self.values[self.argmax()]
    }

    pub fn probability_of(&self, value: &str) -> Option<f64> {
        self.values.iter().position(|v| v == value).map(|i| self.probabilities[i])
    }
}

/// `p(v) = softmax(−‖o_s − v‖)` over a value set.
pub fn value_distribution<T: Scalar>(prediction: &Array<T>, values: &ValueSet<T>, distance_epsilon: f64) -> Result<SlotDistribution> {
    if values.is_empty() {
        return Err(Error::EmptyValueSet(values.slot.clone()));
    }
    let mut tape = Tape::new();
    let o = tape.constant(prediction.clone());
    let mut logits = Vec::with_capacity(values.len());
    for v in &values.vectors {
        check_len("value vector", prediction.len(), v.len())?;
        let vv = tape.constant(v.clone());
        let d = tape.neg_l2_distance(o, vv, T::lit(distance_epsilon))?;
        logits.push(tape.value(d).item());
    }
    Ok(SlotDistribution::from_logits(&values.slot, &values.names, &logits))
}
