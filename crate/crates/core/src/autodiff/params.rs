use std::collections::HashMap;

use rand::Rng;

use super::checkpoint::{self, CheckpointError};
use super::{Array, AutodiffError, Scalar, Tape, Var};

/// Index of an entry in a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterEntry<T: Scalar> {
    pub name: String,
    pub value: Array<T>,
    pub grad: Array<T>,
    /// Adam first moment.
    pub first_moment: Array<T>,
    /// RMSProp / Adam second moment.
    pub second_moment: Array<T>,
}

/// Named trainable arrays plus their gradients and optimizer state.
///
/// Entries keep insertion order, which is also the serialization order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T: Scalar> {
    entries: Vec<ParameterEntry<T>>,
    index: HashMap<String, usize>,
    steps: u64,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            steps: 0,
        }
    }
}

/// Tape variables for every entry of a [`ParameterSet`], indexed by
/// [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Moves every parameter gradient out of `tape`.
    pub fn take_gradients<T: Scalar>(&self, tape: &mut Tape<'_, T>) -> Vec<Option<Array<T>>> {
        self.vars.iter().map(|&v| tape.take_grad(v)).collect()
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let shape = value.shape().to_vec();
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParameterEntry {
            name,
            value,
            grad: Array::zeros(&shape),
            first_moment: Array::zeros(&shape),
            second_moment: Array::zeros(&shape),
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParameterEntry<T>] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParameterEntry<T>] {
        &mut self.entries
    }

    pub fn value(&self, id: ParamId) -> &Array<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array<T> {
        &self.entries[id.0].grad
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Optimizer steps taken so far (drives Adam bias correction).
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn increment_steps(&mut self) -> u64 {
        self.steps += 1;
        self.steps
    }

    /// Registers every entry as a trainable leaf borrowed by `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> Binding {
        Binding {
            vars: self
                .entries
                .iter()
                .map(|e| tape.parameter_ref(&e.value))
                .collect(),
        }
    }

    /// Adds gradients produced by [`Binding::take_gradients`], scaled by
    /// `scale`.
    pub fn accumulate(&mut self, grads: &[Option<Array<T>>], scale: T) {
        for (entry, grad) in self.entries.iter_mut().zip(grads) {
            if let Some(g) = grad {
                for (acc, &v) in entry.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc = *acc + v * scale;
                }
            }
        }
    }

    pub fn zero_gradients(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    /// Clears optimizer moments and the step counter.
    pub fn reset_optimizer_state(&mut self) {
        for e in &mut self.entries {
            e.first_moment.fill(T::zero());
            e.second_moment.fill(T::zero());
        }
        self.steps = 0;
    }

    pub fn gradient_norm(&self) -> T {
        self.entries
            .iter()
            .fold(T::zero(), |acc, e| acc + e.grad.squared_norm())
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_gradients(&mut self, max_norm: T) -> T {
        let norm = self.gradient_norm();
        if norm > max_norm && norm > T::zero() {
            let factor = max_norm / norm;
            for e in &mut self.entries {
                e.grad.data_mut().iter_mut().for_each(|g| *g = *g * factor);
            }
        }
        norm
    }

    /// Uniform initialization in `±1/sqrt(fan_in)`, drawn in entry order.
    pub fn uniform_fan_in<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Array<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        Array::new(shape.to_vec(), data).expect("shape matches length")
    }

    /// Serializes parameter values (not gradients or optimizer state) in the
    /// checkpoint container with empty metadata.
    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode("{}", self.named_values())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let decoded = checkpoint::decode::<T>(bytes)?;
        Self::from_named(decoded.entries)
    }

    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn from_named(entries: Vec<(String, Array<T>)>) -> Result<Self, CheckpointError> {
        let mut set = Self::new();
        for (name, value) in entries {
            set.add(name, value)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut set = ParameterSet::<f32>::new();
        set.add("w", Array::zeros(&[2])).unwrap();
        assert!(matches!(
            set.add("w", Array::zeros(&[3])),
            Err(AutodiffError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn bind_backward_accumulate() {
        let mut set = ParameterSet::<f64>::new();
        let w = set.add("w", Array::from_f64(&[3.0])).unwrap();
        let grads = {
            let mut tape = Tape::new();
            let binding = set.bind(&mut tape);
            let x = binding.var(w);
            let sq = tape.mul(x, x).unwrap();
            tape.backward(sq).unwrap();
            binding.take_gradients(&mut tape)
        };
        set.accumulate(&grads, 0.5);
        assert_eq!(set.grad(w).data(), &[3.0]);
        set.zero_gradients();
        assert_eq!(set.grad(w).data(), &[0.0]);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut set = ParameterSet::<f64>::new();
        let w = set.add("w", Array::from_f64(&[0.0, 0.0])).unwrap();
        set.accumulate(&[Some(Array::from_f64(&[3.0, 4.0]))], 1.0);
        let before = set.clip_gradients(1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((set.gradient_norm() - 1.0).abs() < 1e-12);
        assert!((set.grad(w).data()[0] - 0.6).abs() < 1e-12);
    }
}
