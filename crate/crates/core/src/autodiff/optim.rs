use super::{ParameterSet, Scalar};

/// In-place update rule over a [`ParameterSet`]. Gradients are read, never
/// cleared; callers zero them between steps.
pub trait Optimizer {
    fn step<T: Scalar>(&self, params: &mut ParameterSet<T>);
}

/// `v ← ρ·v + (1−ρ)·g²`, `w ← w − lr·g / (sqrt(v) + ε)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl RmsProp {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            decay: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl Optimizer for RmsProp {
    fn step<T: Scalar>(&self, params: &mut ParameterSet<T>) {
        params.increment_steps();
        let (lr, rho, eps) = (
            T::lit(self.learning_rate),
            T::lit(self.decay),
            T::lit(self.epsilon),
        );
        for e in params.entries_mut() {
            let grads = e.grad.data();
            let sq = e.second_moment.data_mut();
            let ws = e.value.data_mut();
            for ((w, v), &g) in ws.iter_mut().zip(sq.iter_mut()).zip(grads) {
                *v = rho * *v + (T::one() - rho) * g * g;
                *w = *w - lr * g / (v.sqrt() + eps);
            }
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Optimizer for Adam {
    fn step<T: Scalar>(&self, params: &mut ParameterSet<T>) {
        let t = params.increment_steps() as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let lr = T::lit(self.learning_rate);
        let eps = T::lit(self.epsilon);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for e in params.entries_mut() {
            let grads = e.grad.data();
            let m1 = e.first_moment.data_mut();
            let m2 = e.second_moment.data_mut();
            let ws = e.value.data_mut();
            for (((w, m), v), &g) in ws.iter_mut().zip(m1.iter_mut()).zip(m2.iter_mut()).zip(grads) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Array;

    fn single(w: f64) -> ParameterSet<f64> {
        let mut set = ParameterSet::new();
        set.add("w", Array::from_f64(&[w, -w])).unwrap();
        set
    }

    fn set_grad(set: &mut ParameterSet<f64>, g: &[f64]) {
        set.zero_gradients();
        set.accumulate(&[Some(Array::from_f64(g))], 1.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for step in 0..2 {
            let mut set = single(0.25);
            let before = set.clone();
            if step == 0 {
                RmsProp::new(0.1).step(&mut set);
            } else {
                Adam::new(0.1).step(&mut set);
            }
            assert_eq!(set.entries()[0].value, before.entries()[0].value);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut set = single(0.0);
        set_grad(&mut set, &[3.7, -0.02]);
        Adam::new(0.001).step(&mut set);
        for &w in set.entries()[0].value.data() {
            assert!((w.abs() - 0.001).abs() < 1e-9, "{w}");
        }
        assert!(set.entries()[0].value.data()[0] < 0.0);
    }

    /// Independent scalar RMSProp on f(w) = w².
    fn rmsprop_oracle(mut w: f64, lr: f64, steps: usize) -> f64 {
        let mut v = 0.0;
        for _ in 0..steps {
            let g = 2.0 * w;
            v = 0.99 * v + 0.01 * g * g;
            w -= lr * g / (v.sqrt() + 1e-8);
        }
        w
    }

    #[test]
    fn rmsprop_minimizes_square() {
        let oracle = rmsprop_oracle(1.0, 0.05, 200);
        assert!(oracle.abs() < 0.01, "oracle {oracle}");
        let mut set = ParameterSet::<f64>::new();
        let id = set.add("w", Array::from_f64(&[1.0])).unwrap();
        let opt = RmsProp::new(0.05);
        for _ in 0..200 {
            let w = set.value(id).item();
            set_grad(&mut set, &[2.0 * w]);
            opt.step(&mut set);
        }
        let w = set.value(id).item();
        assert!(w.abs() < 0.01);
        assert!((w - oracle).abs() < 1e-12);
    }
}
