use super::param::ParamSet;
use super::real::Real;

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdamOutcome {
    /// Update applied; carries the gradient norm before clipping.
    Applied { grad_norm: f64 },
    /// Non-finite gradient; parameters and moments untouched.
    Skipped,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(100.0),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    ///
    /// Moments advance for every parameter. A parameter whose gradient is
    /// exactly zero keeps its values.
    pub fn step<T: Real>(&self, set: &mut ParamSet<T>) -> AdamOutcome {
        let finite = set
            .iter()
            .filter_map(|p| p.tensor.grad())
            .all(|g| g.iter().all(|v| v.is_finite()));
        if !finite {
            log::warn!("skipping optimizer step for `{}`: non-finite gradient", set.prefix());
            set.zero_grad();
            return AdamOutcome::Skipped;
        }
        let grad_norm = match self.clip_norm {
            Some(max) => clip_grad_norm(set, max),
            None => set.grad_norm(),
        };
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        for p in set.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = T::from_f64(1.0 - num_traits::Float::powi(self.beta1, t));
            let c2 = T::from_f64(1.0 - num_traits::Float::powi(self.beta2, t));
            let lr = T::from_f64(self.lr);
            let eps = T::from_f64(self.eps);
            let grad = p.tensor.grad().expect("parameters always carry gradients");
            let moves = grad.iter().any(|g| *g != T::zero());
            for (j, &g) in grad.iter().enumerate() {
                p.adam_m[j] = b1 * p.adam_m[j] + (T::one() - b1) * g;
                p.adam_v[j] = b2 * p.adam_v[j] + (T::one() - b2) * g * g;
            }
            if moves {
                let (m, v) = (&p.adam_m, &p.adam_v);
                for (j, x) in p.tensor.data_mut().iter_mut().enumerate() {
                    let mhat = m[j] / c1;
                    let vhat = v[j] / c2;
                    *x -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        set.zero_grad();
        AdamOutcome::Applied { grad_norm }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before rescaling.
pub fn clip_grad_norm<T: Real>(set: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = set.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for p in set.iter_mut() {
            if let Some(g) = p.tensor.grad_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::param::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_set(value: f32) -> (ParamSet<f32>, crate::ndgrad::ParamId) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut set = ParamSet::new("");
        let id = set.add("x", &[1], Init::Zeros, &mut rng);
        set.get_mut(id).tensor.data_mut()[0] = value;
        (set, id)
    }

    #[test]
    fn zero_gradient_leaves_values_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut set = ParamSet::<f32>::new("");
        set.add("w", &[4, 4], Init::Glorot { fan_in: 4, fan_out: 4 }, &mut rng);
        let before = set.clone();
        Adam::new(1e-3).step(&mut set);
        assert!(set.values_equal(&before));
        assert_eq!(set.iter().next().unwrap().step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut set, id) = scalar_set(0.5);
        set.get_mut(id).tensor.grad_mut().unwrap()[0] = 1.0;
        Adam::new(1e-3).step(&mut set);
        // bias-corrected m̂ = v̂ = 1, so the step is lr / (1 + eps)
        let moved = set.get(id).tensor.data()[0] - 0.5;
        assert!((moved + 1e-3).abs() < 1e-7, "moved {moved}");
    }

    #[test]
    fn repeated_unit_gradient_keeps_unit_steps() {
        let (mut set, id) = scalar_set(0.0);
        let adam = Adam::new(1e-3);
        for _ in 0..10 {
            set.get_mut(id).tensor.grad_mut().unwrap()[0] = 1.0;
            adam.step(&mut set);
        }
        let x = set.get(id).tensor.data()[0];
        assert!((x + 1e-2).abs() < 1e-6, "{x}");
        assert_eq!(set.get(id).step_count, 10);
    }

    #[test]
    fn clipping_halves_a_gradient_of_twice_the_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut set = ParamSet::<f32>::new("");
        let id = set.add("w", &[2], Init::Zeros, &mut rng);
        // norm of (120, 160) is 200
        set.get_mut(id).tensor.grad_mut().unwrap().copy_from_slice(&[120.0, 160.0]);
        let norm = clip_grad_norm(&mut set, 100.0);
        assert_eq!(norm, 200.0);
        assert_eq!(set.get(id).tensor.grad().unwrap(), &[60.0, 80.0]);
    }

    #[test]
    fn non_finite_gradient_skips_the_step() {
        let (mut set, id) = scalar_set(0.25);
        set.get_mut(id).tensor.grad_mut().unwrap()[0] = f32::NAN;
        assert_eq!(Adam::new(1e-3).step(&mut set), AdamOutcome::Skipped);
        assert_eq!(set.get(id).tensor.data()[0], 0.25);
        assert_eq!(set.get(id).step_count, 0);
        assert_eq!(set.get(id).tensor.grad().unwrap()[0], 0.0);
    }
}
