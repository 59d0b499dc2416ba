//! SGD with momentum and weight decay, and the learning-rate schedules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptError {
    #[error("step {step} is past the schedule length {total}")]
    PastEnd { step: usize, total: usize },
    #[error("optimizer has {expected} buffers, got {actual} tensors")]
    BufferCount { expected: usize, actual: usize },
    #[error("buffer {index} has {expected} entries, tensor has {actual}")]
    BufferShape {
        index: usize,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

/// `0.5 * eta0 * (1 + cos(pi * t / total))` for `0 <= t <= total`.
pub fn cosine_lr(t: usize, total: usize, eta0: f64) -> Result<f64, OptError> {
    if t > total {
        return Err(OptError::PastEnd { step: t, total });
    }
    if total == 0 {
        return Ok(eta0);
    }
    Ok(0.5 * eta0 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()))
}

/// One step of classic momentum on `params` in place:
/// `g' = g + lambda * s; v = mu * v + g'; s -= eta * v`.
pub fn sgd_momentum_step<T: Scalar>(params: &mut [T], grad: &[T], velocity: &mut [T], eta: f64, lambda: f64, mu: f64) {
    assert!(params.len() == grad.len() && params.len() == velocity.len());
    let (eta, lambda, mu) = (T::of(eta), T::of(lambda), T::of(mu));
    for ((s, &g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v + g + lambda * *s;
        *s = *s - eta * *v;
    }
}

/// Hyperparameters, one velocity buffer per optimized tensor, and the step
/// counter driving the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub eta0: f64,
    pub lambda: f64,
    pub mu: f64,
    pub schedule: Schedule,
    pub velocity: Vec<Vec<T>>,
    pub step: usize,
    pub total_steps: usize,
}

impl<T: Scalar> OptState<T> {
    /// Zero velocity buffers with the given lengths.
    pub fn new(
        eta0: f64,
        lambda: f64,
        mu: f64,
        schedule: Schedule,
        total_steps: usize,
        lens: impl IntoIterator<Item = usize>,
    ) -> Self {
        Self {
            eta0,
            lambda,
            mu,
            schedule,
            velocity: lens.into_iter().map(|n| vec![T::zero(); n]).collect(),
            step: 0,
            total_steps,
        }
    }

    /// Learning rate for the current step.
    pub fn lr(&self) -> Result<f64, OptError> {
        match self.schedule {
            Schedule::Cosine => cosine_lr(self.step, self.total_steps, self.eta0),
            Schedule::Constant => Ok(self.eta0),
        }
    }

    /// Updates every tensor in `params` with its gradient at the current
    /// learning rate, then advances the step counter.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
    ) -> Result<f64, OptError> {
        let eta = self.lr()?;
        let params: Vec<_> = params.into_iter().collect();
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(OptError::BufferCount {
                expected: self.velocity.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (index, ((p, g), v)) in params.into_iter().zip(grads).zip(&mut self.velocity).enumerate() {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(OptError::BufferShape {
                    index,
                    expected: v.len(),
                    actual: if p.len() != v.len() { p.len() } else { g.len() },
                });
            }
            sgd_momentum_step(p.data_mut(), g.data(), v, eta, self.lambda, self.mu);
        }
        self.step += 1;
        Ok(eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.1).unwrap(), 0.1);
        assert!((cosine_lr(50, 100, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(100, 100, 0.1).unwrap().abs() < 1e-15);
        assert_eq!(cosine_lr(101, 100, 0.1), Err(OptError::PastEnd { step: 101, total: 100 }));
    }

    #[test]
    fn one_momentum_step_by_hand() {
        let (mut s, mut v) = (vec![0.5f64], vec![0.0]);
        sgd_momentum_step(&mut s, &[1.0], &mut v, 0.1, 0.0, 0.9);
        assert_eq!(v, vec![1.0]);
        assert!((s[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_still_accumulates_velocity() {
        let (mut s, mut v) = (vec![0.5f64], vec![0.0]);
        sgd_momentum_step(&mut s, &[2.0], &mut v, 0.0, 0.0, 0.9);
        sgd_momentum_step(&mut s, &[2.0], &mut v, 0.0, 0.0, 0.9);
        assert_eq!(s, vec![0.5]);
        assert!((v[0] - 3.8).abs() < 1e-15);
    }

    #[test]
    fn two_steps_constant_gradient() {
        let (eta, mu, g) = (0.1, 0.9, 0.7);
        let (mut s, mut v) = (vec![0.0f64], vec![0.0]);
        sgd_momentum_step(&mut s, &[g], &mut v, eta, 0.0, mu);
        sgd_momentum_step(&mut s, &[g], &mut v, eta, 0.0, mu);
        assert!((s[0] + eta * g * (1.0 + (1.0 + mu))).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        let (mut s, mut v) = (vec![2.0f64], vec![0.0]);
        sgd_momentum_step(&mut s, &[0.0], &mut v, 0.5, 0.1, 0.9);
        assert!((v[0] - 0.2).abs() < 1e-15);
        assert!((s[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn state_steps_through_schedule() {
        let mut opt = OptState::<f64>::new(0.2, 0.0, 0.0, Schedule::Cosine, 2, [1]);
        let mut s = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let g = [Tensor::from_f64(&[1], &[1.0]).unwrap()];
        assert_eq!(opt.update([&mut s], &g).unwrap(), 0.2);
        assert!((opt.update([&mut s], &g).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.data()[0] - 0.7).abs() < 1e-12);
        assert!(opt.update([&mut s], &g).unwrap().abs() < 1e-15);
        assert!(opt.update([&mut s], &g).is_err());
    }

    #[test]
    fn state_checks_buffers() {
        let mut opt = OptState::<f64>::new(0.1, 0.0, 0.9, Schedule::Constant, 10, [2]);
        let mut s = Tensor::zeros(&[3]);
        let g = [Tensor::zeros(&[3])];
        assert!(matches!(opt.update([&mut s], &g), Err(OptError::BufferShape { .. })));
        assert!(matches!(opt.update([], &[]), Err(OptError::BufferCount { .. })));
    }

    proptest! {
        #[test]
        fn cosine_is_monotone_and_bounded(total in 1usize..1000, eta0 in 0.0f64..1.0) {
            let mut prev = f64::INFINITY;
            for t in 0..=total {
                let lr = cosine_lr(t, total, eta0).unwrap();
                prop_assert!(lr <= prev + 1e-15 && lr >= -1e-15 && lr <= eta0 + 1e-15);
                prev = lr;
            }
        }
    }
}
