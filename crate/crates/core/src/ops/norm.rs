//! Batch normalization without learnable scale or shift.

use crate::tensor::{Result, Scalar, Tensor, TensorError};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Per-channel normalization over `[N, C, ...]`, i.e. `(x - mean) / sqrt(var + eps)`.
///
/// Train mode normalizes with batch statistics and folds them into the running
/// estimates by exponential moving average (unbiased variance, as is
/// conventional); eval mode uses the running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    mode: NormMode,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [n, c, rest @ ..] => Ok((*n, *c, rest.iter().product())),
        _ => Err(TensorError::Invalid {
            op: "batchnorm",
            msg: format!("expected [N, C, ...], got {shape:?}"),
        }),
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (n, c, inner) = layout(x.shape())?;
        if c != self.channels() {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                lhs: x.shape().to_vec(),
                rhs: vec![self.channels()],
            });
        }
        if mode == NormMode::Train && n < 2 {
            return Err(TensorError::Invalid {
                op: "batchnorm",
                msg: format!("train mode needs a batch of at least 2, got {n}"),
            });
        }
        let eps = T::of(self.eps);
        let count = n * inner;
        let data = x.data();
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * inner;
                        for &v in &data[base..base + inner] {
                            mean[ch] += v.as_f64();
                        }
                    }
                }
                for m in &mut mean {
                    *m /= count as f64;
                }
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * inner;
                        for &v in &data[base..base + inner] {
                            let d = v.as_f64() - mean[ch];
                            sq[ch] += d * d;
                        }
                    }
                }
                let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
                let m = self.momentum;
                for ch in 0..c {
                    let unbiased = sq[ch] / (count as f64 - 1.0).max(1.0);
                    self.running_mean[ch] =
                        T::of((1.0 - m) * self.running_mean[ch].as_f64() + m * mean[ch]);
                    self.running_var[ch] =
                        T::of((1.0 - m) * self.running_var[ch].as_f64() + m * unbiased);
                }
                (
                    mean.into_iter().map(T::of).collect::<Vec<_>>(),
                    var.into_iter().map(T::of).collect::<Vec<_>>(),
                )
            }
            NormMode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = Tensor::zeros(x.shape());
        let od = out.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                for i in base..base + inner {
                    od[i] = (data[i] - mean[ch]) * inv_std[ch];
                }
            }
        }
        let cache = BatchNormCache {
            normalized: out.clone(),
            inv_std,
            mode,
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        cache.normalized.expect_same_shape(grad_out, "batchnorm_backward")?;
        let (n, c, inner) = layout(grad_out.shape())?;
        let g = grad_out.data();
        let mut gx = Tensor::zeros(grad_out.shape());
        let gxd = gx.data_mut();
        match cache.mode {
            NormMode::Eval => {
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * inner;
                        for i in base..base + inner {
                            gxd[i] = g[i] * cache.inv_std[ch];
                        }
                    }
                }
            }
            NormMode::Train => {
                let xhat = cache.normalized.data();
                let count = T::of((n * inner) as f64);
                for ch in 0..c {
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for s in 0..n {
                        let base = (s * c + ch) * inner;
                        for i in base..base + inner {
                            sum_g = sum_g + g[i];
                            sum_gx = sum_gx + g[i] * xhat[i];
                        }
                    }
                    let mean_g = sum_g / count;
                    let mean_gx = sum_gx / count;
                    for s in 0..n {
                        let base = (s * c + ch) * inner;
                        for i in base..base + inner {
                            gxd[i] = cache.inv_std[ch] * (g[i] - mean_g - xhat[i] * mean_gx);
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_grad_close, central_difference, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, inner) = layout(t.shape()).unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|s| t.data()[(s * c + ch) * inner..(s * c + ch + 1) * inner].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[8, 3, 4, 4], &mut rng).map(|v| 5.0 * v + 2.0);
        let mut bn = BatchNorm::<f64>::new(3);
        let (y, _) = bn.forward(&x, NormMode::Train).unwrap();
        for ch in 0..3 {
            let (_, raw_var) = channel_moments(&x, ch);
            let (m, v) = channel_moments(&y, ch);
            assert!(m.abs() < 1e-5);
            // undo the eps shrinkage before comparing to 1
            assert!((v * (raw_var + BN_EPS) / raw_var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_gives_zero() {
        let x = Tensor::<f64>::full(&[4, 2], 3.0);
        let mut bn = BatchNorm::<f64>::new(2);
        let (y, _) = bn.forward(&x, NormMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[3, 5], &mut rng);
        let mut bn = BatchNorm::<f64>::new(5);
        let (y, _) = bn.forward(&x, NormMode::Eval).unwrap();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-15);
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn train_needs_two_samples() {
        let mut bn = BatchNorm::<f64>::new(2);
        assert!(bn.forward(&Tensor::zeros(&[1, 2]), NormMode::Train).is_err());
        assert!(bn.forward(&Tensor::zeros(&[1, 2]), NormMode::Eval).is_ok());
    }

    #[test]
    fn running_stats_follow_ema() {
        let x = Tensor::<f64>::from_f64(&[2, 1], &[1.0, 3.0]).unwrap();
        let mut bn = BatchNorm::<f64>::new(1);
        bn.forward(&x, NormMode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1, 3} is 2
        assert!((bn.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..20 {
            let shape: &[usize] = if trial % 2 == 0 { &[4, 3] } else { &[3, 2, 2, 3] };
            let x = random_tensor(shape, &mut rng);
            let probe = random_tensor(shape, &mut rng);
            for mode in [NormMode::Train, NormMode::Eval] {
                let mut bn = BatchNorm::<f64>::new(shape[1]);
                bn.running_var.iter_mut().for_each(|v| *v = 0.7);
                let frozen = bn.clone();
                let (_, cache) = bn.forward(&x, mode).unwrap();
                let g = bn.backward(&cache, &probe).unwrap();
                let n = central_difference(&x, |t| {
                    let mut b = frozen.clone();
                    let (y, _) = b.forward(t, mode).unwrap();
                    y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
                });
                assert_grad_close(&g, &n, 1e-5);
            }
        }
    }
}
