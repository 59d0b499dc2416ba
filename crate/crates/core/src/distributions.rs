//! Weight and score initialization distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("layer shape {0:?} has no fan-in (need at least 2 non-zero dimensions)")]
    BadShape(Vec<usize>),
    #[error("uniform bound must be positive and finite, got {0}")]
    BadBound(f64),
    #[error("fan-in must be at least 1")]
    ZeroFanIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistKind {
    /// `U[-b, b]`.
    UniformSymmetric(f64),
    /// `U[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
    KaimingUniform,
    /// `±sqrt(2 / fan_in)` with probability one half each.
    SignedKaimingConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistSpec {
    pub kind: DistKind,
    pub fan_in: usize,
}

/// Fan-in of a weight tensor: `in` for a `[out, in]` linear weight and
/// `C * kh * kw` for a `[F, C, kh, kw]` convolution kernel.
pub fn fan_in(shape: &[usize]) -> Result<usize, DistError> {
    if shape.len() < 2 || shape.contains(&0) {
        return Err(DistError::BadShape(shape.to_vec()));
    }
    Ok(shape[1..].iter().product())
}

impl DistSpec {
    pub fn new(kind: DistKind, fan_in: usize) -> Result<Self, DistError> {
        if fan_in == 0 {
            return Err(DistError::ZeroFanIn);
        }
        if let DistKind::UniformSymmetric(b) = kind {
            if !(b > 0.0 && b.is_finite()) {
                return Err(DistError::BadBound(b));
            }
        }
        Ok(Self { kind, fan_in })
    }

    /// Spec for a weight of the given layer shape.
    pub fn for_shape(kind: DistKind, shape: &[usize]) -> Result<Self, DistError> {
        Self::new(kind, fan_in(shape)?)
    }

    /// Largest magnitude a sample can take.
    pub fn bound(&self) -> f64 {
        match self.kind {
            DistKind::UniformSymmetric(b) => b,
            DistKind::KaimingUniform => (6.0 / self.fan_in as f64).sqrt(),
            DistKind::SignedKaimingConstant => (2.0 / self.fan_in as f64).sqrt(),
        }
    }

    pub fn sample_value(&self, rng: &mut impl Rng) -> f64 {
        let b = self.bound();
        match self.kind {
            DistKind::UniformSymmetric(_) | DistKind::KaimingUniform => rng.random_range(-b..=b),
            DistKind::SignedKaimingConstant => {
                if rng.random::<bool>() {
                    b
                } else {
                    -b
                }
            }
        }
    }

    /// i.i.d. draws filling a tensor of `shape`, in row-major order.
    pub fn sample<T: Scalar>(&self, shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::of(self.sample_value(rng)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn fan_in_definitions() {
        assert_eq!(fan_in(&[256, 784]).unwrap(), 784);
        assert_eq!(fan_in(&[64, 3, 3, 3]).unwrap(), 27);
        assert_eq!(fan_in(&[1, 1, 1, 1]).unwrap(), 1);
        assert!(fan_in(&[]).is_err());
        assert!(fan_in(&[5]).is_err());
        assert!(fan_in(&[3, 0]).is_err());
    }

    #[test]
    fn kaiming_uniform_respects_bound() {
        let spec = DistSpec::new(DistKind::KaimingUniform, 6).unwrap();
        let mut rng = stream_rng(1, Stream::InitTheta);
        let t: Tensor<f32> = spec.sample(&[1000], &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        assert!(t.data().iter().any(|v| v.abs() > 0.9));
    }

    #[test]
    fn signed_constant_takes_two_values() {
        let spec = DistSpec::new(DistKind::SignedKaimingConstant, 2).unwrap();
        let mut rng = stream_rng(2, Stream::InitTheta);
        let t: Tensor<f64> = spec.sample(&[1000], &mut rng);
        assert!(t.data().iter().all(|&v| v == 1.0 || v == -1.0));
        let pos = t.data().iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&pos));
    }

    #[test]
    fn uniform_symmetric_law_of_large_numbers() {
        let spec = DistSpec::new(DistKind::UniformSymmetric(1.0), 1).unwrap();
        let mut rng = stream_rng(3, Stream::InitTheta);
        let t: Tensor<f64> = spec.sample(&[100_000], &mut rng);
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn equal_seeds_are_bit_identical() {
        let spec = DistSpec::new(DistKind::KaimingUniform, 27).unwrap();
        let a: Tensor<f32> = spec.sample(&[64, 3, 3, 3], &mut stream_rng(5, Stream::InitScore));
        let b: Tensor<f32> = spec.sample(&[64, 3, 3, 3], &mut stream_rng(5, Stream::InitScore));
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(DistSpec::new(DistKind::KaimingUniform, 0), Err(DistError::ZeroFanIn));
        assert!(DistSpec::new(DistKind::UniformSymmetric(0.0), 1).is_err());
        assert!(DistSpec::new(DistKind::UniformSymmetric(f64::NAN), 1).is_err());
    }
}
