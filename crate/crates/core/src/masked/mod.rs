//! Score-carrying prunable layers and the networks built from them.
//!
//! Every prunable weight tensor keeps three same-shaped tensors: frozen
//! weights `theta`, real-valued importance scores, and a binary mask that
//! selects the top-scoring fraction of entries. The forward pass uses
//! `theta * mask` as the effective weight.

mod arch;
mod network;

use std::cmp::Ordering;

use thiserror::Error;

use crate::distributions::DistError;
use crate::tensor::{Scalar, Tensor, TensorError};

pub use arch::{scaled_width, Arch, ArchSpec};
pub use network::{BatchGrads, Layer, MaskedNetwork, Tape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("sparsity p must lie in [0, 1), got {0}")]
    Sparsity(f64),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Number of entries kept out of `n` at sparsity `p`: `ceil((1 - p) * n)`.
///
/// A relative slack of 1e-9 absorbs binary rounding, so that e.g. `p = 0.7`,
/// `n = 10` keeps 3 rather than 4.
pub fn keep_count(p: f64, n: usize) -> usize {
    let exact = (1.0 - p) * n as f64;
    let k = (exact - 1e-9 * exact.max(1.0)).ceil();
    (k.max(0.0) as usize).min(n)
}

fn check_sparsity(p: f64) -> Result<(), NetError> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(NetError::Sparsity(p))
    }
}

/// Writes the top-`keep_count(p, n)` mask of `scores` into `mask`.
///
/// Order is by score descending, ties broken toward the lower flat index, so
/// the result is deterministic. `scratch` is reused between calls.
pub fn mask_into<T: Scalar>(
    scores: &[T],
    p: f64,
    mask: &mut [T],
    scratch: &mut Vec<u32>,
) -> Result<(), NetError> {
    check_sparsity(p)?;
    assert_eq!(scores.len(), mask.len());
    let n = scores.len();
    let k = keep_count(p, n);
    mask.iter_mut().for_each(|m| *m = T::zero());
    if k == 0 {
        return Ok(());
    }
    if k == n {
        mask.iter_mut().for_each(|m| *m = T::one());
        return Ok(());
    }
    scratch.clear();
    scratch.extend(0..n as u32);
    let order = |&a: &u32, &b: &u32| -> Ordering {
        let (sa, sb) = (scores[a as usize].as_f64(), scores[b as usize].as_f64());
        sb.total_cmp(&sa).then(a.cmp(&b))
    };
    scratch.select_nth_unstable_by(k - 1, order);
    for &i in &scratch[..k] {
        mask[i as usize] = T::one();
    }
    Ok(())
}

/// Binary mask keeping the top `100 (1 - p)%` of `scores`.
pub fn calculate_mask<T: Scalar>(scores: &Tensor<T>, p: f64) -> Result<Tensor<T>, NetError> {
    let mut mask = Tensor::zeros(scores.shape());
    mask_into(scores.data(), p, mask.data_mut(), &mut Vec::new())?;
    Ok(mask)
}

/// Frozen weights, their importance scores and the current mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredParam<T> {
    pub theta: Tensor<T>,
    pub scores: Tensor<T>,
    pub mask: Tensor<T>,
    pub sparsity: f64,
}

impl<T: Scalar> ScoredParam<T> {
    pub fn new(theta: Tensor<T>, scores: Tensor<T>, sparsity: f64) -> Result<Self, NetError> {
        theta.expect_same_shape(&scores, "scored_param")?;
        let mask = calculate_mask(&scores, sparsity)?;
        Ok(Self {
            theta,
            scores,
            mask,
            sparsity,
        })
    }

    pub fn shape(&self) -> &[usize] {
        self.theta.shape()
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Recomputes the mask from the current scores.
    pub fn refresh_mask(&mut self, scratch: &mut Vec<u32>) -> Result<(), NetError> {
        mask_into(self.scores.data(), self.sparsity, self.mask.data_mut(), scratch)
    }

    pub fn kept(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != T::zero()).count()
    }

    /// `theta * mask`.
    pub fn effective_weight(&self) -> Tensor<T> {
        Tensor::from_fn(self.theta.shape(), |i| self.theta.data()[i] * self.mask.data()[i])
    }

    /// Straight-through score gradient from the gradient with respect to the
    /// effective weight: `d loss / d s_i = theta_i * g_i`, for every entry
    /// whether or not it is currently kept.
    pub fn score_gradient(&self, weight_grad: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.theta.zip_map(weight_grad, "score_gradient", |t, g| t * g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_of(scores: &[f64], p: f64) -> Vec<f64> {
        let s = Tensor::<f64>::from_f64(&[scores.len()], scores).unwrap();
        calculate_mask(&s, p).unwrap().into_data()
    }

    #[test]
    fn top_half() {
        assert_eq!(mask_of(&[0.9, 0.1, 0.5, 0.7], 0.5), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        assert_eq!(mask_of(&[0.3, -2.0, 0.0], 0.0), vec![1.0; 3]);
    }

    #[test]
    fn ties_keep_lowest_index() {
        assert_eq!(mask_of(&[0.5; 4], 0.75), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(mask_of(&[0.1, 0.5, 0.5, 0.5, 0.9], 0.6), vec![0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_out_of_range_sparsity() {
        let s = Tensor::<f64>::zeros(&[4]);
        assert_eq!(calculate_mask(&s, 1.0), Err(NetError::Sparsity(1.0)));
        assert_eq!(calculate_mask(&s, -0.1), Err(NetError::Sparsity(-0.1)));
    }

    #[test]
    fn keep_count_uses_ceiling() {
        assert_eq!(keep_count(0.5, 4), 2);
        assert_eq!(keep_count(0.5, 5), 3);
        assert_eq!(keep_count(0.7, 10), 3);
        assert_eq!(keep_count(0.9, 10), 1);
        assert_eq!(keep_count(0.99, 10), 1);
        assert_eq!(keep_count(0.0, 7), 7);
        assert_eq!(keep_count(0.3, 784 * 256), 140_493);
    }

    #[test]
    fn score_gradient_is_theta_times_weight_grad() {
        let theta = Tensor::<f64>::from_f64(&[3], &[2.0, -1.0, 0.5]).unwrap();
        let scores = Tensor::<f64>::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap();
        let param = ScoredParam::new(theta, scores, 0.5).unwrap();
        let g = Tensor::<f64>::from_f64(&[3], &[1.0, 4.0, -2.0]).unwrap();
        assert_eq!(param.score_gradient(&g).unwrap().data(), &[2.0, -4.0, -1.0]);
    }

    proptest! {
        #[test]
        fn popcount_matches_keep_count(
            scores in prop::collection::vec(-10.0f64..10.0, 1..300),
            p in 0.0f64..0.999,
        ) {
            let m = mask_of(&scores, p);
            let ones = m.iter().filter(|&&v| v == 1.0).count();
            prop_assert_eq!(ones, keep_count(p, scores.len()));
            prop_assert!(ones >= 1);
        }

        #[test]
        fn kept_scores_dominate_pruned(
            scores in prop::collection::vec(-10.0f64..10.0, 2..200),
            p in 0.0f64..0.99,
        ) {
            let m = mask_of(&scores, p);
            let min_kept = scores.iter().zip(&m).filter(|(_, &k)| k == 1.0).map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
            let max_pruned = scores.iter().zip(&m).filter(|(_, &k)| k == 0.0).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_kept >= max_pruned);
        }

        #[test]
        fn permutation_equivariant(
            seed in any::<u64>(),
            n in 2usize..100,
            p in 0.0f64..0.99,
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // distinct values
            let mut scores: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 - 5.0).collect();
            scores.shuffle(&mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let m = mask_of(&scores, p);
            let pm = mask_of(&permuted, p);
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(pm[j], m[i]);
            }
        }
    }
}
