//! Re-randomization of currently pruned weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistError, DistKind, DistSpec};
use crate::masked::MaskedNetwork;
use crate::rng::{stream_rng, Stream, StreamState};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RandomizeError {
    #[error("replacement rate r must lie in [0, 1], got {0}")]
    Rate(f64),
    #[error("K_per must be at least 1")]
    Period,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomizeMode {
    Off,
    Naive,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizeConfig {
    pub mode: RandomizeMode,
    pub r: f64,
    pub k_per: usize,
    pub dist: DistKind,
}

impl RandomizeConfig {
    pub fn off(dist: DistKind) -> Self {
        Self {
            mode: RandomizeMode::Off,
            r: 0.0,
            k_per: 1,
            dist,
        }
    }

    pub fn validate(&self) -> Result<(), RandomizeError> {
        if self.k_per == 0 {
            return Err(RandomizeError::Period);
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(RandomizeError::Rate(self.r));
        }
        Ok(())
    }

    /// Whether the step with zero-based index `k` is followed by a randomization.
    pub fn fires_after(&self, k: usize) -> bool {
        self.mode != RandomizeMode::Off && (k + 1).is_multiple_of(self.k_per)
    }
}

/// Replaces pruned entries of `theta` (where `mask` is 0) by the matching
/// entries of `fresh`, restricted to entries whose `coin` is set when coins
/// are given. Returns the number of replaced entries.
pub fn blend<T: Scalar>(
    theta: &mut Tensor<T>,
    mask: &Tensor<T>,
    fresh: &Tensor<T>,
    coins: Option<&[bool]>,
) -> Result<usize, RandomizeError> {
    theta.expect_same_shape(mask, "blend")?;
    theta.expect_same_shape(fresh, "blend")?;
    let mut replaced = 0;
    for (i, t) in theta.data_mut().iter_mut().enumerate() {
        if mask.data()[i] == T::zero() && coins.is_none_or(|c| c[i]) {
            *t = fresh.data()[i];
            replaced += 1;
        }
    }
    Ok(replaced)
}

/// `theta * m + fresh * (1 - m)`: every pruned entry gets a new draw.
///
/// One draw is taken per entry, kept or not, so the stream position depends
/// only on the tensor size. Returns the number of replaced entries.
pub fn randomize_naive<T: Scalar>(
    theta: &mut Tensor<T>,
    mask: &Tensor<T>,
    dist: &DistSpec,
    rng: &mut impl Rng,
) -> Result<usize, RandomizeError> {
    theta.expect_same_shape(mask, "randomize_naive")?;
    let mut replaced = 0;
    for (t, &m) in theta.data_mut().iter_mut().zip(mask.data()) {
        let fresh = T::of(dist.sample_value(rng));
        if m == T::zero() {
            *t = fresh;
            replaced += 1;
        }
    }
    Ok(replaced)
}

/// `theta * m + (theta * (1 - b) + fresh * b) * (1 - m)` with `b ~ Bernoulli(r)`
/// per entry.
///
/// Fresh values come from `value_rng` exactly as in [`randomize_naive`] and
/// coins from `coin_rng`, one each per entry. With shared generators `r = 1`
/// reproduces [`randomize_naive`] and `r = 0` leaves `theta` untouched.
pub fn randomize_partial<T: Scalar>(
    theta: &mut Tensor<T>,
    mask: &Tensor<T>,
    r: f64,
    dist: &DistSpec,
    value_rng: &mut impl Rng,
    coin_rng: &mut impl Rng,
) -> Result<usize, RandomizeError> {
    if !(0.0..=1.0).contains(&r) {
        return Err(RandomizeError::Rate(r));
    }
    theta.expect_same_shape(mask, "randomize_partial")?;
    let mut replaced = 0;
    for (t, &m) in theta.data_mut().iter_mut().zip(mask.data()) {
        let fresh = T::of(dist.sample_value(value_rng));
        let coin = coin_rng.random::<f64>() < r;
        if m == T::zero() && coin {
            *t = fresh;
            replaced += 1;
        }
    }
    Ok(replaced)
}

/// Owns the randomize and bernoulli-r streams of a run and counts invocations.
#[derive(Debug, Clone)]
pub struct Randomizer {
    pub config: RandomizeConfig,
    seed: u64,
    value_rng: ChaCha8Rng,
    coin_rng: ChaCha8Rng,
    invocations: usize,
}

impl Randomizer {
    pub fn new(config: RandomizeConfig, seed: u64) -> Result<Self, RandomizeError> {
        config.validate()?;
        Ok(Self {
            config,
            seed,
            value_rng: stream_rng(seed, Stream::Randomize),
            coin_rng: stream_rng(seed, Stream::BernoulliR),
            invocations: 0,
        })
    }

    pub fn invocations(&self) -> usize {
        self.invocations
    }

    /// Positions of the two generators, for checkpointing.
    pub fn stream_states(&self) -> [StreamState; 2] {
        [
            StreamState::capture(self.seed, &self.value_rng),
            StreamState::capture(self.seed, &self.coin_rng),
        ]
    }

    /// Rebuilds a randomizer at the recorded generator positions.
    pub fn restore(config: RandomizeConfig, states: [StreamState; 2], invocations: usize) -> Result<Self, RandomizeError> {
        config.validate()?;
        Ok(Self {
            config,
            seed: states[0].seed,
            value_rng: states[0].restore(),
            coin_rng: states[1].restore(),
            invocations,
        })
    }

    /// Randomizes the pruned weights of every prunable layer of `net`.
    /// Scores, masks and anything else are left alone. Returns the number of
    /// replaced weights.
    pub fn apply<T: Scalar>(&mut self, net: &mut MaskedNetwork<T>) -> Result<usize, RandomizeError> {
        let mut replaced = 0;
        for p in net.params_mut() {
            let dist = DistSpec::for_shape(self.config.dist, p.theta.shape())?;
            replaced += match self.config.mode {
                RandomizeMode::Off => 0,
                RandomizeMode::Naive => randomize_naive(&mut p.theta, &p.mask, &dist, &mut self.value_rng)?,
                RandomizeMode::Partial => randomize_partial(
                    &mut p.theta,
                    &p.mask,
                    self.config.r,
                    &dist,
                    &mut self.value_rng,
                    &mut self.coin_rng,
                )?,
            };
        }
        if self.config.mode != RandomizeMode::Off {
            self.invocations += 1;
        }
        Ok(replaced)
    }

    /// Applies [`Self::apply`] if the step with zero-based index `k` triggers it.
    pub fn after_step<T: Scalar>(&mut self, net: &mut MaskedNetwork<T>, k: usize) -> Result<bool, RandomizeError> {
        if self.config.fires_after(k) {
            self.apply(net)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masked::{Arch, ArchSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(v: f64) -> DistSpec {
        DistSpec::new(DistKind::UniformSymmetric(v), 1).unwrap()
    }

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn blend_by_hand() {
        let mut theta = t(&[1.0, 2.0, 3.0]);
        blend(&mut theta, &t(&[1.0, 0.0, 1.0]), &t(&[9.0; 3]), None).unwrap();
        assert_eq!(theta, t(&[1.0, 9.0, 3.0]));
        let mut theta = t(&[1.0, 2.0, 3.0, 4.0]);
        let coins = [true, true, false, true];
        blend(&mut theta, &t(&[1.0, 0.0, 0.0, 0.0]), &t(&[9.0; 4]), Some(&coins)).unwrap();
        assert_eq!(theta, t(&[1.0, 9.0, 3.0, 9.0]));
    }

    #[test]
    fn naive_by_hand() {
        let mut theta = t(&[1.0, 2.0, 3.0]);
        let mask = t(&[1.0, 0.0, 1.0]);
        let n = randomize_naive(&mut theta, &mask, &uniform(9.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(n, 1);
        assert_eq!((theta.data()[0], theta.data()[2]), (1.0, 3.0));
        assert_ne!(theta.data()[1], 2.0);
        assert!(theta.data()[1].abs() <= 9.0);
    }

    #[test]
    fn naive_full_mask_is_identity() {
        let mut theta = t(&[1.0, 2.0, 3.0]);
        randomize_naive(&mut theta, &t(&[1.0; 3]), &uniform(1.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(theta, t(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn naive_empty_mask_equals_fresh_sample() {
        let spec = uniform(1.0);
        let mut theta = t(&[5.0; 8]);
        randomize_naive(&mut theta, &t(&[0.0; 8]), &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let fresh: Tensor<f64> = spec.sample(&[8], &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(theta, fresh);
    }

    #[test]
    fn partial_with_zero_rate_is_identity() {
        let mut theta = t(&[1.0, 2.0, 3.0, 4.0]);
        let mask = t(&[0.0; 4]);
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(randomize_partial(&mut theta, &mask, 0.0, &uniform(1.0), &mut a, &mut b).unwrap(), 0);
        assert_eq!(theta, t(&[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn partial_with_unit_rate_equals_naive() {
        let mask = Tensor::from_fn(&[100], |i| (i % 3 == 0) as u8 as f64);
        let base = Tensor::from_fn(&[100], |i| i as f64);
        let spec = uniform(2.0);
        let mut naive = base.clone();
        randomize_naive(&mut naive, &mask, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut partial = base.clone();
        randomize_partial(
            &mut partial,
            &mask,
            1.0,
            &spec,
            &mut ChaCha8Rng::seed_from_u64(9),
            &mut ChaCha8Rng::seed_from_u64(10),
        )
        .unwrap();
        assert_eq!(naive, partial);
    }

    #[test]
    fn partial_replacement_fraction() {
        let n = 100_000;
        let mut theta = Tensor::<f64>::full(&[n], 7.0);
        let mask = Tensor::zeros(&[n]);
        let replaced = randomize_partial(
            &mut theta,
            &mask,
            0.1,
            &uniform(1.0),
            &mut ChaCha8Rng::seed_from_u64(1),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let frac = replaced as f64 / n as f64;
        assert!((frac - 0.1).abs() <= 0.01, "{frac}");
        assert_eq!(theta.data().iter().filter(|&&v| v != 7.0).count(), replaced);
    }

    #[test]
    fn partial_rejects_bad_rate() {
        let mut theta = t(&[1.0]);
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            randomize_partial(&mut theta, &t(&[0.0]), 1.5, &uniform(1.0), &mut a, &mut b),
            Err(RandomizeError::Rate(1.5))
        );
    }

    #[test]
    fn network_randomization_keeps_kept_weights_scores_and_masks() {
        let spec = ArchSpec::new(Arch::Mlp, 0.125, [1, 8, 8], 10, DistKind::SignedKaimingConstant, 0.5);
        let mut net = spec.build::<f32>(3).unwrap();
        let before = net.clone();
        for mode in [RandomizeMode::Naive, RandomizeMode::Partial] {
            let cfg = RandomizeConfig {
                mode,
                r: 0.5,
                k_per: 1,
                dist: DistKind::SignedKaimingConstant,
            };
            let mut rz = Randomizer::new(cfg, 3).unwrap();
            let n = rz.apply(&mut net).unwrap();
            assert!(n > 0);
            for (a, b) in before.params().zip(net.params()) {
                assert_eq!(a.scores, b.scores);
                assert_eq!(a.mask, b.mask);
                for ((x, y), m) in a.theta.data().iter().zip(b.theta.data()).zip(a.mask.data()) {
                    if *m == 1.0 {
                        assert_eq!(x, y);
                    }
                }
            }
        }
    }

    #[test]
    fn fires_every_k_per_steps() {
        let cfg = RandomizeConfig {
            mode: RandomizeMode::Partial,
            r: 0.1,
            k_per: 300,
            dist: DistKind::KaimingUniform,
        };
        let fired: Vec<usize> = (0..1000).filter(|&k| cfg.fires_after(k)).collect();
        assert_eq!(fired, vec![299, 599, 899]);
        assert!(!(0..1000).any(|k| RandomizeConfig::off(DistKind::KaimingUniform).fires_after(k)));
        let bad = RandomizeConfig { k_per: 0, ..cfg };
        assert_eq!(bad.validate(), Err(RandomizeError::Period));
    }

    #[test]
    fn state_round_trip_continues_streams() {
        let spec = ArchSpec::new(Arch::Mlp, 0.125, [1, 8, 8], 10, DistKind::KaimingUniform, 0.5);
        let cfg = RandomizeConfig {
            mode: RandomizeMode::Partial,
            r: 0.3,
            k_per: 1,
            dist: DistKind::KaimingUniform,
        };
        let mut a = Randomizer::new(cfg, 11).unwrap();
        let mut net_a = spec.build::<f32>(1).unwrap();
        a.apply(&mut net_a).unwrap();
        let mut b = Randomizer::restore(cfg, a.stream_states(), a.invocations()).unwrap();
        let mut net_b = net_a.clone();
        a.apply(&mut net_a).unwrap();
        b.apply(&mut net_b).unwrap();
        assert_eq!(net_a, net_b);
        assert_eq!(b.invocations(), 2);
    }
}
