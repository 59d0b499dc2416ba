//! Binomial success-rate estimates.

use serde::{Deserialize, Serialize};

const Z95: f64 = 1.959_963_984_540_054;

/// Success rate over independent trials with a 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    /// Plug-in standard error `sqrt(rate (1 - rate) / trials)`.
    pub sigma: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn from_counts(successes: usize, trials: usize) -> Self {
        assert!(trials > 0 && successes <= trials, "bad counts {successes}/{trials}");
        let n = trials as f64;
        let p = successes as f64 / n;
        let z2 = Z95 * Z95;
        let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
        let half = Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        Self {
            successes,
            trials,
            rate: p,
            sigma: (p * (1.0 - p) / n).sqrt(),
            ci_low: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
            ci_high: if successes == trials { 1.0 } else { (centre + half).min(1.0) },
        }
    }

    pub fn from_flags(flags: &[bool]) -> Self {
        Self::from_counts(flags.iter().filter(|&&f| f).count(), flags.len())
    }
}

/// Two-sigma lower tolerance for a `trials`-trial estimate of a rate that is
/// guaranteed to be at least `p`.
pub fn two_sigma_floor(p: f64, trials: usize) -> f64 {
    p - 2.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_values() {
        assert!((two_sigma_floor(0.95, 2000) - 0.940_253).abs() < 1e-6);
        assert!((two_sigma_floor(0.9, 500) - 0.873_167).abs() < 1e-6);
        assert_eq!(two_sigma_floor(1.0, 10), 1.0);
    }

    #[test]
    fn wilson_interval_contains_rate() {
        for (s, t) in [(0, 10), (10, 10), (3, 7), (950, 1000)] {
            let e = Estimate::from_counts(s, t);
            assert!(e.ci_low <= e.rate && e.rate <= e.ci_high, "{e:?}");
            assert!(e.ci_low >= 0.0 && e.ci_high <= 1.0);
        }
        let e = Estimate::from_counts(0, 10);
        assert_eq!(e.ci_low, 0.0);
        assert!(e.ci_high > 0.2 && e.ci_high < 0.35);
    }

    #[test]
    fn flags_count() {
        let e = Estimate::from_flags(&[true, false, true, true]);
        assert_eq!((e.successes, e.trials), (3, 4));
        assert!((e.sigma - (0.75f64 * 0.25 / 4.0).sqrt()).abs() < 1e-15);
    }
}
