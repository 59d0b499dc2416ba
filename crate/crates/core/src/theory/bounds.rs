//! Closed-form sample counts and widths.

use serde::{Deserialize, Serialize};

use super::{check_count, check_eps, check_open_unit, TheoryError};

fn ceil_at_least_one(x: f64) -> usize {
    (x.ceil() as usize).max(1)
}

/// Number of uniform draws on [-1, 1] needed so that one lands within `eps`
/// of any fixed target with probability at least `1 - delta`.
pub fn required_samples(eps: f64, delta: f64) -> Result<usize, TheoryError> {
    check_open_unit("eps", eps)?;
    check_open_unit("delta", delta)?;
    Ok(ceil_at_least_one(2.0 / eps * (1.0 / delta).ln()))
}

/// Hidden width at which a random one-hidden-layer net contains a subnetwork
/// within `eps` of `x ↦ wx` on [-1, 1], given `r` draws per weight.
pub fn required_width_scalar(eps: f64, delta: f64, r: usize) -> Result<usize, TheoryError> {
    required_width_linear(1, 1, eps, delta, r)
}

/// Hidden width for approximating a `d2 × d0` linear map on the unit cube.
pub fn required_width_linear(
    d0: usize,
    d2: usize,
    eps: f64,
    delta: f64,
    r: usize,
) -> Result<usize, TheoryError> {
    check_eps(eps)?;
    check_open_unit("delta", delta)?;
    check_count("R", r)?;
    check_count("d0", d0)?;
    check_count("d2", d2)?;
    let (d0f, d2f, rf) = (d0 as f64, d2 as f64, r as f64);
    let x = 16.0 * d0f * d0f * d2f / (eps * eps * rf * rf) * (2.0 * d0f * d2f / delta).ln();
    Ok(2 * d0 * ceil_at_least_one(x))
}

/// Required width of one hidden layer of the deep approximating network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerWidth {
    pub width: usize,
    /// Resample count above which the width reaches its floor `2 d_{i-1}`.
    pub collapse_threshold: f64,
    pub collapsed: bool,
}

/// Widths of the odd layers of a `2l`-layer random network that approximates
/// the `l`-layer target with dimensions `dims = [d_0, ..., d_l]`.
pub fn required_width_deep(
    dims: &[usize],
    eps: f64,
    delta: f64,
    r: usize,
) -> Result<Vec<LayerWidth>, TheoryError> {
    check_eps(eps)?;
    check_open_unit("delta", delta)?;
    check_count("R", r)?;
    if dims.len() < 2 {
        return Err(TheoryError::Shape(format!(
            "need at least two dimensions, got {dims:?}"
        )));
    }
    let l = (dims.len() - 1) as f64;
    dims.windows(2)
        .map(|pair| {
            let (prev, next) = (pair[0], pair[1]);
            check_count("d", prev)?;
            check_count("d", next)?;
            let (pf, nf) = (prev as f64, next as f64);
            let log = (2.0 * l * pf * nf / delta).ln();
            let x = 64.0 * l * l * pf * pf * nf / (eps * eps * (r * r) as f64) * log;
            let collapse_threshold = 8.0 * l * pf / eps * (nf * log).sqrt();
            Ok(LayerWidth {
                width: 2 * prev * ceil_at_least_one(x),
                collapse_threshold,
                collapsed: r as f64 > collapse_threshold,
            })
        })
        .collect()
}

/// Maps a re-sampled index `k ∈ {1, ..., d'R}` to its hidden unit.
pub fn projection(k: usize, r: usize) -> usize {
    (k - 1) / r + 1
}

/// Counts ordered index pairs in `{1, ..., d'R}²` that project to the same unit.
pub fn count_projection_pairs(d_prime: usize, r: usize) -> usize {
    let n = d_prime * r;
    (1..=n)
        .map(|a| (1..=n).filter(|&b| projection(a, r) == projection(b, r)).count())
        .sum()
}
