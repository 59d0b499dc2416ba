//! Exhaustive search over every mask and resample choice of a `1 → d → 1` net.

use super::net::{Grid, ResampledPair};
use super::TheoryError;

/// Largest number of mask/resample combinations the oracle will enumerate.
pub const ORACLE_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Minimum over all combinations of `max_x |wx − g(x)|` on the grid.
    pub sup_error: f64,
    /// Per unit: `None` when off, else the `(u index, v index)` used.
    pub picks: Vec<Option<(usize, usize)>>,
    pub evaluated: usize,
}

/// Each hidden unit is either off or on with one of its `R × R` candidate
/// pairs. All `(R² + 1)^d` combinations are evaluated on `grid`.
pub fn brute_force_oracle(net: &ResampledPair, w: f64, grid: &Grid) -> Result<OracleResult, TheoryError> {
    if net.d0 != 1 || net.d2 != 1 || grid.dim != 1 {
        return Err(TheoryError::Shape(format!(
            "oracle needs a 1→d→1 network on a line, got {}→{}→{}",
            net.d0, net.d1, net.d2
        )));
    }
    let (d, r) = (net.d1, net.r);
    let space = ((r * r + 1) as f64).powi(d as i32);
    if space > ORACLE_LIMIT {
        return Err(TheoryError::SearchSpace(space));
    }
    let xs: Vec<f64> = grid.iter().map(|p| p[0]).collect();
    let target: Vec<f64> = xs.iter().map(|x| w * x).collect();
    // contributions[unit][a * r + b][grid point]
    let contributions: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|unit| {
            let us = net.u_candidates(unit, 0);
            let vs = net.v_candidates(0, unit);
            (0..r * r)
                .map(|c| {
                    let (u, v) = (us[c / r], vs[c % r]);
                    xs.iter().map(|x| v * (u * x).max(0.0)).collect()
                })
                .collect()
        })
        .collect();

    let mut best = OracleResult {
        sup_error: f64::INFINITY,
        picks: vec![None; d],
        evaluated: 0,
    };
    let mut sums = vec![vec![0.0; xs.len()]; d + 1];
    let mut choice: Vec<Option<usize>> = vec![None; d];
    descend(0, &contributions, &target, &mut sums, &mut choice, r, &mut best);
    Ok(best)
}

fn descend(
    unit: usize,
    contributions: &[Vec<Vec<f64>>],
    target: &[f64],
    sums: &mut [Vec<f64>],
    choice: &mut [Option<usize>],
    r: usize,
    best: &mut OracleResult,
) {
    let d = contributions.len();
    if unit == d {
        best.evaluated += 1;
        let err = target
            .iter()
            .zip(&sums[d])
            .fold(0.0f64, |m, (t, g)| m.max((t - g).abs()));
        if err < best.sup_error {
            best.sup_error = err;
            best.picks = choice.iter().map(|c| c.map(|c| (c / r, c % r))).collect();
        }
        return;
    }
    let options = std::iter::once(None).chain((0..r * r).map(Some));
    for option in options {
        let (head, tail) = sums.split_at_mut(unit + 1);
        let (prev, next) = (&head[unit], &mut tail[0]);
        match option {
            None => next.copy_from_slice(prev),
            Some(c) => {
                for ((n, p), add) in next.iter_mut().zip(prev).zip(&contributions[unit][c]) {
                    *n = p + add;
                }
            }
        }
        choice[unit] = option;
        descend(unit + 1, contributions, target, sums, choice, r, best);
    }
    choice[unit] = None;
}
