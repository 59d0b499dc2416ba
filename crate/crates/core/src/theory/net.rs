//! Target networks, re-sampled random networks, masks and evaluation grids.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{check_count, TheoryError};

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Bias-free ReLU network `F_l σ(F_{l-1} σ(⋯ σ(F_1 x)))` with every layer
/// of Frobenius norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork {
    dims: Vec<usize>,
    /// Row-major `d_i × d_{i-1}` matrices.
    layers: Vec<Vec<f64>>,
}

impl TargetNetwork {
    pub fn new(dims: Vec<usize>, layers: Vec<Vec<f64>>) -> Result<Self, TheoryError> {
        if dims.len() < 2 || layers.len() != dims.len() - 1 || dims.contains(&0) {
            return Err(TheoryError::Shape(format!(
                "{} layers for dimensions {dims:?}",
                layers.len()
            )));
        }
        for (i, f) in layers.iter().enumerate() {
            if f.len() != dims[i] * dims[i + 1] {
                return Err(TheoryError::Shape(format!(
                    "layer {} has {} entries, expected {}",
                    i + 1,
                    f.len(),
                    dims[i] * dims[i + 1]
                )));
            }
            if let Some(&bad) = f.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
                return Err(TheoryError::Domain {
                    name: "target weight",
                    value: bad,
                    range: "[-1, 1]",
                });
            }
            let norm = frobenius(f);
            if norm > 1.0 + 1e-12 {
                return Err(TheoryError::Frobenius {
                    layer: i + 1,
                    norm,
                });
            }
        }
        Ok(Self { dims, layers })
    }

    pub fn zero(dims: Vec<usize>) -> Result<Self, TheoryError> {
        let layers = dims.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect();
        Self::new(dims, layers)
    }

    /// Entries drawn from U[-1, 1], each layer rescaled to unit Frobenius norm
    /// when it exceeds one.
    pub fn random(dims: Vec<usize>, rng: &mut impl Rng) -> Result<Self, TheoryError> {
        let layers = dims
            .windows(2)
            .map(|p| random_unit_ball_matrix(p[0] * p[1], rng))
            .collect();
        Self::new(dims, layers)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Row-major matrix of layer `k` (zero-based).
    pub fn layer(&self, k: usize) -> &[f64] {
        &self.layers[k]
    }

    /// Applies layer `k` (zero-based), with the ReLU on all but the last.
    pub fn apply_layer(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let (d_in, d_out) = (self.dims[k], self.dims[k + 1]);
        let last = k + 1 == self.depth();
        (0..d_out)
            .map(|o| {
                let y: f64 = (0..d_in).map(|j| self.layers[k][o * d_in + j] * x[j]).sum();
                if last {
                    y
                } else {
                    relu(y)
                }
            })
            .collect()
    }
}

pub(crate) fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn random_unit_ball_matrix(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut m: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let norm = frobenius(&m);
    if norm > 1.0 {
        m.iter_mut().for_each(|x| *x /= norm);
    }
    m
}

/// Random network `x ↦ V σ(U x)` of shape `d0 → d1 → d2` in which every
/// weight entry carries `r` candidate values drawn from U[-1, 1]: the
/// original draw and its `r - 1` re-samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledPair {
    pub d0: usize,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    /// `[d1][d0][r]`.
    pub u: Vec<f64>,
    /// `[d2][d1][r]`.
    pub v: Vec<f64>,
}

impl ResampledPair {
    pub fn draw(
        d0: usize,
        d1: usize,
        d2: usize,
        r: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TheoryError> {
        let mut sample = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect() };
        let u = sample(d1 * d0 * r);
        let v = sample(d2 * d1 * r);
        Self::from_candidates(d0, d1, d2, r, u, v)
    }

    pub fn from_candidates(
        d0: usize,
        d1: usize,
        d2: usize,
        r: usize,
        u: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self, TheoryError> {
        for (name, n) in [("d0", d0), ("d1", d1), ("d2", d2), ("R", r)] {
            check_count(name, n)?;
        }
        if u.len() != d1 * d0 * r || v.len() != d2 * d1 * r {
            return Err(TheoryError::Shape(format!(
                "candidate lists of {} and {} values for {d0}→{d1}→{d2} with R={r}",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { d0, d1, d2, r, u, v })
    }

    pub fn u_candidates(&self, unit: usize, input: usize) -> &[f64] {
        let at = (unit * self.d0 + input) * self.r;
        &self.u[at..at + self.r]
    }

    pub fn v_candidates(&self, out: usize, unit: usize) -> &[f64] {
        let at = (out * self.d1 + unit) * self.r;
        &self.v[at..at + self.r]
    }
}

/// Binary masks `N` (first layer) and `M` (second layer) plus the chosen
/// candidate index of every entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// `[d1][d0]`.
    pub n_mask: Vec<bool>,
    /// `[d2][d1]`.
    pub m_mask: Vec<bool>,
    pub u_pick: Vec<usize>,
    pub v_pick: Vec<usize>,
}

impl Selection {
    pub fn empty(net: &ResampledPair) -> Self {
        Self {
            n_mask: vec![false; net.d1 * net.d0],
            m_mask: vec![false; net.d2 * net.d1],
            u_pick: vec![0; net.d1 * net.d0],
            v_pick: vec![0; net.d2 * net.d1],
        }
    }

    /// Number of second-layer weights kept.
    pub fn kept(&self) -> usize {
        self.m_mask.iter().filter(|&&m| m).count()
    }
}

/// The masked subnetwork restricted to hidden units that reach an output.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnetwork {
    pub d0: usize,
    pub d2: usize,
    /// Per live unit: effective first-layer row and its kept output weights.
    units: Vec<(Vec<f64>, Vec<(usize, f64)>)>,
}

impl Subnetwork {
    pub fn compile(net: &ResampledPair, sel: &Selection) -> Self {
        let mut units = Vec::new();
        for unit in 0..net.d1 {
            let outs: Vec<(usize, f64)> = (0..net.d2)
                .filter(|&o| sel.m_mask[o * net.d1 + unit])
                .map(|o| (o, net.v_candidates(o, unit)[sel.v_pick[o * net.d1 + unit]]))
                .collect();
            if outs.is_empty() {
                continue;
            }
            let row = (0..net.d0)
                .map(|j| {
                    let e = unit * net.d0 + j;
                    if sel.n_mask[e] {
                        net.u_candidates(unit, j)[sel.u_pick[e]]
                    } else {
                        0.0
                    }
                })
                .collect();
            units.push((row, outs));
        }
        Self {
            d0: net.d0,
            d2: net.d2,
            units,
        }
    }

    pub fn live_units(&self) -> usize {
        self.units.len()
    }

    /// `(V ⊙ M) σ((U ⊙ N) x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.d2];
        for (row, outs) in &self.units {
            let h = relu(row.iter().zip(x).map(|(a, b)| a * b).sum());
            for &(o, v) in outs {
                y[o] += v * h;
            }
        }
        y
    }
}

/// Finite set of inputs in the cube `[-1, 1]^dim` on which sup-norms are taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    points: Vec<f64>,
}

impl Grid {
    pub const AXIS_POINTS: usize = 201;
    pub const SAMPLE_POINTS: usize = 10_000;

    /// Full tensor grid with `per_axis` equispaced points per coordinate.
    pub fn uniform(dim: usize, per_axis: usize) -> Self {
        assert!(dim >= 1 && per_axis >= 2);
        let axis: Vec<f64> = (0..per_axis)
            .map(|i| -1.0 + 2.0 * i as f64 / (per_axis - 1) as f64)
            .collect();
        let n = per_axis.pow(dim as u32);
        let mut points = Vec::with_capacity(n * dim);
        for idx in 0..n {
            let mut rest = idx;
            for _ in 0..dim {
                points.push(axis[rest % per_axis]);
                rest /= per_axis;
            }
        }
        Self { dim, points }
    }

    /// Latin hypercube sample plus the cube's corners when there are few.
    pub fn latin_hypercube(dim: usize, n: usize, rng: &mut impl Rng) -> Self {
        assert!(dim >= 1 && n >= 1);
        let mut columns: Vec<Vec<f64>> = (0..dim)
            .map(|_| {
                let mut strata: Vec<usize> = (0..n).collect();
                strata.shuffle(rng);
                strata
                    .into_iter()
                    .map(|s| -1.0 + 2.0 * (s as f64 + rng.random::<f64>()) / n as f64)
                    .collect()
            })
            .collect();
        let mut points = Vec::with_capacity(n * dim);
        for i in 0..n {
            for col in columns.iter_mut() {
                points.push(col[i]);
            }
        }
        if dim <= 12 {
            for c in 0..1usize << dim {
                points.extend((0..dim).map(|j| if c >> j & 1 == 1 { 1.0 } else { -1.0 }));
            }
        }
        Self { dim, points }
    }

    /// Dense grid up to two dimensions, Latin hypercube beyond.
    pub fn for_dim(dim: usize, rng: &mut impl Rng) -> Self {
        if dim <= 2 {
            Self::uniform(dim, Self::AXIS_POINTS)
        } else {
            Self::latin_hypercube(dim, Self::SAMPLE_POINTS, rng)
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

/// `max_x ‖W x − g(x)‖₂` over the grid, with `W` row-major `d2 × d0`.
pub fn sup_error_linear(w: &[f64], sub: &Subnetwork, grid: &Grid) -> f64 {
    grid.iter()
        .map(|x| {
            let g = sub.eval(x);
            (0..sub.d2)
                .map(|o| {
                    let t: f64 = (0..sub.d0).map(|j| w[o * sub.d0 + j] * x[j]).sum();
                    (t - g[o]) * (t - g[o])
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream_rng;

    #[test]
    fn grid_shapes() {
        let g = Grid::uniform(1, 201);
        assert_eq!(g.len(), 201);
        let xs: Vec<f64> = g.iter().map(|p| p[0]).collect();
        assert_eq!(xs[0], -1.0);
        assert_eq!(xs[100], 0.0);
        assert_eq!(xs[200], 1.0);
        assert_eq!(Grid::uniform(2, 201).len(), 201 * 201);
        let mut rng = substream_rng(0, 1);
        let lhs = Grid::for_dim(3, &mut rng);
        assert_eq!(lhs.len(), 10_000 + 8);
        assert!(lhs.iter().all(|p| p.iter().all(|x| (-1.0..=1.0).contains(x))));
    }

    #[test]
    fn latin_hypercube_strata_filled_once() {
        let mut rng = substream_rng(3, 9);
        let n = 50;
        let g = Grid::latin_hypercube(2, n, &mut rng);
        for j in 0..2 {
            let mut hits = vec![0; n];
            for p in g.iter().take(n) {
                let s = (((p[j] + 1.0) / 2.0 * n as f64) as usize).min(n - 1);
                hits[s] += 1;
            }
            assert!(hits.iter().all(|&h| h == 1));
        }
    }

    #[test]
    fn target_validation() {
        assert!(TargetNetwork::new(vec![1, 1], vec![vec![1.0]]).is_ok());
        assert!(matches!(
            TargetNetwork::new(vec![2, 1], vec![vec![0.8, 0.8]]),
            Err(TheoryError::Frobenius { layer: 1, .. })
        ));
        assert!(TargetNetwork::new(vec![1, 1], vec![vec![1.5]]).is_err());
        assert!(TargetNetwork::new(vec![1, 2], vec![vec![0.1]]).is_err());
        let mut rng = substream_rng(1, 2);
        for _ in 0..20 {
            let t = TargetNetwork::random(vec![3, 4, 2], &mut rng).unwrap();
            assert!(frobenius(t.layer(0)) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn exact_relu_split() {
        let net = ResampledPair::from_candidates(1, 2, 1, 1, vec![1.0, -1.0], vec![0.6, -0.6]).unwrap();
        let sel = Selection {
            n_mask: vec![true; 2],
            m_mask: vec![true; 2],
            u_pick: vec![0; 2],
            v_pick: vec![0; 2],
        };
        let sub = Subnetwork::compile(&net, &sel);
        assert_eq!(sub.live_units(), 2);
        assert_eq!(sup_error_linear(&[0.6], &sub, &Grid::uniform(1, 201)), 0.0);
        let empty = Subnetwork::compile(&net, &Selection::empty(&net));
        assert_eq!(empty.live_units(), 0);
        assert!((sup_error_linear(&[0.6], &empty, &Grid::uniform(1, 201)) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn picks_select_candidates() {
        let net = ResampledPair::from_candidates(1, 1, 1, 3, vec![0.1, 0.5, 0.9], vec![-0.2, 0.3, 0.7]).unwrap();
        let mut sel = Selection::empty(&net);
        sel.n_mask[0] = true;
        sel.m_mask[0] = true;
        sel.u_pick[0] = 2;
        sel.v_pick[0] = 1;
        let sub = Subnetwork::compile(&net, &sel);
        assert!((sub.eval(&[1.0])[0] - 0.27).abs() < 1e-15);
        assert_eq!(sub.eval(&[-1.0])[0], 0.0);
    }
}
