//! Constructive mask search: every target weight `w` is realised through the
//! identity `wx = wσ(x) − wσ(−x)` by one hidden unit with `u ≈ 1, v ≈ w` and
//! one with `u ≈ −1, v ≈ −w`, choosing among each entry's re-sampled values.

use rand::Rng;

use super::bounds::required_width_deep;
use super::net::{sup_error_linear, Grid, ResampledPair, Selection, Subnetwork, TargetNetwork};
use super::{check_eps, check_open_unit, check_positive, TheoryError, SLACK};

struct Search {
    selection: Selection,
    found: usize,
    slots: usize,
}

/// Best qualifying `(error, unit, u index, v index)` for one target entry.
type Candidate = (f64, usize, usize, usize);

fn search(w: &[f64], net: &ResampledPair, eps: f64) -> Result<Search, TheoryError> {
    check_positive("eps", eps)?;
    let (d0, d1, d2) = (net.d0, net.d1, net.d2);
    if w.len() != d2 * d0 {
        return Err(TheoryError::Shape(format!(
            "target has {} entries, network maps {d0}→{d2}",
            w.len()
        )));
    }
    if let Some(&bad) = w.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
        return Err(TheoryError::Domain {
            name: "target weight",
            value: bad,
            range: "[-1, 1]",
        });
    }
    if d1 % d0 != 0 {
        return Err(TheoryError::Divisibility { width: d1, d0 });
    }
    let block = d1 / d0;
    if block % 2 != 0 {
        return Err(TheoryError::OddWidth(block));
    }
    let half = block / 2;
    let tol = eps / d0 as f64 / (2.0 * (d2 as f64).sqrt());

    let mut sel = Selection::empty(net);
    let mut found = 0;
    for j in 0..d0 {
        for unit in j * block..(j + 1) * block {
            sel.n_mask[unit * d0 + j] = true;
        }
        for (sign, start) in [(1.0, j * block), (-1.0, j * block + half)] {
            let units = start..start + half;
            let mut fixed_u: Vec<Option<usize>> = vec![None; half];
            for o in 0..d2 {
                let target = w[o * d0 + j];
                let mut best: Option<Candidate> = None;
                for unit in units.clone() {
                    let us = net.u_candidates(unit, j);
                    let vs = net.v_candidates(o, unit);
                    let u_choices: Vec<usize> = match fixed_u[unit - start] {
                        Some(a) => vec![a],
                        None => (0..net.r).filter(|&a| (us[a] - sign).abs() <= tol).collect(),
                    };
                    for a in u_choices {
                        for (b, &vb) in vs.iter().enumerate() {
                            if (vb - sign * target).abs() > tol {
                                continue;
                            }
                            let err = (target - us[a] * vb).abs();
                            if best.is_none_or(|(e, ..)| err < e) {
                                best = Some((err, unit, a, b));
                            }
                        }
                    }
                }
                if let Some((err, unit, a, b)) = best {
                    found += 1;
                    if err < target.abs() {
                        fixed_u[unit - start] = Some(a);
                        sel.u_pick[unit * d0 + j] = a;
                        sel.m_mask[o * d1 + unit] = true;
                        sel.v_pick[o * d1 + unit] = b;
                    }
                }
            }
        }
    }
    Ok(Search {
        selection: sel,
        found,
        slots: 2 * d0 * d2,
    })
}

/// Witness for a linear map `x ↦ W x` on the cube.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWitness {
    pub selection: Selection,
    pub sup_error: f64,
    /// `sup_error ≤ eps`.
    pub success: bool,
    /// Every (input, output, half) slot had a qualifying pair.
    pub complete: bool,
    pub found: usize,
    pub slots: usize,
}

/// Routes input `j` to its own block of hidden units through `N`, then
/// approximates each entry of `W` within `eps / (2 d0 √d2)` through `M`.
/// `W` is row-major `d2 × d0`; the sup error is taken over `grid`.
pub fn witness_linear_map(
    w: &[f64],
    net: &ResampledPair,
    eps: f64,
    grid: &Grid,
) -> Result<LinearWitness, TheoryError> {
    if grid.dim != net.d0 {
        return Err(TheoryError::Shape(format!(
            "grid of dimension {} for input dimension {}",
            grid.dim, net.d0
        )));
    }
    let s = search(w, net, eps)?;
    let sup_error = sup_error_linear(w, &Subnetwork::compile(net, &s.selection), grid);
    Ok(LinearWitness {
        selection: s.selection,
        sup_error,
        success: sup_error <= eps + SLACK,
        complete: s.found == s.slots,
        found: s.found,
        slots: s.slots,
    })
}

/// Witness for `x ↦ wx` on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarWitness {
    pub mask: Vec<bool>,
    /// Chosen `(u index, v index)` of every kept unit.
    pub picks: Vec<Option<(usize, usize)>>,
    pub sup_error: f64,
    pub success: bool,
    pub complete: bool,
}

pub fn witness_scalar(
    w: f64,
    net: &ResampledPair,
    eps: f64,
    grid: &Grid,
) -> Result<ScalarWitness, TheoryError> {
    if net.d0 != 1 || net.d2 != 1 {
        return Err(TheoryError::Shape(format!(
            "scalar witness needs a 1→d→1 network, got {}→{}→{}",
            net.d0, net.d1, net.d2
        )));
    }
    let lw = witness_linear_map(&[w], net, eps, grid)?;
    let sel = &lw.selection;
    let picks = (0..net.d1)
        .map(|i| sel.m_mask[i].then(|| (sel.u_pick[i], sel.v_pick[i])))
        .collect();
    Ok(ScalarWitness {
        mask: sel.m_mask.clone(),
        picks,
        sup_error: lw.sup_error,
        success: lw.success,
        complete: lw.complete,
    })
}

/// Random `2l`-layer network: one re-sampled pair per target layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepInstance {
    pub layers: Vec<ResampledPair>,
}

impl DeepInstance {
    pub fn draw(
        target: &TargetNetwork,
        widths: &[usize],
        r: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TheoryError> {
        let dims = target.dims();
        if widths.len() != target.depth() {
            return Err(TheoryError::Shape(format!(
                "{} widths for depth {}",
                widths.len(),
                target.depth()
            )));
        }
        let layers = widths
            .iter()
            .enumerate()
            .map(|(k, &h)| ResampledPair::draw(dims[k], h, dims[k + 1], r, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepWitness {
    pub selections: Vec<Selection>,
    pub sup_error: f64,
    /// Per layer `k`: grid maximum of `‖x_k − x̃_k‖₂`.
    pub layer_errors: Vec<f64>,
    /// Per layer `k`: grid maximum of `‖x̃_k‖_∞`.
    pub layer_inf: Vec<f64>,
    pub success: bool,
    /// `‖x_k − x̃_k‖₂ ≤ kε/l` and `‖x̃_k‖_∞ ≤ 2` at every layer.
    pub induction_holds: bool,
    pub complete: bool,
}

/// Runs the linear-map witness on every layer with budget `eps / 2l` and
/// checks the composition on `grid`.
pub fn witness_deep(
    target: &TargetNetwork,
    inst: &DeepInstance,
    eps: f64,
    delta: f64,
    grid: &Grid,
) -> Result<DeepWitness, TheoryError> {
    check_eps(eps)?;
    check_open_unit("delta", delta)?;
    let dims = target.dims();
    let l = target.depth();
    if inst.layers.len() != l {
        return Err(TheoryError::Shape(format!(
            "{} layer pairs for depth {l}",
            inst.layers.len()
        )));
    }
    if grid.dim != dims[0] {
        return Err(TheoryError::Shape(format!(
            "grid of dimension {} for input dimension {}",
            grid.dim, dims[0]
        )));
    }
    let r = inst.layers[0].r;
    let need = required_width_deep(dims, eps, delta, r)?;
    for (k, (pair, lw)) in inst.layers.iter().zip(&need).enumerate() {
        if pair.d0 != dims[k] || pair.d2 != dims[k + 1] || pair.r != r {
            return Err(TheoryError::Shape(format!("layer pair {} does not match target", k + 1)));
        }
        if pair.d1 < lw.width {
            return Err(TheoryError::Width {
                layer: k + 1,
                have: pair.d1,
                need: lw.width,
            });
        }
    }

    let budget = eps / (2.0 * l as f64);
    let mut selections = Vec::with_capacity(l);
    let mut complete = true;
    let mut subs = Vec::with_capacity(l);
    for (k, pair) in inst.layers.iter().enumerate() {
        let s = search(target.layer(k), pair, budget)?;
        complete &= s.found == s.slots;
        subs.push(Subnetwork::compile(pair, &s.selection));
        selections.push(s.selection);
    }

    let mut layer_errors = vec![0.0f64; l];
    let mut layer_inf = vec![0.0f64; l];
    for x0 in grid.iter() {
        let mut x = x0.to_vec();
        let mut xt = x0.to_vec();
        for k in 0..l {
            x = target.apply_layer(k, &x);
            xt = subs[k].eval(&xt);
            if k + 1 < l {
                xt.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let err = x.iter().zip(&xt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let inf = xt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            layer_errors[k] = layer_errors[k].max(err);
            layer_inf[k] = layer_inf[k].max(inf);
        }
    }
    let sup_error = layer_errors[l - 1];
    let induction_holds = (0..l).all(|k| {
        layer_errors[k] <= (k + 1) as f64 * eps / l as f64 + SLACK && layer_inf[k] <= 2.0 + SLACK
    });
    Ok(DeepWitness {
        selections,
        sup_error,
        layer_errors,
        layer_inf,
        success: sup_error <= eps + SLACK,
        induction_holds,
        complete,
    })
}
