use crate::ops::{
    conv2d, conv2d_backward, linear, linear_backward, pool2d, pool2d_backward, relu,
    relu_backward, softmax_cross_entropy, BatchNorm, BatchNormCache, NormMode, PoolCache,
    PoolKind,
};
use crate::tensor::{Scalar, Tensor};

use super::{NetError, ScoredParam};

/// One stage of a [`MaskedNetwork`]. Prunable stages carry a [`ScoredParam`].
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    /// Bias-free `y = x W^T` with `W: [out, in]`.
    Linear(ScoredParam<T>),
    /// Bias-free convolution with `W: [F, C, kh, kw]`.
    Conv {
        param: ScoredParam<T>,
        stride: usize,
        padding: usize,
    },
    BatchNorm(BatchNorm<T>),
    Relu,
    Pool {
        kind: PoolKind,
        window: usize,
        stride: usize,
    },
    /// `[N, ...] -> [N, prod(...)]`.
    Flatten,
}

impl<T> Layer<T> {
    pub fn param(&self) -> Option<&ScoredParam<T>> {
        match self {
            Layer::Linear(p) | Layer::Conv { param: p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn param_mut(&mut self) -> Option<&mut ScoredParam<T>> {
        match self {
            Layer::Linear(p) | Layer::Conv { param: p, .. } => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Saved<T> {
    Weighted { input: Tensor<T>, weight: Tensor<T> },
    Norm(BatchNormCache<T>),
    Relu(Tensor<T>),
    Pool(PoolCache),
    Flatten(Vec<usize>),
}

/// Intermediate values recorded by [`MaskedNetwork::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    saved: Vec<Saved<T>>,
}

/// Mean loss, logits and one gradient tensor per prunable layer.
pub type BatchGrads<T> = (T, Tensor<T>, Vec<Tensor<T>>);

/// Feed-forward network evaluated with effective weights `theta * mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedNetwork<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> MaskedNetwork<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &ScoredParam<T>> {
        self.layers.iter().filter_map(Layer::param)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ScoredParam<T>> {
        self.layers.iter_mut().filter_map(Layer::param_mut)
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    /// Total number of prunable weights.
    pub fn num_weights(&self) -> usize {
        self.params().map(ScoredParam::len).sum()
    }

    /// Recomputes every mask from its scores.
    pub fn refresh_masks(&mut self, scratch: &mut Vec<u32>) -> Result<(), NetError> {
        for p in self.params_mut() {
            p.refresh_mask(scratch)?;
        }
        Ok(())
    }

    fn run(
        &mut self,
        x: &Tensor<T>,
        mode: NormMode,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor<T>, NetError> {
        x.ensure_finite("forward")?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            let (next, saved) = match layer {
                Layer::Linear(p) => {
                    let w = p.effective_weight();
                    (linear(&h, &w)?, Saved::Weighted { input: h, weight: w })
                }
                Layer::Conv {
                    param,
                    stride,
                    padding,
                } => {
                    let w = param.effective_weight();
                    let y = conv2d(&h, &w, *stride, *padding)?;
                    (y, Saved::Weighted { input: h, weight: w })
                }
                Layer::BatchNorm(bn) => {
                    let (y, cache) = bn.forward(&h, mode)?;
                    (y, Saved::Norm(cache))
                }
                Layer::Relu => (relu(&h), Saved::Relu(h)),
                Layer::Pool {
                    kind,
                    window,
                    stride,
                } => {
                    let (y, cache) = pool2d(&h, *kind, *window, *stride)?;
                    (y, Saved::Pool(cache))
                }
                Layer::Flatten => {
                    let shape = h.shape().to_vec();
                    let n = shape.first().copied().unwrap_or(0);
                    let rest = shape.iter().skip(1).product();
                    (h.reshape(&[n, rest])?, Saved::Flatten(shape))
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                t.saved.push(saved);
            }
            h = next;
        }
        h.ensure_finite("forward")?;
        Ok(h)
    }

    /// Forward pass returning the output and a tape for [`Self::backward`].
    /// Train mode updates batch-norm running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<(Tensor<T>, Tape<T>), NetError> {
        let mut tape = Tape {
            saved: Vec::with_capacity(self.layers.len()),
        };
        let y = self.run(x, mode, Some(&mut tape))?;
        Ok((y, tape))
    }

    /// Forward pass without recording anything.
    pub fn effective_forward(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>, NetError> {
        self.run(x, mode, None)
    }

    /// Gradients of the loss with respect to each prunable layer's effective
    /// weight, in layer order, given the gradient at the network output.
    pub fn backward(&self, tape: Tape<T>, grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>, NetError> {
        assert_eq!(tape.saved.len(), self.layers.len(), "tape from another network");
        let mut grads = Vec::new();
        let mut g = grad_out.clone();
        for (layer, saved) in self.layers.iter().zip(tape.saved).rev() {
            g = match (layer, saved) {
                (Layer::Linear(_), Saved::Weighted { input, weight }) => {
                    let (gx, gw) = linear_backward(&input, &weight, &g)?;
                    grads.push(gw);
                    gx
                }
                (
                    Layer::Conv {
                        stride, padding, ..
                    },
                    Saved::Weighted { input, weight },
                ) => {
                    let (gx, gw) = conv2d_backward(&input, &weight, &g, *stride, *padding)?;
                    grads.push(gw);
                    gx
                }
                (Layer::BatchNorm(bn), Saved::Norm(cache)) => bn.backward(&cache, &g)?,
                (Layer::Relu, Saved::Relu(input)) => relu_backward(&input, &g)?,
                (Layer::Pool { .. }, Saved::Pool(cache)) => pool2d_backward(&cache, &g)?,
                (Layer::Flatten, Saved::Flatten(shape)) => g.reshape(&shape)?,
                _ => unreachable!("tape entries follow layer order"),
            };
        }
        grads.reverse();
        for gw in &grads {
            gw.ensure_finite("backward")?;
        }
        Ok(grads)
    }

    /// Mean softmax cross-entropy on a batch with the gradients of every
    /// effective weight.
    pub fn loss_and_weight_grads(
        &mut self,
        x: &Tensor<T>,
        labels: &[usize],
        mode: NormMode,
    ) -> Result<BatchGrads<T>, NetError> {
        let (logits, tape) = self.forward(x, mode)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(tape, &grad)?;
        Ok((loss, logits, grads))
    }

    /// Straight-through score gradients (`theta * dL/d(theta * m)`) of the
    /// cross-entropy loss on a batch, one tensor per prunable layer.
    pub fn score_gradient(
        &mut self,
        x: &Tensor<T>,
        labels: &[usize],
        mode: NormMode,
    ) -> Result<BatchGrads<T>, NetError> {
        let (loss, logits, weight_grads) = self.loss_and_weight_grads(x, labels, mode)?;
        let score_grads = self
            .params()
            .zip(&weight_grads)
            .map(|(p, g)| p.score_gradient(g))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((loss, logits, score_grads))
    }
}
