use serde::{Deserialize, Serialize};

use crate::distributions::{DistKind, DistSpec};
use crate::ops::{BatchNorm, PoolKind};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Tensor};

use super::{Layer, MaskedNetwork, NetError, ScoredParam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// `in - 256ρ - 256ρ - classes`.
    Mlp,
    /// One block of two 3x3 convs (64ρ) and a max-pool, then the linear head.
    Conv2,
    /// Blocks of 64ρ and 128ρ.
    Conv4,
    /// Blocks of 64ρ, 128ρ and 256ρ.
    Conv6,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Conv2 => "conv2",
            Arch::Conv4 => "conv4",
            Arch::Conv6 => "conv6",
        }
    }

    fn conv_blocks(self) -> &'static [usize] {
        match self {
            Arch::Mlp => &[],
            Arch::Conv2 => &[64],
            Arch::Conv4 => &[64, 128],
            Arch::Conv6 => &[64, 128, 256],
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `max(1, round(base * rho))`.
pub fn scaled_width(base: usize, rho: f64) -> usize {
    ((base as f64 * rho).round() as usize).max(1)
}

/// Everything needed to build and initialize a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub arch: Arch,
    pub rho: f64,
    /// `[C, H, W]` of one input image.
    pub input: [usize; 3],
    pub classes: usize,
    pub batchnorm: bool,
    pub dist_param: DistKind,
    pub sparsity: f64,
}

impl ArchSpec {
    /// Defaults: batch norm after every conv, none in the MLP.
    pub fn new(arch: Arch, rho: f64, input: [usize; 3], classes: usize, dist_param: DistKind, sparsity: f64) -> Self {
        Self {
            arch,
            rho,
            input,
            classes,
            batchnorm: arch != Arch::Mlp,
            dist_param,
            sparsity,
        }
    }

    fn validate(&self) -> Result<(), NetError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(NetError::Arch(format!("width factor must be positive, got {}", self.rho)));
        }
        if self.classes == 0 || self.input.contains(&0) {
            return Err(NetError::Arch(format!(
                "input {:?} and {} classes must be non-empty",
                self.input, self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(NetError::Sparsity(self.sparsity));
        }
        Ok(())
    }

    /// Layer list with the shapes of every prunable weight, before initialization.
    fn plan(&self) -> Result<Vec<LayerPlan>, NetError> {
        self.validate()?;
        let [mut c, mut h, mut w] = self.input;
        let mut plan = Vec::new();
        for &base in self.arch.conv_blocks() {
            let f = scaled_width(base, self.rho);
            for _ in 0..2 {
                plan.push(LayerPlan::Conv(vec![f, c, 3, 3]));
                if self.batchnorm {
                    plan.push(LayerPlan::BatchNorm(f));
                }
                plan.push(LayerPlan::Relu);
                c = f;
            }
            if h < 2 || w < 2 {
                return Err(NetError::Arch(format!(
                    "{} pools the input {:?} below 1x1",
                    self.arch, self.input
                )));
            }
            plan.push(LayerPlan::MaxPool);
            h /= 2;
            w /= 2;
        }
        plan.push(LayerPlan::Flatten);
        let hidden = scaled_width(256, self.rho);
        let mut fan = c * h * w;
        for _ in 0..2 {
            plan.push(LayerPlan::Linear(vec![hidden, fan]));
            if self.batchnorm && self.arch == Arch::Mlp {
                plan.push(LayerPlan::BatchNorm(hidden));
            }
            plan.push(LayerPlan::Relu);
            fan = hidden;
        }
        plan.push(LayerPlan::Linear(vec![self.classes, fan]));
        Ok(plan)
    }

    /// Shapes of the prunable weights in layer order.
    pub fn weight_shapes(&self) -> Result<Vec<Vec<usize>>, NetError> {
        Ok(self
            .plan()?
            .into_iter()
            .filter_map(|l| match l {
                LayerPlan::Conv(s) | LayerPlan::Linear(s) => Some(s),
                _ => None,
            })
            .collect())
    }

    /// Builds the network with weights from `dist_param` on the init-θ stream
    /// and Kaiming-uniform scores on the init-s stream, layer by layer.
    pub fn build<T: Scalar>(&self, seed: u64) -> Result<MaskedNetwork<T>, NetError> {
        let mut theta_rng = stream_rng(seed, Stream::InitTheta);
        let mut score_rng = stream_rng(seed, Stream::InitScore);
        let mut make = |shape: &[usize]| -> Result<ScoredParam<T>, NetError> {
            let theta: Tensor<T> = DistSpec::for_shape(self.dist_param, shape)?.sample(shape, &mut theta_rng);
            let scores: Tensor<T> =
                DistSpec::for_shape(DistKind::KaimingUniform, shape)?.sample(shape, &mut score_rng);
            ScoredParam::new(theta, scores, self.sparsity)
        };
        let mut layers = Vec::new();
        for step in self.plan()? {
            layers.push(match step {
                LayerPlan::Conv(shape) => Layer::Conv {
                    param: make(&shape)?,
                    stride: 1,
                    padding: 1,
                },
                LayerPlan::Linear(shape) => Layer::Linear(make(&shape)?),
                LayerPlan::BatchNorm(ch) => Layer::BatchNorm(BatchNorm::new(ch)),
                LayerPlan::Relu => Layer::Relu,
                LayerPlan::MaxPool => Layer::Pool {
                    kind: PoolKind::Max,
                    window: 2,
                    stride: 2,
                },
                LayerPlan::Flatten => Layer::Flatten,
            });
        }
        Ok(MaskedNetwork::new(layers))
    }
}

enum LayerPlan {
    Conv(Vec<usize>),
    Linear(Vec<usize>),
    BatchNorm(usize),
    Relu,
    MaxPool,
    Flatten,
}
