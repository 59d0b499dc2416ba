use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// What the backward pass of [`pool2d`] needs.
#[derive(Debug, Clone)]
pub struct PoolCache {
    kind: PoolKind,
    input_shape: Vec<usize>,
    window: usize,
    stride: usize,
    /// Flat input index selected by each max-pool output.
    argmax: Vec<usize>,
}

/// Unpadded 2-d pooling over `[N,C,H,W]` with a square window.
///
/// Max pooling keeps the first (lowest flat index) maximum on ties.
pub fn pool2d<T: Scalar>(
    x: &Tensor<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolCache)> {
    let &[n, c, h, w] = x.shape() else {
        return Err(TensorError::Invalid {
            op: "pool2d",
            msg: format!("expected [N,C,H,W], got {:?}", x.shape()),
        });
    };
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(TensorError::Invalid {
            op: "pool2d",
            msg: format!("window {window} / stride {stride} does not fit {h}x{w}"),
        });
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::new();
    let inv = T::one() / T::of((window * window) as f64);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * stride, ox * stride);
                match kind {
                    PoolKind::Max => {
                        let mut best = base + y0 * w + x0;
                        for dy in 0..window {
                            for dx in 0..window {
                                let idx = base + (y0 + dy) * w + x0 + dx;
                                if data[idx] > data[best] {
                                    best = idx;
                                }
                            }
                        }
                        argmax.push(best);
                        out.push(data[best]);
                    }
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for dy in 0..window {
                            let row = base + (y0 + dy) * w + x0;
                            for &v in &data[row..row + window] {
                                acc = acc + v;
                            }
                        }
                        out.push(acc * inv);
                    }
                }
            }
        }
    }
    let cache = PoolCache {
        kind,
        input_shape: x.shape().to_vec(),
        window,
        stride,
        argmax,
    };
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, cache))
}

pub fn pool2d_backward<T: Scalar>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c, h, w] = cache.input_shape.as_slice() else {
        unreachable!("pool cache always records a 4-d shape")
    };
    let oh = (h - cache.window) / cache.stride + 1;
    let ow = (w - cache.window) / cache.stride + 1;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(TensorError::ShapeMismatch {
            op: "pool2d_backward",
            lhs: vec![n, c, oh, ow],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let mut gx = Tensor::zeros(&cache.input_shape);
    let gxd = gx.data_mut();
    match cache.kind {
        PoolKind::Max => {
            for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
                gxd[idx] = gxd[idx] + g;
            }
        }
        PoolKind::Avg => {
            let inv = T::one() / T::of((cache.window * cache.window) as f64);
            let god = grad_out.data();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = god[(plane * oh + oy) * ow + ox] * inv;
                        for dy in 0..cache.window {
                            let row = base + (oy * cache.stride + dy) * w + ox * cache.stride;
                            for v in &mut gxd[row..row + cache.window] {
                                *v = *v + g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}
