use crate::ops::linalg::gemm_alloc;
use crate::tensor::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeometry {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (&[batch, in_channels, height, width], &[filters, wc, kernel_h, kernel_w]) =
            (x_shape, w_shape)
        else {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("expected x [N,C,H,W] and w [F,C,kh,kw], got {x_shape:?} and {w_shape:?}"),
            });
        };
        if wc != in_channels {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x_shape.to_vec(),
                rhs: w_shape.to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        let ph = height + 2 * padding;
        let pw = width + 2 * padding;
        if kernel_h == 0 || kernel_w == 0 || kernel_h > ph || kernel_w > pw {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel {kernel_h}x{kernel_w} does not fit padded input {ph}x{pw}"),
            });
        }
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            filters,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (ph - kernel_h) / stride + 1,
            out_w: (pw - kernel_w) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for output position `(oy, ox)` and kernel tap `(ky, kx)`,
    /// or `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }

    /// `[C*kh*kw, OH*OW]` patch matrix of one image.
    fn im2col<T: Scalar>(&self, image: &[T]) -> Vec<T> {
        let ol = self.out_len();
        let mut cols = vec![T::zero(); self.patch_len() * ol];
        for c in 0..self.in_channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let dst = &mut cols[row * ol..(row + 1) * ol];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                                dst[oy * self.out_w + ox] = plane[y * self.width + x];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let ol = self.out_len();
        for c in 0..self.in_channels {
            let base = c * self.height * self.width;
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let src = &cols[row * ol..(row + 1) * ol];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                                let dst = &mut image[base + y * self.width + x];
                                *dst = *dst + src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x: [N,C,H,W]` with `w: [F,C,kh,kw]`, zero padding.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Conv2dGeometry::new(x.shape(), w.shape(), stride, padding)?;
    let image_len = g.in_channels * g.height * g.width;
    let out_image = g.filters * g.out_len();
    let mut out = Vec::with_capacity(g.batch * out_image);
    for image in x.data().chunks_exact(image_len.max(1)).take(g.batch) {
        let cols = g.im2col(image);
        let y = gemm_alloc(
            w.data(),
            g.filters,
            g.patch_len(),
            false,
            &cols,
            g.patch_len(),
            g.out_len(),
            false,
        );
        out.extend_from_slice(&y);
    }
    Tensor::new(vec![g.batch, g.filters, g.out_h, g.out_w], out)
}

/// Returns `(dL/dx, dL/dw)` for [`conv2d`].
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = Conv2dGeometry::new(x.shape(), w.shape(), stride, padding)?;
    if grad_out.shape() != [g.batch, g.filters, g.out_h, g.out_w] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            lhs: vec![g.batch, g.filters, g.out_h, g.out_w],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let image_len = g.in_channels * g.height * g.width;
    let out_image = g.filters * g.out_len();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let pl = g.patch_len();
    let ol = g.out_len();
    for n in 0..g.batch {
        let image = &x.data()[n * image_len..(n + 1) * image_len];
        let go = &grad_out.data()[n * out_image..(n + 1) * out_image];
        let cols = g.im2col(image);
        // dW += dY [F, OL] * cols^T [OL, PL]
        T::gemm(
            g.filters,
            ol,
            pl,
            T::one(),
            go,
            ol as isize,
            1,
            &cols,
            1,
            ol as isize,
            T::one(),
            gw.data_mut(),
            pl as isize,
            1,
        );
        // dcols = W^T [PL, F] * dY [F, OL]
        let dcols = gemm_alloc(w.data(), g.filters, pl, true, go, g.filters, ol, false);
        g.col2im_add(&dcols, &mut gx.data_mut()[n * image_len..(n + 1) * image_len]);
    }
    Ok((gx, gw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_grad_close, central_difference, random_tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[2, 3, 4, 5], &mut rng);
        // one 1x1 filter per channel that copies that channel
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap(), x);
    }

    #[test]
    fn hand_sum() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 2, 2]);
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn output_size_formula() {
        let x = Tensor::<f32>::zeros(&[1, 2, 7, 6]);
        let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        let y = conv2d(&x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, (7 + 2 - 3) / 2 + 1, (6 + 2 - 3) / 2 + 1]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 4, 4]), 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 4, 4]), 1, 1).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let n = rng.random_range(1..3);
            let c = rng.random_range(1..3);
            let f = rng.random_range(1..4);
            let h = rng.random_range(3..6);
            let wd = rng.random_range(3..6);
            let k = rng.random_range(1..4);
            let stride = rng.random_range(1..3);
            let pad = rng.random_range(0..2);
            let x = random_tensor(&[n, c, h, wd], &mut rng);
            let w = random_tensor(&[f, c, k, k], &mut rng);
            let y = conv2d(&x, &w, stride, pad).unwrap();
            let probe = random_tensor(y.shape(), &mut rng);
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>| -> f64 {
                conv2d(x, w, stride, pad)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(probe.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let (gx, gw) = conv2d_backward(&x, &w, &probe, stride, pad).unwrap();
            assert_grad_close(&gx, &central_difference(&x, |t| loss(t, &w)), 1e-5);
            assert_grad_close(&gw, &central_difference(&w, |t| loss(&x, t)), 1e-5);
        }
    }
}
