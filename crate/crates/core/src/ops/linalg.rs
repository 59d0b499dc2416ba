use crate::tensor::{Result, Scalar, Tensor, TensorError};

fn as_matrix<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("expected a 2-d tensor, got shape {:?}", t.shape()),
        }),
    }
}

/// Row-major product of an `m x k` buffer (optionally transposed on read) and
/// a `k x n` buffer (likewise), written into a fresh `m x n` buffer.
pub(crate) fn gemm_alloc<T: Scalar>(
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
) -> Vec<T> {
    let (m, k) = if trans_a { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (kb, n) = if trans_b { (b_cols, b_rows) } else { (b_rows, b_cols) };
    debug_assert_eq!(k, kb);
    let (rsa, csa) = if trans_a { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, T::zero(), &mut c, n as isize, 1);
    c
}

/// `C = A B` for `A: m x k`, `B: k x n`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = as_matrix(a, "matmul")?;
    let (kb, n) = as_matrix(b, "matmul")?;
    if k != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let c = gemm_alloc(a.data(), m, k, false, b.data(), k, n, false);
    Tensor::new(vec![m, n], c)
}

/// Gradients of `C = A B` given `dL/dC`: returns `(dL/dA, dL/dB)`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = as_matrix(a, "matmul_backward")?;
    let (kb, n) = as_matrix(b, "matmul_backward")?;
    let (gm, gn) = as_matrix(grad_out, "matmul_backward")?;
    if k != kb || gm != m || gn != n {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_backward",
            lhs: vec![m, k, kb, n],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let ga = gemm_alloc(grad_out.data(), m, n, false, b.data(), k, n, true);
    let gb = gemm_alloc(a.data(), m, k, true, grad_out.data(), m, n, false);
    Ok((Tensor::new(vec![m, k], ga)?, Tensor::new(vec![k, n], gb)?))
}

/// Bias-free dense layer: `y = x W^T` for `x: batch x in`, `W: out x in`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fan_in) = as_matrix(x, "linear")?;
    let (out, w_in) = as_matrix(weight, "linear")?;
    if fan_in != w_in {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            lhs: x.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let y = gemm_alloc(x.data(), batch, fan_in, false, weight.data(), out, fan_in, true);
    Tensor::new(vec![batch, out], y)
}

/// Returns `(dL/dx, dL/dW)` for [`linear`].
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (batch, fan_in) = as_matrix(x, "linear_backward")?;
    let (out, w_in) = as_matrix(weight, "linear_backward")?;
    if fan_in != w_in || grad_out.shape() != [batch, out] {
        return Err(TensorError::ShapeMismatch {
            op: "linear_backward",
            lhs: weight.shape().to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let gx = gemm_alloc(grad_out.data(), batch, out, false, weight.data(), out, fan_in, false);
    let gw = gemm_alloc(grad_out.data(), batch, out, true, x.data(), batch, fan_in, false);
    Ok((Tensor::new(vec![batch, fan_in], gx)?, Tensor::new(vec![out, fan_in], gw)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_grad_close, central_difference, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_times_b_is_b() {
        let eye = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&eye, &b).unwrap(), b);
    }

    #[test]
    fn hand_product() {
        let a = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 1], &[1.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_tensor(&[5, 4], &mut rng);
            let b = random_tensor(&[4, 3], &mut rng);
            let probe = random_tensor(&[5, 3], &mut rng);
            let loss = |a: &Tensor<f64>, b: &Tensor<f64>| {
                matmul(a, b)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(probe.data())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            };
            let (ga, gb) = matmul_backward(&a, &b, &probe).unwrap();
            let na = central_difference(&a, |t| loss(t, &b));
            let nb = central_difference(&b, |t| loss(&a, t));
            assert_grad_close(&ga, &na, 1e-6);
            assert_grad_close(&gb, &nb, 1e-6);
        }
    }

    #[test]
    fn linear_agrees_with_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[6, 4], &mut rng);
        let w = random_tensor(&[3, 4], &mut rng);
        let wt = Tensor::from_fn(&[4, 3], |i| w.data()[(i % 3) * 4 + i / 3]);
        let y = linear(&x, &w).unwrap();
        let y2 = matmul(&x, &wt).unwrap();
        for (p, q) in y.data().iter().zip(y2.data()) {
            assert!((p - q).abs() < 1e-12);
        }
        let probe = random_tensor(&[6, 3], &mut rng);
        let (gx, gw) = linear_backward(&x, &w, &probe).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>| {
            linear(x, w).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        assert_grad_close(&gx, &central_difference(&x, |t| f(t, &w)), 1e-6);
        assert_grad_close(&gw, &central_difference(&w, |t| f(&x, t)), 1e-6);
    }
}
