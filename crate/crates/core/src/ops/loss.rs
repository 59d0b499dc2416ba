use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Mean softmax cross-entropy over a batch of logits `[N, C]`.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax - onehot) / N`. Each row is shifted by its maximum first.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (n, c) = match *logits.shape() {
        [n, c] => (n, c),
        _ => {
            return Err(TensorError::Invalid {
                op: "softmax_cross_entropy",
                msg: format!("logits must be [N, C], got {:?}", logits.shape()),
            })
        }
    };
    if labels.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::Invalid {
            op: "softmax_cross_entropy",
            msg: format!("label {bad} outside [0, {c})"),
        });
    }
    logits.ensure_finite("softmax_cross_entropy")?;

    let inv_n = T::one() / T::of(n as f64);
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = T::zero();
    for (row, (&label, g)) in logits
        .data()
        .chunks_exact(c)
        .zip(labels.iter().zip(grad.data_mut().chunks_exact_mut(c)))
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - max).exp();
            denom = denom + *gi;
        }
        total = total + denom.ln() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi = *gi / denom * inv_n;
        }
        g[label] = g[label] - inv_n;
    }
    Ok((total * inv_n, grad))
}

/// Number of rows whose arg-max (first on ties) equals the label.
pub fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks_exact(c)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count()
}
