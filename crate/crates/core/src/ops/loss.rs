use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Class index of a one-hot vector, or `None` if it is not exactly one-hot.
pub fn one_hot_index(label: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in label.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

/// Loss and logit gradient for one sample given the true class index.
/// `grad` receives `softmax(logits) - one_hot`.
pub(crate) fn xent_into(logits: &[f64], class: usize, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = (z - max).exp();
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    let loss = sum.ln() - (logits[class] - max);
    grad[class] -= 1.0;
    loss
}

/// Softmax cross-entropy against a one-hot label.
///
/// Returns `(−log softmax(logits)[true], softmax(logits) − one_hot)`.
pub fn softmax_xent(logits: &Tensor, one_hot: &Tensor) -> Result<(f64, Tensor)> {
    if logits.rank() != 1 || logits.shape() != one_hot.shape() {
        return Err(shape_err(
            "softmax_xent",
            format!(
                "logits {} vs label {}",
                logits.shape_string(),
                one_hot.shape_string()
            ),
        ));
    }
    let class = one_hot_index(one_hot.data()).ok_or_else(|| {
        Error::InvalidArgument(format!("label is not one-hot: {:?}", one_hot.data()))
    })?;
    let mut grad = Tensor::zeros(logits.shape());
    let loss = xent_into(logits.data(), class, grad.data_mut());
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hot(i: usize) -> Tensor {
        let mut t = Tensor::zeros(&[10]);
        t.data_mut()[i] = 1.0;
        t
    }

    #[test]
    fn uniform_logits_give_ln_ten() {
        for label in [0, 4, 9] {
            let (loss, grad) = softmax_xent(&Tensor::filled(&[10], 3.0), &hot(label)).unwrap();
            assert!((loss - 10f64.ln()).abs() < 1e-12);
            assert!((grad.data()[label] + 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logit_has_no_loss() {
        let mut logits = Tensor::zeros(&[10]);
        logits.data_mut()[2] = 1000.0;
        let (loss, grad) = softmax_xent(&logits, &hot(2)).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn gradient_sums_to_zero() {
        let logits =
            Tensor::vector((0..10).map(|i| (i as f64 * 0.37).sin() * 4.0).collect()).unwrap();
        let (loss, grad) = softmax_xent(&logits, &hot(3)).unwrap();
        assert!(loss >= 0.0);
        assert!(grad.data().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn non_one_hot_rejected() {
        let mut two = hot(1);
        two.data_mut()[2] = 1.0;
        assert!(softmax_xent(&Tensor::zeros(&[10]), &two).is_err());
        assert!(softmax_xent(&Tensor::zeros(&[10]), &Tensor::zeros(&[10])).is_err());
        let mut soft = Tensor::zeros(&[10]);
        soft.data_mut()[0] = 0.5;
        soft.data_mut()[1] = 0.5;
        assert!(softmax_xent(&Tensor::zeros(&[10]), &soft).is_err());
        assert!(softmax_xent(&Tensor::zeros(&[9]), &hot(0)).is_err());
    }
}
