use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / batch`.
pub fn cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let (batch, classes) = logits.shape2()?;
    if labels.len() != batch {
        return Err(Error::Dimension(format!(
            "{batch} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut grad = vec![0.0f32; batch * classes];
    let loss = cross_entropy_raw(logits.data(), labels, classes, Some(&mut grad))?;
    Ok((loss, Tensor::from_parts(vec![batch, classes], grad)))
}

pub(crate) fn cross_entropy_raw(
    logits: &[f32],
    labels: &[usize],
    classes: usize,
    mut grad: Option<&mut [f32]>,
) -> Result<f32> {
    let batch = labels.len();
    if batch == 0 {
        return Err(Error::Empty("cross-entropy over empty batch".into()));
    }
    let scale = 1.0 / batch as f32;
    let mut total = 0.0f64;
    for (i, (row, &y)) in logits.chunks_exact(classes).zip(labels).enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        total += (log_z - row[y]) as f64;
        if let Some(g) = grad.as_deref_mut() {
            let g = &mut g[i * classes..(i + 1) * classes];
            for (gj, &z) in g.iter_mut().zip(row) {
                *gj = (z - log_z).exp() * scale;
            }
            g[y] -= scale;
        }
    }
    Ok((total / batch as f64).max(0.0) as f32)
}

/// Per-example cross-entropy losses.
pub(crate) fn per_example_losses(logits: &[f32], labels: &[usize], classes: usize) -> Result<Vec<f32>> {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| cross_entropy_raw(row, &[y], classes, None))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let l = Tensor::new(vec![1, 2], vec![0.3, 0.3]).unwrap();
        let (loss, _) = cross_entropy_grad(&l, &[1]).unwrap();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn large_margin_gives_near_zero_loss() {
        let l = Tensor::new(vec![1, 3], vec![50.0, 0.0, 0.0]).unwrap();
        let (loss, _) = cross_entropy_grad(&l, &[0]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let l = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 3.0, -1.0]).unwrap();
        let (loss, g) = cross_entropy_grad(&l, &[2, 0]).unwrap();
        assert!(loss >= 0.0);
        for row in g.rows() {
            assert!(row.iter().sum::<f32>().abs() < 1e-6);
        }
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let l = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            cross_entropy_grad(&l, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}
