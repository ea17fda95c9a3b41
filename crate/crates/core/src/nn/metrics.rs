use serde::{Deserialize, Serialize};

use crate::data::{gather_features, LabeledExample};
use crate::error::{Error, Result};

use super::loss::per_example_losses;
use super::model::Model;

/// Which label an accuracy is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    True,
    AsTrained,
}

impl LabelSource {
    pub fn pick(self, ex: &LabeledExample) -> usize {
        match self {
            LabelSource::True => ex.true_label,
            LabelSource::AsTrained => ex.trained_label,
        }
    }
}

const CHUNK: usize = 256;

/// Logits for every example, row-major `[n x C]`.
pub fn logits(model: &Model, examples: &[LabeledExample]) -> Result<Vec<f32>> {
    let dim = model.input_dim();
    let mut out = Vec::with_capacity(examples.len() * model.class_count());
    for chunk in examples.chunks(CHUNK) {
        let refs: Vec<&LabeledExample> = chunk.iter().collect();
        let x = gather_features(&refs, dim)?;
        out.extend(model.forward_raw(&x, chunk.len()));
    }
    Ok(out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(model: &Model, examples: &[LabeledExample]) -> Result<Vec<usize>> {
    let c = model.class_count();
    Ok(logits(model, examples)?.chunks_exact(c).map(argmax).collect())
}

pub fn evaluate_accuracy(model: &Model, examples: &[LabeledExample], source: LabelSource) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("accuracy over empty dataset".into()));
    }
    let preds = predictions(model, examples)?;
    let correct = preds
        .iter()
        .zip(examples)
        .filter(|(p, ex)| **p == source.pick(ex))
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

/// Top-minus-runner-up logit gap of one row.
pub fn margin(row: &[f32]) -> f32 {
    let mut top = f32::NEG_INFINITY;
    let mut second = f32::NEG_INFINITY;
    for &v in row {
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    top - second
}

/// Smallest top-two logit gap over the dataset.
pub fn logit_margin_delta(model: &Model, examples: &[LabeledExample]) -> Result<f32> {
    if examples.is_empty() {
        return Err(Error::Empty("margin over empty dataset".into()));
    }
    let c = model.class_count();
    if c < 2 {
        return Err(Error::InvalidParameter("margin needs at least 2 classes".into()));
    }
    Ok(logits(model, examples)?
        .chunks_exact(c)
        .map(margin)
        .fold(f32::INFINITY, f32::min))
}

/// Largest absolute logit over examples and classes.
pub fn max_abs_logit(model: &Model, examples: &[LabeledExample]) -> Result<f32> {
    if examples.is_empty() {
        return Err(Error::Empty("max logit over empty dataset".into()));
    }
    Ok(logits(model, examples)?.iter().fold(0.0f32, |m, v| m.max(v.abs())))
}

/// Cross-entropy of each example against the chosen label.
pub fn example_losses(model: &Model, examples: &[LabeledExample], source: LabelSource) -> Result<Vec<f32>> {
    let c = model.class_count();
    let labels: Vec<usize> = examples.iter().map(|e| source.pick(e)).collect();
    per_example_losses(&logits(model, examples)?, &labels, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, Stack};
    use crate::tensor::Tensor;

    /// Head that ignores the input and always emits `bias`.
    fn constant_model(bias: Vec<f32>, dim: usize) -> Model {
        let c = bias.len();
        let layer = DenseLayer::new(
            Tensor::zeros(vec![c, dim]),
            Tensor::new(vec![c], bias).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        Model::new(Stack::empty(), Stack::new(vec![layer]).unwrap()).unwrap()
    }

    fn examples(labels: &[usize]) -> Vec<LabeledExample> {
        labels.iter().map(|&y| LabeledExample::new(vec![0.5, 0.5], y)).collect()
    }

    #[test]
    fn constant_predictor_accuracy() {
        let m = constant_model(vec![1.0, 0.0, 0.0], 2);
        assert_eq!(
            evaluate_accuracy(&m, &examples(&[0; 5]), LabelSource::True).unwrap(),
            1.0
        );
        assert_eq!(
            evaluate_accuracy(&m, &examples(&[1; 5]), LabelSource::True).unwrap(),
            0.0
        );
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let m = constant_model(vec![1.0, 0.0], 2);
        assert!(evaluate_accuracy(&m, &[], LabelSource::True).is_err());
        assert!(logit_margin_delta(&m, &[]).is_err());
        assert!(max_abs_logit(&m, &[]).is_err());
    }

    #[test]
    fn margin_and_max_abs_on_fixed_logits() {
        let m = constant_model(vec![3.0, 1.0, 0.0], 2);
        assert_eq!(logit_margin_delta(&m, &examples(&[0])).unwrap(), 2.0);
        let m = constant_model(vec![3.0, -5.0], 2);
        assert_eq!(max_abs_logit(&m, &examples(&[0])).unwrap(), 5.0);
        let m = constant_model(vec![0.0, 0.0], 2);
        assert_eq!(max_abs_logit(&m, &examples(&[0, 1])).unwrap(), 0.0);
    }

    #[test]
    fn margin_is_the_minimum_over_examples() {
        // logits = x-dependent: w = [[1,0],[0,1]] so logits equal features.
        let layer = DenseLayer::new(
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
            Activation::Identity,
        )
        .unwrap();
        let m = Model::new(Stack::empty(), Stack::new(vec![layer]).unwrap()).unwrap();
        let data = vec![
            LabeledExample::new(vec![2.0, 0.0], 0),
            LabeledExample::new(vec![0.0, 0.5], 1),
        ];
        assert_eq!(logit_margin_delta(&m, &data).unwrap(), 0.5);
    }
}
