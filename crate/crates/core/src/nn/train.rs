use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{axpy, Tensor};

use super::layer::{Activation, DenseLayer};
use super::loss::cross_entropy_raw;
use super::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f32,
    #[serde(default)]
    pub weight_decay: f32,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-2,
            weight_decay: 4e-5,
            batch_size: 32,
        }
    }
}

impl SgdConfig {
    /// A zero learning rate is accepted so that "no-op training" can be expressed.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be nonnegative and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Which parameter groups an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainableMask {
    pub extractor: bool,
    pub head: bool,
}

impl TrainableMask {
    pub const ALL: TrainableMask = TrainableMask {
        extractor: true,
        head: true,
    };
    pub const HEAD_ONLY: TrainableMask = TrainableMask {
        extractor: false,
        head: true,
    };
    pub const NONE: TrainableMask = TrainableMask {
        extractor: false,
        head: false,
    };
}

/// One SGD step on the mean cross-entropy of a batch:
/// `p <- p - lr * (grad + weight_decay * p)` for every masked parameter.
pub fn sgd_step(
    model: &Model,
    inputs: &Tensor,
    labels: &[usize],
    config: &SgdConfig,
    mask: TrainableMask,
) -> Result<Model> {
    let (batch, cols) = inputs.shape2()?;
    if cols != model.input_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} input features, got {cols}",
            model.input_dim()
        )));
    }
    let mut next = model.clone();
    step_in_place(&mut next, inputs.data(), batch, labels, config, mask)?;
    Ok(next)
}

/// In-place SGD step over a raw row-major batch. Returns the batch loss
/// measured before the update.
pub(crate) fn step_in_place(
    model: &mut Model,
    inputs: &[f32],
    batch: usize,
    labels: &[usize],
    config: &SgdConfig,
    mask: TrainableMask,
) -> Result<f32> {
    if batch == 0 || labels.is_empty() {
        return Err(Error::Empty("sgd step on empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::Dimension(format!("{batch} inputs but {} labels", labels.len())));
    }
    let classes = model.class_count();
    let n_extractor = model.extractor().depth();
    let (extractor, head) = model.parts_mut();

    // Activations of every layer that takes part in backprop; acts[i] feeds layer i.
    let first = if mask.extractor { 0 } else { n_extractor };
    let mut acts: Vec<Vec<f32>> = Vec::with_capacity(n_extractor + head.depth() + 1);
    if mask.extractor {
        acts.push(inputs.to_vec());
        for layer in extractor.layers() {
            let mut out = Vec::new();
            layer.forward_raw(acts.last().unwrap(), batch, &mut out);
            acts.push(out);
        }
    } else {
        acts.push(extractor.forward_raw(inputs, batch));
    }
    for layer in head.layers() {
        let mut out = Vec::new();
        layer.forward_raw(acts.last().unwrap(), batch, &mut out);
        acts.push(out);
    }
    let logits = acts.last().unwrap();
    let mut delta = vec![0.0f32; batch * classes];
    let loss = cross_entropy_raw(logits, labels, classes, Some(&mut delta))?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            dims: vec![batch, classes],
        });
    }
    if (!mask.extractor && !mask.head) || config.learning_rate == 0.0 {
        return Ok(loss);
    }

    let mut layers: Vec<(&mut DenseLayer, bool)> = Vec::new();
    if mask.extractor {
        layers.extend(extractor.layers_mut().iter_mut().map(|l| (l, true)));
    }
    layers.extend(head.layers_mut().iter_mut().map(|l| (l, mask.head)));
    debug_assert_eq!(layers.len() + 1, acts.len());
    debug_assert!(first <= n_extractor);

    for li in (0..layers.len()).rev() {
        let (layer, trainable) = &mut layers[li];
        let (o_dim, i_dim) = (layer.output_dim(), layer.input_dim());
        let input = &acts[li];
        let output = &acts[li + 1];
        if layer.activation() == Activation::Relu {
            for (d, &y) in delta.iter_mut().zip(output) {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let needs_input_grad = li > 0;
        let mut input_grad = if needs_input_grad {
            vec![0.0f32; batch * i_dim]
        } else {
            Vec::new()
        };
        let mut weight_grad = if *trainable {
            vec![0.0f32; o_dim * i_dim]
        } else {
            Vec::new()
        };
        let mut bias_grad = vec![0.0f32; o_dim];
        {
            let w = layer.weights().data();
            for b in 0..batch {
                let d_row = &delta[b * o_dim..(b + 1) * o_dim];
                let x_row = &input[b * i_dim..(b + 1) * i_dim];
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    if *trainable {
                        axpy(d, x_row, &mut weight_grad[o * i_dim..(o + 1) * i_dim]);
                        bias_grad[o] += d;
                    }
                    if needs_input_grad {
                        axpy(
                            d,
                            &w[o * i_dim..(o + 1) * i_dim],
                            &mut input_grad[b * i_dim..(b + 1) * i_dim],
                        );
                    }
                }
            }
        }
        if *trainable {
            let (w, bias) = layer.parts_mut();
            apply_update(w, &weight_grad, config);
            apply_update(bias, &bias_grad, config);
        }
        delta = input_grad;
    }
    Ok(loss)
}

fn apply_update(params: &mut [f32], grad: &[f32], config: &SgdConfig) {
    let lr = config.learning_rate;
    let wd = config.weight_decay;
    for (p, &g) in params.iter_mut().zip(grad) {
        *p -= lr * (g + wd * *p);
    }
}
