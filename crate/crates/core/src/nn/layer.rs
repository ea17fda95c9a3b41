use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer `y = act(W x + b)` with `W` stored `[out x in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (rows, _) = weights.shape2()?;
        if bias.dims() != [rows] {
            return Err(Error::Dimension(format!(
                "bias dims {:?} do not match {rows} weight rows",
                bias.dims()
            )));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut impl RngCore) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| ((rng::uniform(rng) * 2.0 - 1.0) * limit) as f32)
            .collect();
        DenseLayer {
            weights: Tensor::from_parts(vec![output, input], data),
            bias: Tensor::zeros(vec![output]),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Tensor::zeros(vec![output, input]),
            bias: Tensor::zeros(vec![output]),
            activation,
        }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (self.weights.data_mut(), self.bias.data_mut())
    }

    pub(crate) fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Forward over a row-major `[batch x in]` buffer into `[batch x out]`.
    pub(crate) fn forward_raw(&self, input: &[f32], batch: usize, out: &mut Vec<f32>) {
        let (o_dim, i_dim) = (self.output_dim(), self.input_dim());
        debug_assert_eq!(input.len(), batch * i_dim);
        out.clear();
        out.resize(batch * o_dim, 0.0);
        let w = self.weights.data();
        let b = self.bias.data();
        for (x, y) in input.chunks_exact(i_dim).zip(out.chunks_exact_mut(o_dim)) {
            for o in 0..o_dim {
                let z = dot(x, &w[o * i_dim..(o + 1) * i_dim]) + b[o];
                y[o] = match self.activation {
                    Activation::Relu => z.max(0.0),
                    Activation::Identity => z,
                };
            }
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (batch, cols) = input.shape2()?;
        if cols != self.input_dim() {
            return Err(Error::Dimension(format!(
                "layer expects {} inputs, got {cols}",
                self.input_dim()
            )));
        }
        let mut out = Vec::new();
        self.forward_raw(input.data(), batch, &mut out);
        let t = Tensor::from_parts(vec![batch, self.output_dim()], out);
        t.check_finite()?;
        Ok(t)
    }
}
