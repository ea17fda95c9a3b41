use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

use super::layer::{Activation, DenseLayer};
use super::stack::Stack;

/// Network shape: `input -> hidden... -> classes`, with the last
/// `head_depth` dense layers forming the classifier head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default = "default_head_depth")]
    pub head_depth: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![256, 128]
}

fn default_head_depth() -> usize {
    1
}

impl ModelSpec {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        ModelSpec {
            input_dim,
            hidden: default_hidden(),
            classes,
            head_depth: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        let total = self.hidden.len() + 1;
        if !(1..=3).contains(&self.head_depth) || self.head_depth > total {
            return Err(Error::InvalidParameter(format!(
                "head depth {} must be in 1..=min(3, {total})",
                self.head_depth
            )));
        }
        Ok(())
    }

    /// Seeded Glorot initialisation. Layer `i` always draws from stream `i`,
    /// so moving the head boundary does not change any weight.
    pub fn init(&self, seed: u64) -> Result<Model> {
        self.validate()?;
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden);
        widths.push(self.classes);
        let layers: Vec<DenseLayer> = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut r = rng::stream(seed, Purpose::Init, i as u64, 0);
                DenseLayer::glorot(w[0], w[1], Activation::Relu, &mut r)
            })
            .collect();
        let (extractor, head) = Stack::new(layers)?.split_tail(self.head_depth);
        Model::new(extractor, head)
    }
}

/// Feature extractor `E` followed by a classifier head `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    extractor: Stack,
    head: Stack,
}

impl Model {
    pub fn new(extractor: Stack, head: Stack) -> Result<Self> {
        let last = head
            .layers()
            .last()
            .ok_or_else(|| Error::Structure("head has no layers".into()))?;
        if last.activation() != Activation::Identity {
            return Err(Error::Structure("final head layer must be linear".into()));
        }
        if let (Some(e), Some(h)) = (extractor.output_dim(), head.input_dim()) {
            if e != h {
                return Err(Error::Dimension(format!(
                    "extractor outputs {e} features but head expects {h}"
                )));
            }
        }
        Ok(Model { extractor, head })
    }

    pub fn extractor(&self) -> &Stack {
        &self.extractor
    }

    pub fn head(&self) -> &Stack {
        &self.head
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Stack, &mut Stack) {
        (&mut self.extractor, &mut self.head)
    }

    pub fn into_parts(self) -> (Stack, Stack) {
        (self.extractor, self.head)
    }

    pub fn class_count(&self) -> usize {
        self.head.output_dim().unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.extractor
            .input_dim()
            .or_else(|| self.head.input_dim())
            .unwrap_or(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.head.input_dim().unwrap_or(0)
    }

    /// Same extractor, different head.
    pub fn with_head(&self, head: Stack) -> Result<Model> {
        if !head.same_structure(&self.head) {
            return Err(Error::Structure(format!(
                "head shapes {:?} differ from {:?}",
                head.shapes(),
                self.head.shapes()
            )));
        }
        Model::new(self.extractor.clone(), head)
    }

    /// Logits `[batch x C]` for a `[batch x input_dim]` batch.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let (batch, cols) = inputs.shape2()?;
        if cols != self.input_dim() {
            return Err(Error::Dimension(format!(
                "model expects {} input features, got {cols}",
                self.input_dim()
            )));
        }
        let logits = self.forward_raw(inputs.data(), batch);
        let t = Tensor::from_parts(vec![batch, self.class_count()], logits);
        t.check_finite()?;
        Ok(t)
    }

    pub(crate) fn forward_raw(&self, inputs: &[f32], batch: usize) -> Vec<f32> {
        let features = self.extractor.forward_raw(inputs, batch);
        self.head.forward_raw(&features, batch)
    }
}

/// Free-function form of [`Model::forward`].
pub fn forward(model: &Model, inputs: &Tensor) -> Result<Tensor> {
    model.forward(inputs)
}
