use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::layer::{Activation, DenseLayer};

/// An ordered run of dense layers. Used both for the feature extractor and
/// for classifier heads; an empty stack is the identity map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stack {
    layers: Vec<DenseLayer>,
}

impl Stack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Stack { layers })
    }

    pub fn empty() -> Self {
        Stack::default()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(DenseLayer::input_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(DenseLayer::output_dim)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    /// Byte size of the stack's parameters stored as `f32`.
    pub fn parameter_bytes(&self) -> usize {
        self.parameter_count() * std::mem::size_of::<f32>()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.output_dim(), l.input_dim())).collect()
    }

    pub fn same_structure(&self, other: &Stack) -> bool {
        self.shapes() == other.shapes()
    }

    /// Stack of zero-valued layers with the same shapes and activations.
    pub fn zeros_like(&self) -> Stack {
        Stack {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim(), l.activation()))
                .collect(),
        }
    }

    pub(crate) fn forward_raw(&self, input: &[f32], batch: usize) -> Vec<f32> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_raw(&cur, batch, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (batch, cols) = input.shape2()?;
        match self.input_dim() {
            None => return Ok(input.clone()),
            Some(d) if d != cols => return Err(Error::Dimension(format!("stack expects {d} inputs, got {cols}"))),
            _ => {}
        }
        let out = self.forward_raw(input.data(), batch);
        let t = Tensor::from_parts(vec![batch, self.output_dim().unwrap_or(cols)], out);
        t.check_finite()?;
        Ok(t)
    }

    /// Per-parameter linear combination `sum_i c_i * S_i` over structurally
    /// identical stacks. Terms with a zero coefficient are skipped, so a
    /// single unit-weight term reproduces its stack bit for bit.
    pub fn linear_combine(terms: &[(&Stack, f32)]) -> Result<Stack> {
        let wide: Vec<(&Stack, f64)> = terms.iter().map(|(s, c)| (*s, *c as f64)).collect();
        Stack::linear_combine_wide(&wide)
    }

    /// [`Stack::linear_combine`] with `f64` coefficients; accumulation is in
    /// `f64` and each parameter is rounded to `f32` once.
    pub fn linear_combine_wide(terms: &[(&Stack, f64)]) -> Result<Stack> {
        let (first, _) = terms
            .first()
            .ok_or_else(|| Error::Empty("no stacks to combine".into()))?;
        for (i, (s, c)) in terms.iter().enumerate() {
            if !s.same_structure(first) {
                return Err(Error::Structure(format!(
                    "term {i} has shapes {:?}, expected {:?}",
                    s.shapes(),
                    first.shapes()
                )));
            }
            if !c.is_finite() {
                return Err(Error::InvalidParameter(format!("coefficient {i} is {c}")));
            }
        }
        let active: Vec<(&Stack, f64)> = terms.iter().filter(|(_, c)| *c != 0.0).copied().collect();
        let mut layers = Vec::with_capacity(first.depth());
        for li in 0..first.depth() {
            let proto = &first.layers[li];
            let combine = |pick: &dyn Fn(&DenseLayer) -> &Tensor| -> Result<Tensor> {
                // Exact single unit term: hand back the original bits (keeps -0.0).
                if let [(s, c)] = active.as_slice() {
                    if *c == 1.0 {
                        return Ok(pick(&s.layers[li]).clone());
                    }
                }
                let mut acc = vec![0.0f64; pick(proto).len()];
                for (s, c) in &active {
                    for (a, v) in acc.iter_mut().zip(pick(&s.layers[li]).data()) {
                        *a += c * *v as f64;
                    }
                }
                Tensor::new(pick(proto).dims().to_vec(), acc.into_iter().map(|v| v as f32).collect())
            };
            let w = combine(&|l: &DenseLayer| l.weights())?;
            let b = combine(&|l: &DenseLayer| l.bias())?;
            layers.push(DenseLayer::new(w, b, proto.activation())?);
        }
        Ok(Stack { layers })
    }

    /// Per-parameter weighted mean. `weights` must be positive; they are
    /// normalised internally.
    pub fn weighted_mean(parts: &[&Stack], weights: &[f64]) -> Result<Stack> {
        if parts.is_empty() {
            return Err(Error::Empty("no stacks to aggregate".into()));
        }
        if parts.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} parts but {} weights",
                parts.len(),
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "aggregation weights must be nonnegative with positive sum".into(),
            ));
        }
        let first = parts[0];
        for (i, p) in parts.iter().enumerate() {
            if !p.same_structure(first) {
                return Err(Error::Structure(format!(
                    "part {i} has shapes {:?}, expected {:?}",
                    p.shapes(),
                    first.shapes()
                )));
            }
        }
        let mut layers = Vec::with_capacity(first.depth());
        for li in 0..first.depth() {
            let avg = |pick: &dyn Fn(&DenseLayer) -> &Tensor| -> Tensor {
                let proto = pick(&first.layers[li]);
                let mut acc = vec![0.0f64; proto.len()];
                for (p, w) in parts.iter().zip(weights) {
                    for (a, v) in acc.iter_mut().zip(pick(&p.layers[li]).data()) {
                        *a += w * *v as f64;
                    }
                }
                let data = acc.into_iter().map(|v| (v / total) as f32).collect();
                Tensor::from_parts(proto.dims().to_vec(), data)
            };
            let w = avg(&|l: &DenseLayer| l.weights());
            let b = avg(&|l: &DenseLayer| l.bias());
            layers.push(DenseLayer::new(w, b, first.layers[li].activation())?);
        }
        Ok(Stack { layers })
    }

    pub fn mean(parts: &[&Stack]) -> Result<Stack> {
        Stack::weighted_mean(parts, &vec![1.0; parts.len()])
    }

    /// Splits off the last `depth` layers as a head; the final head layer
    /// gets an identity activation.
    pub(crate) fn split_tail(mut self, depth: usize) -> (Stack, Stack) {
        let at = self.layers.len().saturating_sub(depth);
        let mut tail = self.layers.split_off(at);
        if let Some(last) = tail.pop() {
            tail.push(last.with_activation(Activation::Identity));
        }
        (Stack { layers: self.layers }, Stack { layers: tail })
    }
}

/// Combines classifier heads per parameter: `W = sum_i c_i W_i`.
pub fn head_linear_combine(heads: &[(&Stack, f32)]) -> Result<Stack> {
    Stack::linear_combine(heads)
}
