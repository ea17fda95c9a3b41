//! Independent float64 oracles shared by the integration suites.
//!
//! Nothing here calls into the crate's forward, loss or training code; the
//! crate is only used to build random models and to read their parameters.

#![allow(dead_code)]

use fedau::data::{dirichlet_partition, LabeledExample, PartitionPlan};
use fedau::nn::{self, Activation, DenseLayer, Model, ModelSpec, SgdConfig, Stack, TrainableMask};
use fedau::rng::{self, Purpose};
use fedau::tensor::Tensor;
use fedau::unlearning;

/// Layer parameters widened to f64: `(weights [out][in], bias, relu)`.
pub type Layer64 = (Vec<Vec<f64>>, Vec<f64>, bool);

pub fn widen_layer(layer: &DenseLayer) -> Layer64 {
    let (o, i) = (layer.output_dim(), layer.input_dim());
    let w = layer.weights().data();
    let rows = (0..o)
        .map(|r| w[r * i..(r + 1) * i].iter().map(|&v| v as f64).collect())
        .collect();
    let bias = layer.bias().data().iter().map(|&v| v as f64).collect();
    (rows, bias, layer.activation() == Activation::Relu)
}

pub fn widen_model(model: &Model) -> Vec<Layer64> {
    model
        .extractor()
        .layers()
        .iter()
        .chain(model.head().layers())
        .map(widen_layer)
        .collect()
}

/// Forward pass returning every layer's pre-activation and the final output.
pub fn forward64_trace(layers: &[Layer64], x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut a = x.to_vec();
    let mut pre = Vec::with_capacity(layers.len());
    for (w, b, relu) in layers {
        let z: Vec<f64> = w
            .iter()
            .zip(b)
            .map(|(row, bi)| row.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + bi)
            .collect();
        a = if *relu {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    (pre, a)
}

pub fn forward64(layers: &[Layer64], x: &[f64]) -> Vec<f64> {
    forward64_trace(layers, x).1
}

pub fn model_logits64(model: &Model, x: &[f32]) -> Vec<f64> {
    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    forward64(&widen_model(model), &x)
}

pub fn cross_entropy64(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn mean_loss64(layers: &[Layer64], xs: &[Vec<f64>], labels: &[usize]) -> f64 {
    xs.iter()
        .zip(labels)
        .map(|(x, &y)| cross_entropy64(&forward64(layers, x), y))
        .sum::<f64>()
        / xs.len() as f64
}

/// Lowest index wins ties.
pub fn argmax64(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn random_vec(r: &mut rng::Stream, n: usize, lo: f64, hi: f64) -> Vec<f32> {
    (0..n).map(|_| (lo + (hi - lo) * rng::uniform(r)) as f32).collect()
}

pub fn random_layer(r: &mut rng::Stream, input: usize, output: usize, activation: Activation) -> DenseLayer {
    let w = Tensor::new(vec![output, input], random_vec(r, input * output, -1.0, 1.0)).unwrap();
    let b = Tensor::new(vec![output], random_vec(r, output, -0.5, 0.5)).unwrap();
    DenseLayer::new(w, b, activation).unwrap()
}

pub fn single_layer_head(r: &mut rng::Stream, input: usize, classes: usize) -> Stack {
    Stack::new(vec![random_layer(r, input, classes, Activation::Identity)]).unwrap()
}

/// Per-layer gradient check for one random net. Returns the worst
/// layer-wise relative error `|g - g_fd| / max(|g|, |g_fd|)` (norms over the
/// layer's weights and bias), or `None` if the draw sits too close to a ReLU
/// kink for central differences to be meaningful.
pub fn gradient_check(seed: u64) -> Option<f64> {
    const H: f64 = 1e-3;
    const SCALE: f32 = 16.0;
    let mut r = rng::stream(seed, Purpose::Misc, 77, 0);
    let input = 3 + rng::below(&mut r, 4);
    let depth = 1 + rng::below(&mut r, 3);
    let hidden: Vec<usize> = (0..depth).map(|_| 2 + rng::below(&mut r, 5)).collect();
    let classes = 2 + rng::below(&mut r, 4);
    let head_depth = 1 + rng::below(&mut r, 2);
    let spec = ModelSpec {
        input_dim: input,
        hidden: hidden.clone(),
        classes,
        head_depth,
    };
    let model = perturb_biases(spec.init(seed).unwrap(), &mut r);
    let batch = 1 + rng::below(&mut r, 4);
    let xs32: Vec<Vec<f32>> = (0..batch).map(|_| random_vec(&mut r, input, 0.0, 1.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng::below(&mut r, classes)).collect();
    let xs: Vec<Vec<f64>> = xs32.iter().map(|x| x.iter().map(|&v| v as f64).collect()).collect();

    let layers = widen_model(&model);
    for x in &xs {
        let (pre, _) = forward64_trace(&layers, x);
        for (z, (_, _, relu)) in pre.iter().zip(&layers) {
            if *relu && z.iter().any(|v| v.abs() < 0.05) {
                return None;
            }
        }
    }

    // Analytic gradient from one plain SGD step: p' = p - lr * g.
    let inputs = Tensor::new(vec![batch, input], xs32.concat()).unwrap();
    let sgd = SgdConfig {
        learning_rate: SCALE,
        weight_decay: 0.0,
        batch_size: batch,
    };
    let stepped = widen_model(&nn::sgd_step(&model, &inputs, &labels, &sgd, TrainableMask::ALL).unwrap());

    let mut worst = 0.0f64;
    for li in 0..layers.len() {
        let (mut diff, mut an_norm, mut fd_norm) = (0.0, 0.0, 0.0);
        let rows = layers[li].0.len();
        let cols = layers[li].0[0].len();
        // `col == cols` addresses the bias of row `o`.
        for o in 0..rows {
            for col in 0..=cols {
                let shifted = |d: f64| {
                    let mut ls = layers.clone();
                    match col < cols {
                        true => ls[li].0[o][col] += d,
                        false => ls[li].1[o] += d,
                    }
                    mean_loss64(&ls, &xs, &labels)
                };
                let fd = (shifted(H) - shifted(-H)) / (2.0 * H);
                let analytic = match col < cols {
                    true => (layers[li].0[o][col] - stepped[li].0[o][col]) / SCALE as f64,
                    false => (layers[li].1[o] - stepped[li].1[o]) / SCALE as f64,
                };
                diff += (analytic - fd).powi(2);
                an_norm += analytic.powi(2);
                fd_norm += fd.powi(2);
            }
        }
        let denom = an_norm.sqrt().max(fd_norm.sqrt());
        if denom > 1e-9 {
            worst = worst.max(diff.sqrt() / denom);
        }
    }
    Some(worst)
}

/// Fresh models start with zero biases; give them some so bias gradients
/// and ReLU cut-offs are exercised away from the origin.
fn perturb_biases(model: Model, r: &mut rng::Stream) -> Model {
    let rebuild = |stack: &Stack, r: &mut rng::Stream| -> Stack {
        let layers = stack
            .layers()
            .iter()
            .map(|l| {
                let b = Tensor::new(vec![l.output_dim()], random_vec(r, l.output_dim(), -0.3, 0.3)).unwrap();
                DenseLayer::new(l.weights().clone(), b, l.activation()).unwrap()
            })
            .collect();
        Stack::new(layers).unwrap()
    };
    let e = rebuild(model.extractor(), r);
    let h = rebuild(model.head(), r);
    Model::new(e, h).unwrap()
}

/// Checks linearity of the single-layer head combination against f64 logits.
/// The error is measured relative to the magnitude of the summed terms,
/// which is what float32 accumulation can be held to.
pub fn combination_error(h1: &Stack, h2: &Stack, c1: f32, c2: f32, x: &[f32]) -> f64 {
    let combined = nn::head_linear_combine(&[(h1, c1), (h2, c2)]).unwrap();
    let input = Tensor::new(vec![1, x.len()], x.to_vec()).unwrap();
    let got = combined.forward(&input).unwrap();
    let l1 = widen_layer(&h1.layers()[0]);
    let l2 = widen_layer(&h2.layers()[0]);
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let (c1, c2) = (c1 as f64, c2 as f64);
    let mut worst = 0.0f64;
    for (o, &g) in got.data().iter().enumerate() {
        let mut want = c1 * l1.1[o] + c2 * l2.1[o];
        let mut scale = (c1 * l1.1[o]).abs() + (c2 * l2.1[o]).abs();
        for (i, xi) in x64.iter().enumerate() {
            want += (c1 * l1.0[o][i] + c2 * l2.0[o][i]) * xi;
            scale += ((c1 * l1.0[o][i]).abs() + (c2 * l2.0[o][i]).abs()) * xi.abs();
        }
        if scale > 0.0 {
            worst = worst.max((g as f64 - want).abs() / scale);
        }
    }
    worst
}

/// Outcome of one randomized margin-predicate trial.
#[derive(Debug, Default, Clone, Copy)]
pub struct MarginTrial {
    pub sample_qualifying: usize,
    pub sample_violations: usize,
    pub class_qualifying: usize,
    pub class_violations: usize,
}

/// Random extractor, learned head and a nearby auxiliary head. Every input
/// for which a scope's per-example predicate holds must keep its argmax
/// after that scope's unlearning operation.
pub fn margin_trial(seed: u64) -> MarginTrial {
    let mut r = rng::stream(seed, Purpose::Misc, 91, 0);
    let input = 4 + rng::below(&mut r, 6);
    let classes = 3 + rng::below(&mut r, 6);
    let spec = ModelSpec {
        input_dim: input,
        hidden: vec![8],
        classes,
        head_depth: 1,
    };
    let model = spec.init(seed).unwrap();
    let learned = model.head().clone();
    let noise = single_layer_head(&mut r, 8, classes);
    let spread = 0.05 + rng::uniform(&mut r);
    let near = nn::head_linear_combine(&[(&learned, 1.0), (&noise, spread as f32)]).unwrap();
    let far = single_layer_head(&mut r, 8, classes);
    let alpha = rng::uniform(&mut r) as f32;
    let beta = (0.5 * rng::uniform(&mut r)) as f32;

    let mut out = MarginTrial::default();
    let xs: Vec<f32> = random_vec(&mut r, 40 * input, 0.0, 1.0);
    let inputs = Tensor::new(vec![40, input], xs).unwrap();
    let feats = model.extractor().forward(&inputs).unwrap();
    let logits = |h: &Stack| h.forward(&feats).unwrap().into_data();
    let ll = logits(&learned);

    for aux in [&near, &far] {
        let la = logits(aux);
        let sampled = logits(&unlearning::unlearn_samples(&learned, aux, alpha).unwrap());
        let classed = logits(&unlearning::unlearn_class(&learned, aux, beta).unwrap());
        for i in 0..40 {
            let row = |v: &[f32]| v[i * classes..(i + 1) * classes].to_vec();
            let (l, a) = (row(&ll), row(&la));
            let before = nn::argmax(&l);
            if unlearning::sample_guarantee_applies(&l, &a) {
                out.sample_qualifying += 1;
                out.sample_violations += usize::from(nn::argmax(&row(&sampled)) != before);
            }
            if unlearning::class_guarantee_applies(&l, &a, beta) {
                out.class_qualifying += 1;
                out.class_violations += usize::from(nn::argmax(&row(&classed)) != before);
            }
        }
    }
    out
}

/// Labels only; features carry the example's index so the multiset of
/// client examples can be compared with the input exactly.
pub fn indexed_examples(labels: &[usize]) -> Vec<LabeledExample> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| LabeledExample::new(vec![i as f32], y))
        .collect()
}

/// Disjoint and exhaustive, plus the IID per-class balance when `gamma` is
/// `None`. Returns a description of the first violation.
pub fn check_partition(labels: &[usize], classes: usize, plan: &PartitionPlan) -> Result<(), String> {
    let examples = indexed_examples(labels);
    let parts = dirichlet_partition(&examples, plan).map_err(|e| e.to_string())?;
    if parts.len() != plan.client_count {
        return Err(format!("{} clients for a plan of {}", parts.len(), plan.client_count));
    }
    let mut seen = vec![0usize; labels.len()];
    for (k, part) in parts.iter().enumerate() {
        if part.client_id != k {
            return Err(format!("client at position {k} has id {}", part.client_id));
        }
        for ex in &part.examples {
            let i = ex.features[0] as usize;
            if ex.true_label != labels[i] || ex.trained_label != labels[i] {
                return Err(format!("example {i} changed label"));
            }
            seen[i] += 1;
        }
    }
    if let Some(i) = seen.iter().position(|&s| s != 1) {
        return Err(format!("example {i} assigned {} times", seen[i]));
    }
    if plan.gamma.is_none() {
        for c in 0..classes {
            let counts: Vec<usize> = parts
                .iter()
                .map(|p| p.examples.iter().filter(|e| e.true_label == c).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            if hi - lo > 1 {
                return Err(format!("class {c} counts {counts:?} differ by more than one"));
            }
        }
    }
    Ok(())
}

/// Random partition plan and label vector for trial `t`.
pub fn random_partition_case(t: u64) -> (Vec<usize>, usize, PartitionPlan) {
    let mut r = rng::stream(t, Purpose::Misc, 55, 0);
    let classes = 5 + rng::below(&mut r, 6);
    let n = classes * (10 + rng::below(&mut r, 40)) + rng::below(&mut r, 17);
    let labels: Vec<usize> = (0..n)
        .map(|i| if i < classes { i } else { rng::below(&mut r, classes) })
        .collect();
    let client_count = 2 + rng::below(&mut r, 6);
    let gamma = if t.is_multiple_of(4) {
        None
    } else {
        Some(0.3 + 10.0 * rng::uniform(&mut r))
    };
    (
        labels,
        classes,
        PartitionPlan {
            gamma,
            client_count,
            seed: t,
        },
    )
}
