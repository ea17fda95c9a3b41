use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

use super::{Dataset, LabeledExample};

/// Gaussian blobs around `classes` anchors, clipped to `[0, 1]`.
///
/// Anchors depend only on `seed`; `split` selects an independent draw of
/// examples around the same anchors (0 = train, 1 = test, 2 = holdout, ...).
/// Square feature counts are reported as images so a trigger patch can be
/// stamped on them.
pub fn synth_split(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
    split: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::InvalidParameter("per_class and dim must be positive".into()));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "spread must be nonnegative, got {spread}"
        )));
    }
    let anchors: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut r = rng::stream(seed, Purpose::Synth, c as u64, u64::MAX);
            (0..dim).map(|_| 0.1 + 0.6 * rng::uniform(&mut r)).collect()
        })
        .collect();
    let mut examples = Vec::with_capacity(classes * per_class);
    for i in 0..per_class {
        for (c, anchor) in anchors.iter().enumerate() {
            let mut r = rng::stream(seed, Purpose::Synth, c as u64, split * (1 << 32) + i as u64);
            let features = anchor
                .iter()
                .map(|&a| {
                    let noise = if spread > 0.0 {
                        spread * rng::standard_normal(&mut r)
                    } else {
                        0.0
                    };
                    (a + noise).clamp(0.0, 1.0) as f32
                })
                .collect();
            examples.push(LabeledExample::new(features, c));
        }
    }
    let side = (dim as f64).sqrt().round() as usize;
    Ok(Dataset {
        classes,
        feature_dim: dim,
        image: (side * side == dim).then_some((side, side)),
        examples,
    })
}

pub fn synth_blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    synth_split(classes, per_class, dim, spread, seed, 0)
}
