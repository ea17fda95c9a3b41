use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

use super::{ClientDataset, LabeledExample};

const MAX_ATTEMPTS: u64 = 100;

/// How a dataset is spread over clients. `gamma: None` is the IID split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub gamma: Option<f64>,
    pub client_count: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.client_count == 0 {
            return Err(Error::InvalidParameter("client count must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::InvalidParameter(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// Splits `total` items by `proportions` with largest-remainder rounding.
/// Ties in the fractional part go to the lower index.
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Partitions examples over clients.
///
/// Dirichlet mode draws, per class in ascending order, `p ~ Dir(gamma * 1_K)`
/// from stream `(seed, Partition, class, attempt)` and hands out that class's
/// examples (shuffled from stream `(seed, Partition, class, 1000 + attempt)`)
/// in contiguous blocks sized by largest-remainder rounding. If any client
/// ends up empty the whole draw is repeated with the next attempt number.
///
/// The IID sentinel deals examples class by class round-robin, continuing the
/// client cursor across classes.
pub fn dirichlet_partition(examples: &[LabeledExample], plan: &PartitionPlan) -> Result<Vec<ClientDataset>> {
    plan.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("cannot partition an empty dataset".into()));
    }
    let k = plan.client_count;
    let classes = examples.iter().map(|e| e.true_label).max().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, e) in examples.iter().enumerate() {
        by_class[e.true_label].push(i);
    }

    let assignment = match plan.gamma {
        None => {
            let mut owner = vec![0usize; examples.len()];
            let mut cursor = 0usize;
            for members in &by_class {
                for &i in members {
                    owner[i] = cursor % k;
                    cursor += 1;
                }
            }
            owner
        }
        Some(gamma) => dirichlet_assignment(&by_class, examples.len(), k, gamma, plan.seed)?,
    };

    let mut buckets: Vec<Vec<LabeledExample>> = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        buckets[c].push(examples[i].clone());
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(id, ex)| ClientDataset::new(id, ex))
        .collect()
}

fn dirichlet_assignment(by_class: &[Vec<usize>], n: usize, k: usize, gamma: f64, seed: u64) -> Result<Vec<usize>> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut owner = vec![0usize; n];
        let mut sizes = vec![0usize; k];
        for (c, members) in by_class.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let mut r = rng::stream(seed, Purpose::Partition, c as u64, attempt);
            let p = rng::dirichlet(&mut r, gamma, k);
            let counts = largest_remainder(&p, members.len());
            let mut order = members.clone();
            let mut s = rng::stream(seed, Purpose::Partition, c as u64, 1000 + attempt);
            rng::shuffle(&mut s, &mut order);
            let mut it = order.into_iter();
            for (client, &cnt) in counts.iter().enumerate() {
                for i in it.by_ref().take(cnt) {
                    owner[i] = client;
                }
                sizes[client] += cnt;
            }
        }
        if sizes.iter().all(|&s| s > 0) {
            return Ok(owner);
        }
        log::debug!("dirichlet attempt {attempt} left a client empty; resampling");
    }
    Err(Error::Precondition(format!(
        "could not give all {k} clients data after {MAX_ATTEMPTS} Dirichlet draws"
    )))
}
