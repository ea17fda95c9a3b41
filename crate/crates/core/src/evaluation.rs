//! Utility and forgetting metrics, the loss-threshold membership attack,
//! and cost accounting.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::nn::{self, LabelSource, Model};
use crate::rng::{self, Purpose};
use crate::unlearning::{AuxHeads, Scope};

/// Accuracy on remaining test data under true labels. Class scope leaves the
/// forgotten class out.
pub fn rm_acc(model: &Model, test: &[LabeledExample], scope: Scope, class: Option<usize>) -> Result<f64> {
    let kept: Vec<LabeledExample>;
    let set = match (scope, class) {
        (Scope::Class, Some(c)) => {
            kept = test.iter().filter(|e| e.true_label != c).cloned().collect();
            &kept[..]
        }
        (Scope::Class, None) => return Err(Error::InvalidParameter("class scope needs a class".into())),
        _ => test,
    };
    if set.is_empty() {
        return Err(Error::Empty("no remaining test examples".into()));
    }
    nn::evaluate_accuracy(model, set, LabelSource::True)
}

/// Accuracy on the forgetting data under the labels it was trained with.
pub fn ul_acc(model: &Model, unlearning: &[LabeledExample]) -> Result<f64> {
    if unlearning.is_empty() {
        return Err(Error::Empty("no unlearning examples".into()));
    }
    nn::evaluate_accuracy(model, unlearning, LabelSource::AsTrained)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    pub attack_acc: f64,
    pub attack_recall: f64,
    pub threshold: f32,
}

/// Best threshold `t` for "loss <= t means member", maximising balanced
/// accuracy. Only the multiset of losses matters, never their order.
pub fn best_threshold(member_losses: &[f32], nonmember_losses: &[f32]) -> f32 {
    let mut cands: Vec<f32> = member_losses.iter().chain(nonmember_losses).copied().collect();
    cands.sort_by(f32::total_cmp);
    cands.dedup();
    let mut best = (f64::NEG_INFINITY, f32::NEG_INFINITY);
    for &t in std::iter::once(&f32::NEG_INFINITY).chain(&cands) {
        let acc = balanced_accuracy(member_losses, nonmember_losses, t);
        if acc > best.0 {
            best = (acc, t);
        }
    }
    best.1
}

fn detect_rate(losses: &[f32], t: f32) -> f64 {
    losses.iter().filter(|&&l| l <= t).count() as f64 / losses.len() as f64
}

pub fn balanced_accuracy(member_losses: &[f32], nonmember_losses: &[f32], t: f32) -> f64 {
    0.5 * (detect_rate(member_losses, t) + 1.0 - detect_rate(nonmember_losses, t))
}

/// Loss-threshold membership inference. Members are scored with their
/// as-trained labels, nonmembers with theirs. The larger set is subsampled
/// to the size of the smaller; each is split in half, the threshold is fit
/// on one half and the attack is scored on the other.
pub fn mia_loss_threshold(
    model: &Model,
    members: &[LabeledExample],
    nonmembers: &[LabeledExample],
    seed: u64,
) -> Result<MiaResult> {
    let n = members.len().min(nonmembers.len());
    if n < 4 {
        return Err(Error::Precondition(format!(
            "membership attack needs at least 4 examples per side, got {} members and {} nonmembers",
            members.len(),
            nonmembers.len()
        )));
    }
    let ml = nn::example_losses(model, members, LabelSource::AsTrained)?;
    let nl = nn::example_losses(model, nonmembers, LabelSource::AsTrained)?;
    let pick = |losses: &[f32], side: u64| -> Vec<f32> {
        let mut r = rng::stream(seed, Purpose::Mia, side, 0);
        let order = rng::permutation(&mut r, losses.len());
        order[..n].iter().map(|&i| losses[i]).collect()
    };
    let (m, nm) = (pick(&ml, 0), pick(&nl, 1));
    let half = n / 2;
    let t = best_threshold(&m[..half], &nm[..half]);
    let (mt, nt) = (&m[half..], &nm[half..]);
    Ok(MiaResult {
        attack_acc: balanced_accuracy(mt, nt, t),
        attack_recall: detect_rate(mt, t),
        threshold: t,
    })
}

/// Times one unlearning operation. Returns its output and elapsed seconds.
pub fn time_op<T>(op: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = op()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Serialized bytes of the extra artifacts FedAU keeps: one auxiliary head
/// per unlearning client, or the single aggregated head.
pub fn stored_bytes(aux: &AuxHeads) -> usize {
    match (&aux.aggregated, aux.per_client.is_empty()) {
        (Some(a), true) => checkpoint::head_encoded_len(a),
        _ => aux.per_client.values().map(checkpoint::head_encoded_len).sum(),
    }
}

/// Timing plus storage of an unlearning method.
pub fn cost_accounting(unlearn_time_s: f64, aux: Option<&AuxHeads>) -> (f64, usize) {
    (unlearn_time_s.max(0.0), aux.map_or(0, stored_bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: Scope,
    pub method: String,
    pub rm_acc: f64,
    pub ul_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mia_attack_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mia_attack_recall: Option<f64>,
    pub unlearn_time_s: f64,
    pub stored_bytes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2_rate: Option<f64>,
}

impl MetricsReport {
    pub fn new(scope: Scope, method: impl Into<String>, rm_acc: f64, ul_acc: f64) -> Self {
        MetricsReport {
            scope,
            method: method.into(),
            rm_acc,
            ul_acc,
            mia_attack_acc: None,
            mia_attack_recall: None,
            unlearn_time_s: 0.0,
            stored_bytes: 0,
            r1_rate: None,
            r2_rate: None,
        }
    }

    pub fn with_mia(mut self, mia: MiaResult) -> Self {
        self.mia_attack_acc = Some(mia.attack_acc);
        self.mia_attack_recall = Some(mia.attack_recall);
        self
    }

    /// Copy with timing zeroed, for byte-stable reports.
    pub fn without_timing(&self) -> Self {
        MetricsReport {
            unlearn_time_s: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Serialize)]
struct TableRow<'a> {
    scope: String,
    method: &'a str,
    rm_acc: f64,
    ul_acc: f64,
    mia_acc: Option<f64>,
    time_s: f64,
    bytes: usize,
}

/// Writes the comparison table as CSV.
pub fn write_table<W: Write>(out: W, rows: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(TableRow {
            scope: r.scope.to_string(),
            method: &r.method,
            rm_acc: r.rm_acc,
            ul_acc: r.ul_acc,
            mia_acc: r.mia_attack_acc,
            time_s: r.unlearn_time_s,
            bytes: r.stored_bytes,
        })
        .map_err(|e| Error::InvalidParameter(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<table>", e))
}
