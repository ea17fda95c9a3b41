//! Unlearning by head arithmetic.
//!
//! * sample (and client) scope: `W_hat = alpha * W_l + (1 - alpha) * W_a`
//! * class scope: `W_hat = W_l - beta * W_a`, and for several clients
//!   `W_hat = W_l - sum_k beta_k * W_a_k`
//!
//! plus the coefficient bounds under which argmax preservation on the
//! remaining data is guaranteed, and a checker that measures both
//! requirements (argmax kept on remaining data, as-trained label lost on
//! unlearning data) directly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::nn::{self, argmax, margin, Model, Stack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Samples,
    Class,
    Client,
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "samples" | "sample" => Ok(Scope::Samples),
            "class" => Ok(Scope::Class),
            "client" => Ok(Scope::Client),
            other => Err(Error::InvalidParameter(format!(
                "unknown scope `{other}` (expected samples, class or client)"
            ))),
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scope::Samples => "samples",
            Scope::Class => "class",
            Scope::Client => "client",
        })
    }
}

/// Linear-operation coefficients. `betas` overrides `beta` per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub alpha: f32,
    pub beta: f32,
    #[serde(default)]
    pub betas: BTreeMap<usize, f32>,
}

impl Default for Coefficients {
    fn default() -> Self {
        Coefficients {
            alpha: 0.9,
            beta: 1.0,
            betas: BTreeMap::new(),
        }
    }
}

impl Coefficients {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_beta(self.beta)?;
        for b in self.betas.values() {
            check_beta(*b)?;
        }
        Ok(())
    }

    pub fn beta_for(&self, client: usize) -> f32 {
        self.betas.get(&client).copied().unwrap_or(self.beta)
    }
}

fn check_alpha(alpha: f32) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be in (0,1], got {alpha}")))
    }
}

fn check_beta(beta: f32) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("beta must be nonnegative, got {beta}")))
    }
}

pub fn unlearn_samples(learned: &Stack, aux: &Stack, alpha: f32) -> Result<Stack> {
    check_alpha(alpha)?;
    let alpha = alpha as f64;
    Stack::linear_combine_wide(&[(learned, alpha), (aux, 1.0 - alpha)])
}

/// Same arithmetic as [`unlearn_samples`], applied to a collaboratively
/// aggregated auxiliary head.
pub fn unlearn_samples_multi(learned: &Stack, aggregated_aux: &Stack, alpha: f32) -> Result<Stack> {
    unlearn_samples(learned, aggregated_aux, alpha)
}

pub fn unlearn_class(learned: &Stack, aux: &Stack, beta: f32) -> Result<Stack> {
    check_beta(beta)?;
    nn::head_linear_combine(&[(learned, 1.0), (aux, -beta)])
}

/// Subtracts every client's auxiliary head in ascending client-id order,
/// one [`unlearn_class`] at a time.
pub fn unlearn_class_multi(learned: &Stack, aux: &[(usize, &Stack, f32)]) -> Result<Stack> {
    if aux.is_empty() {
        return Err(Error::Empty("no auxiliary heads to subtract".into()));
    }
    let mut ordered: Vec<&(usize, &Stack, f32)> = aux.iter().collect();
    ordered.sort_by_key(|(id, _, _)| *id);
    let mut out = learned.clone();
    for (_, head, beta) in ordered {
        out = unlearn_class(&out, head, *beta)?;
    }
    Ok(out)
}

/// Auxiliary heads produced by training, keyed by client.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuxHeads {
    pub per_client: BTreeMap<usize, Stack>,
    pub aggregated: Option<Stack>,
}

impl AuxHeads {
    pub fn is_empty(&self) -> bool {
        self.per_client.is_empty() && self.aggregated.is_none()
    }
}

/// Applies the scope's linear operation.
///
/// Sample and client scopes use the aggregated head when present and
/// otherwise the mean of the private heads; class scope subtracts every
/// private head with its own beta.
pub fn unlearn(scope: Scope, learned: &Stack, aux: &AuxHeads, coeffs: &Coefficients) -> Result<Stack> {
    if aux.is_empty() {
        return Err(Error::MissingArtifact("no auxiliary head was trained".into()));
    }
    match scope {
        Scope::Samples | Scope::Client => {
            if let Some(agg) = &aux.aggregated {
                return unlearn_samples_multi(learned, agg, coeffs.alpha);
            }
            if aux.per_client.len() == 1 {
                let head = aux.per_client.values().next().unwrap();
                return unlearn_samples(learned, head, coeffs.alpha);
            }
            let heads: Vec<&Stack> = aux.per_client.values().collect();
            unlearn_samples_multi(learned, &Stack::mean(&heads)?, coeffs.alpha)
        }
        Scope::Class => {
            let terms: Vec<(usize, &Stack, f32)> = aux
                .per_client
                .iter()
                .map(|(id, h)| (*id, h, coeffs.beta_for(*id)))
                .collect();
            if terms.is_empty() {
                let agg = aux.aggregated.as_ref().unwrap();
                return unlearn_class(learned, agg, coeffs.beta);
            }
            unlearn_class_multi(learned, &terms)
        }
    }
}

/// `delta / (delta + 2 N1)` with `delta` the smallest top-two logit gap of
/// the learned model on `remaining` and `N1` its largest absolute logit.
/// Returns 0 when `delta <= 0`.
pub fn alpha_bound(learned: &Model, remaining: &[LabeledExample]) -> Result<f32> {
    let delta = nn::logit_margin_delta(learned, remaining)?;
    let n1 = nn::max_abs_logit(learned, remaining)?;
    Ok(alpha_bound_from(delta, n1))
}

pub fn alpha_bound_from(delta: f32, n1: f32) -> f32 {
    if delta <= 0.0 {
        0.0
    } else {
        delta / (delta + 2.0 * n1)
    }
}

/// `delta / (2 N2)` with `delta` from the learned model and `N2` the largest
/// absolute logit of the auxiliary model on `remaining`. Returns 0 when
/// `delta <= 0` and `f32::INFINITY` when `N2 = 0`.
pub fn beta_bound(learned: &Model, aux: &Model, remaining: &[LabeledExample]) -> Result<f32> {
    let delta = nn::logit_margin_delta(learned, remaining)?;
    let n2 = nn::max_abs_logit(aux, remaining)?;
    Ok(beta_bound_from(delta, n2))
}

pub fn beta_bound_from(delta: f32, n2: f32) -> f32 {
    if delta <= 0.0 {
        0.0
    } else if n2 == 0.0 {
        f32::INFINITY
    } else {
        delta / (2.0 * n2)
    }
}

/// Per-example sufficient condition for sample scope: when both heads pick
/// the same class, every convex combination picks it too.
pub fn sample_guarantee_applies(learned_logits: &[f32], aux_logits: &[f32]) -> bool {
    argmax(learned_logits) == argmax(aux_logits)
}

/// Per-example sufficient condition for class scope:
/// `margin(W_l, x) > 2 beta max_i |F_i(W_a, x)|`.
pub fn class_guarantee_applies(learned_logits: &[f32], aux_logits: &[f32], beta: f32) -> bool {
    let n2 = aux_logits.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    margin(learned_logits) > 2.0 * beta * n2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleDiagnostic {
    pub index: usize,
    pub unlearning: bool,
    pub label: usize,
    pub learned_pred: usize,
    pub unlearned_pred: usize,
    pub learned_margin: f32,
    pub unlearned_margin: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementReport {
    /// Fraction of remaining examples whose prediction is unchanged.
    pub r1_rate: f64,
    /// Fraction of unlearning examples no longer predicted as their as-trained label.
    pub r2_rate: f64,
    pub remaining_count: usize,
    pub unlearning_count: usize,
    /// Remaining examples the learned model gets wrong; these make the
    /// coefficient bounds degenerate.
    pub misclassified_remaining: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub examples: Option<Vec<ExampleDiagnostic>>,
}

/// Measures both requirements for `unlearned` against `learned` on a shared extractor.
pub fn verify_requirements(
    extractor: &Stack,
    learned: &Stack,
    unlearned: &Stack,
    remaining: &[LabeledExample],
    unlearning: &[LabeledExample],
    verbose: bool,
) -> Result<RequirementReport> {
    if remaining.is_empty() || unlearning.is_empty() {
        return Err(Error::Empty(
            "requirement check needs remaining and unlearning data".into(),
        ));
    }
    let before = Model::new(extractor.clone(), learned.clone())?;
    let after = before.with_head(unlearned.clone())?;
    let c = before.class_count();
    let mut diags = Vec::new();
    let mut misclassified = Vec::new();

    let lb = nn::logits(&before, remaining)?;
    let la = nn::logits(&after, remaining)?;
    let mut kept = 0usize;
    for (i, ((rb, ra), ex)) in lb.chunks_exact(c).zip(la.chunks_exact(c)).zip(remaining).enumerate() {
        let (pb, pa) = (argmax(rb), argmax(ra));
        kept += usize::from(pb == pa);
        if pb != ex.trained_label {
            misclassified.push(i);
        }
        if verbose {
            diags.push(ExampleDiagnostic {
                index: i,
                unlearning: false,
                label: ex.trained_label,
                learned_pred: pb,
                unlearned_pred: pa,
                learned_margin: margin(rb),
                unlearned_margin: margin(ra),
            });
        }
    }

    let ub = nn::logits(&before, unlearning)?;
    let ua = nn::logits(&after, unlearning)?;
    let mut forgotten = 0usize;
    for (i, ((rb, ra), ex)) in ub.chunks_exact(c).zip(ua.chunks_exact(c)).zip(unlearning).enumerate() {
        let pa = argmax(ra);
        forgotten += usize::from(pa != ex.trained_label);
        if verbose {
            diags.push(ExampleDiagnostic {
                index: i,
                unlearning: true,
                label: ex.trained_label,
                learned_pred: argmax(rb),
                unlearned_pred: pa,
                learned_margin: margin(rb),
                unlearned_margin: margin(ra),
            });
        }
    }

    Ok(RequirementReport {
        r1_rate: kept as f64 / remaining.len() as f64,
        r2_rate: forgotten as f64 / unlearning.len() as f64,
        remaining_count: remaining.len(),
        unlearning_count: unlearning.len(),
        misclassified_remaining: misclassified,
        examples: verbose.then_some(diags),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;

    fn head(seed: u64) -> Stack {
        let mut spec = ModelSpec::new(4, 3);
        spec.hidden = vec![5];
        spec.init(seed).unwrap().into_parts().1
    }

    #[test]
    fn alpha_one_is_identity() {
        let (l, a) = (head(1), head(2));
        assert_eq!(unlearn_samples(&l, &a, 1.0).unwrap(), l);
    }

    #[test]
    fn identical_heads_are_fixed_points() {
        let l = head(1);
        for alpha in [0.1, 0.5, 0.9, 0.99] {
            assert_eq!(unlearn_samples(&l, &l, alpha).unwrap(), l, "alpha {alpha}");
        }
    }

    #[test]
    fn beta_zero_and_zero_aux_are_identity() {
        let (l, a) = (head(1), head(2));
        assert_eq!(unlearn_class(&l, &a, 0.0).unwrap(), l);
        let z = a.zeros_like();
        assert_eq!(unlearn_class(&l, &z, 3.0).unwrap(), l);
    }

    #[test]
    fn multi_class_with_one_client_matches_single() {
        let (l, a) = (head(1), head(2));
        assert_eq!(
            unlearn_class_multi(&l, &[(4, &a, 0.7)]).unwrap(),
            unlearn_class(&l, &a, 0.7).unwrap()
        );
        assert_eq!(unlearn_class_multi(&l, &[(4, &a, 0.0), (1, &a, 0.0)]).unwrap(), l);
    }

    #[test]
    fn coefficient_validation() {
        let (l, a) = (head(1), head(2));
        assert!(unlearn_samples(&l, &a, 0.0).is_err());
        assert!(unlearn_samples(&l, &a, 1.5).is_err());
        assert!(unlearn_class(&l, &a, -1.0).is_err());
    }

    #[test]
    fn bound_substitution() {
        assert_eq!(alpha_bound_from(2.0, 1.0), 0.5);
        assert_eq!(alpha_bound_from(0.0, 1.0), 0.0);
        assert_eq!(beta_bound_from(2.0, 0.1), 10.0);
        assert_eq!(beta_bound_from(2.0, 0.0), f32::INFINITY);
        assert_eq!(beta_bound_from(-1.0, 0.0), 0.0);
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("samples".parse::<Scope>().unwrap(), Scope::Samples);
        assert_eq!("class".parse::<Scope>().unwrap(), Scope::Class);
        assert!("everything".parse::<Scope>().is_err());
    }

    #[test]
    fn missing_aux_is_reported() {
        let l = head(1);
        let err = unlearn(Scope::Samples, &l, &AuxHeads::default(), &Coefficients::default()).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }
}
