mod common;

use common::*;
use fedau::data::LabeledExample;
use fedau::nn::{self, ModelSpec, Stack};
use fedau::rng::{self, Purpose};
use fedau::unlearning::{self, AuxHeads, Coefficients, Scope};
use proptest::prelude::*;

fn head_pair(seed: u64, input: usize, classes: usize) -> (Stack, Stack) {
    let mut r = rng::stream(seed, Purpose::Misc, 2, 0);
    (
        single_layer_head(&mut r, input, classes),
        single_layer_head(&mut r, input, classes),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn combined_head_logits_are_combined_logits(
        seed in any::<u64>(),
        input in 1usize..12,
        classes in 2usize..10,
        c1 in -3.0f32..3.0,
        c2 in -3.0f32..3.0,
        x in prop::collection::vec(0.0f32..1.0, 12),
    ) {
        let (h1, h2) = head_pair(seed, input, classes);
        let err = combination_error(&h1, &h2, c1, c2, &x[..input]);
        prop_assert!(err <= 1e-6, "relative error {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shared_argmax_survives_every_convex_combination(
        seed in any::<u64>(),
        classes in 2usize..8,
        alpha in 1e-6f32..=1.0,
        x in prop::collection::vec(0.0f32..1.0, 6),
    ) {
        let (h1, h2) = head_pair(seed, 6, classes);
        let input = fedau::tensor::Tensor::new(vec![1, 6], x).unwrap();
        let l1 = h1.forward(&input).unwrap().into_data();
        let l2 = h2.forward(&input).unwrap().into_data();
        prop_assume!(nn::argmax(&l1) == nn::argmax(&l2));
        let mixed = unlearning::unlearn_samples(&h1, &h2, alpha).unwrap();
        let lm = mixed.forward(&input).unwrap().into_data();
        prop_assert_eq!(nn::argmax(&lm), nn::argmax(&l1));
    }

    #[test]
    fn class_fold_is_left_to_right_in_client_order(
        seed in any::<u64>(),
        betas in prop::collection::vec(0.0f32..2.0, 1..5),
    ) {
        let mut r = rng::stream(seed, Purpose::Misc, 3, 0);
        let learned = single_layer_head(&mut r, 5, 4);
        let heads: Vec<Stack> = betas.iter().map(|_| single_layer_head(&mut r, 5, 4)).collect();
        // Hand the terms over in reverse; the fold must still go by id.
        let terms: Vec<(usize, &Stack, f32)> =
            heads.iter().zip(&betas).enumerate().rev().map(|(i, (h, b))| (i * 3, h, *b)).collect();
        let folded = unlearning::unlearn_class_multi(&learned, &terms).unwrap();
        let mut want = learned.clone();
        for (h, b) in heads.iter().zip(&betas) {
            want = unlearning::unlearn_class(&want, h, *b).unwrap();
        }
        prop_assert_eq!(folded, want);
    }

    #[test]
    fn identities_at_alpha_one_and_beta_zero(seed in any::<u64>()) {
        let (l, a) = head_pair(seed, 7, 5);
        prop_assert_eq!(unlearning::unlearn_samples(&l, &a, 1.0).unwrap(), l.clone());
        prop_assert_eq!(unlearning::unlearn_class(&l, &a, 0.0).unwrap(), l);
    }
}

#[test]
fn margin_predicates_hold_on_every_qualifying_example() {
    let mut total = MarginTrial::default();
    for t in 0..100 {
        let m = margin_trial(t);
        assert_eq!(m.sample_violations, 0, "trial {t}: {m:?}");
        assert_eq!(m.class_violations, 0, "trial {t}: {m:?}");
        total.sample_qualifying += m.sample_qualifying;
        total.class_qualifying += m.class_qualifying;
    }
    assert!(total.sample_qualifying > 1000, "{total:?}");
    assert!(total.class_qualifying > 1000, "{total:?}");
}

fn toy_case(seed: u64, n: usize) -> (fedau::nn::Model, Stack, Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut r = rng::stream(seed, Purpose::Misc, 4, 0);
    let spec = ModelSpec {
        input_dim: 6,
        hidden: vec![7],
        classes: 4,
        head_depth: 1,
    };
    let model = spec.init(seed).unwrap();
    let other = single_layer_head(&mut r, 7, 4);
    let mut make = |count: usize, flagged: bool| -> Vec<LabeledExample> {
        (0..count)
            .map(|_| {
                let mut e = LabeledExample::new(random_vec(&mut r, 6, 0.0, 1.0), rng::below(&mut r, 4));
                e.trained_label = rng::below(&mut r, 4);
                e.is_unlearning = flagged;
                e
            })
            .collect()
    };
    let remaining = make(n, false);
    let unlearning = make(n / 2, true);
    (model, other, remaining, unlearning)
}

#[test]
fn requirement_rates_match_brute_force() {
    for seed in 0..10 {
        let (model, other, dr, du) = toy_case(seed, 50);
        let unlearned = unlearning::unlearn_samples(model.head(), &other, 0.4).unwrap();
        let after = model.with_head(unlearned.clone()).unwrap();
        let report =
            unlearning::verify_requirements(model.extractor(), model.head(), &unlearned, &dr, &du, true).unwrap();

        let pred = |m: &fedau::nn::Model, e: &LabeledExample| argmax64(&model_logits64(m, &e.features));
        let kept = dr.iter().filter(|e| pred(&model, e) == pred(&after, e)).count();
        let forgot = du.iter().filter(|e| pred(&after, e) != e.trained_label).count();
        assert_eq!(report.r1_rate, kept as f64 / 50.0, "seed {seed}");
        assert_eq!(report.r2_rate, forgot as f64 / 25.0, "seed {seed}");
        let wrong: Vec<usize> = (0..dr.len())
            .filter(|&i| pred(&model, &dr[i]) != dr[i].trained_label)
            .collect();
        assert_eq!(report.misclassified_remaining, wrong);
        assert_eq!(report.examples.as_ref().map(Vec::len), Some(75));
    }
}

#[test]
fn unchanged_head_keeps_every_prediction() {
    let (model, _, dr, du) = toy_case(11, 30);
    let report =
        unlearning::verify_requirements(model.extractor(), model.head(), model.head(), &dr, &du, false).unwrap();
    assert_eq!(report.r1_rate, 1.0);
    assert!(report.examples.is_none());
}

#[test]
fn bounds_match_exhaustive_scan() {
    for seed in 0..10 {
        let (model, other, dr, _) = toy_case(seed, 40);
        let aux = model.with_head(other).unwrap();
        let (mut delta, mut n1, mut n2) = (f64::INFINITY, 0.0f64, 0.0f64);
        for e in &dr {
            let l = model_logits64(&model, &e.features);
            let mut sorted = l.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            delta = delta.min(sorted[0] - sorted[1]);
            n1 = l.iter().fold(n1, |m, v| m.max(v.abs()));
            n2 = model_logits64(&aux, &e.features).iter().fold(n2, |m, v| m.max(v.abs()));
        }
        let a = unlearning::alpha_bound(&model, &dr).unwrap() as f64;
        let b = unlearning::beta_bound(&model, &aux, &dr).unwrap() as f64;
        let want_a = delta / (delta + 2.0 * n1);
        let want_b = delta / (2.0 * n2);
        assert!(
            (a - want_a).abs() <= 1e-4 * want_a.max(1e-3),
            "seed {seed}: {a} vs {want_a}"
        );
        assert!(
            (b - want_b).abs() <= 1e-4 * want_b.max(1e-3),
            "seed {seed}: {b} vs {want_b}"
        );
    }
}

#[test]
fn scope_dispatch_uses_the_right_heads() {
    let (l, a) = head_pair(5, 4, 3);
    let mut r = rng::stream(6, Purpose::Misc, 0, 0);
    let b = single_layer_head(&mut r, 4, 3);
    let mut aux = AuxHeads::default();
    aux.per_client.insert(2, a.clone());
    aux.per_client.insert(7, b.clone());
    let mut coeffs = Coefficients::default();
    coeffs.betas.insert(7, 0.25);

    let class = unlearning::unlearn(Scope::Class, &l, &aux, &coeffs).unwrap();
    let want = unlearning::unlearn_class(&unlearning::unlearn_class(&l, &a, coeffs.beta).unwrap(), &b, 0.25).unwrap();
    assert_eq!(class, want);

    let samples = unlearning::unlearn(Scope::Samples, &l, &aux, &coeffs).unwrap();
    let mean = Stack::mean(&[&a, &b]).unwrap();
    assert_eq!(samples, unlearning::unlearn_samples(&l, &mean, coeffs.alpha).unwrap());
}
