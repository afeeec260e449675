//! Property tests for the geometry, loss, sampler, and tensor invariants.

use libra_balance::boxes::{assign, iou, AssignConfig, Box2D, Label};
use libra_balance::loss::{
    balanced_l1, balanced_l1_grad, smooth_l1_grad, solve_b, BalancedL1Params,
};
use libra_balance::sampler::{sample_iou_balanced, sample_random, SamplerConfig};
use libra_balance::boxes::Candidate;
use libra_balance::tensor::{maxpool_to, mean_stack, resize_nearest, softmax_rows, Tensor};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = Box2D<f64>> {
    (
        -100.0..100.0f64,
        -100.0..100.0f64,
        0.0..50.0f64,
        0.0..50.0f64,
    )
        .prop_map(|(x1, y1, w, h)| Box2D::new(x1, y1, x1 + w, y1 + h).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric(a in arb_box(), b in arb_box()) {
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn iou_self_is_one_for_positive_area(a in arb_box()) {
        prop_assume!(a.area() > 0.0);
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_is_scale_invariant(a in arb_box(), b in arb_box(), s in 0.1..10.0f64) {
        let scale = |bx: &Box2D<f64>| {
            Box2D::new(bx.x1 * s, bx.y1 * s, bx.x2 * s, bx.y2 * s).unwrap()
        };
        let before = iou(&a, &b);
        let after = iou(&scale(&a), &scale(&b));
        prop_assert!((before - after).abs() < 1e-12, "{before} vs {after}");
    }

    #[test]
    fn assign_partitions_candidates(
        cands in proptest::collection::vec(arb_box(), 1..20),
        gts in proptest::collection::vec(arb_box(), 0..5),
        pos in 0.3..0.9f64,
        neg_frac in 0.0..1.0f64,
    ) {
        let cfg = AssignConfig::new(pos, pos * neg_frac).unwrap();
        let out = assign(&cands, &gts, &cfg);
        prop_assert_eq!(out.len(), cands.len());
        for c in out {
            prop_assert!((0.0..=1.0).contains(&c.iou));
            match c.label {
                Label::Positive => {
                    prop_assert!(c.gt_index.is_some());
                    prop_assert!(c.iou >= cfg.pos_iou_threshold);
                }
                Label::Negative => prop_assert!(c.iou < cfg.neg_iou_threshold || gts.is_empty()),
                Label::Ignored => prop_assert!(
                    c.iou >= cfg.neg_iou_threshold && c.iou < cfg.pos_iou_threshold
                ),
            }
        }
    }

    #[test]
    fn balanced_l1_is_even_and_gradient_odd(
        x in -3.0..3.0f64,
        alpha in 0.2..1.0f64,
        gamma in 1.0..2.0f64,
    ) {
        let p = BalancedL1Params::new(alpha, gamma).unwrap();
        prop_assert_eq!(balanced_l1(x, &p), balanced_l1(-x, &p));
        prop_assert_eq!(balanced_l1_grad(x, &p), -balanced_l1_grad(-x, &p));
    }

    #[test]
    fn balanced_l1_gradient_capped_at_gamma(
        x in -5.0..5.0f64,
        alpha in 0.2..1.0f64,
        gamma in 1.0..2.0f64,
    ) {
        let p = BalancedL1Params::new(alpha, gamma).unwrap();
        prop_assert!(balanced_l1_grad(x, &p).abs() <= gamma);
    }

    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let t = Tensor::from_fn(vec![rows, cols], |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 8.0 - 4.0
        }).unwrap();
        let y = softmax_rows(&t).unwrap();
        for r in 0..rows {
            let sum: f64 = y.data()[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_then_pool_is_identity_on_constants(
        c in 1usize..3,
        h in 1usize..5,
        w in 1usize..5,
        factor in 1usize..4,
        value in -10.0..10.0f64,
    ) {
        let t = Tensor::full(vec![c, h, w], value).unwrap();
        let up = resize_nearest(&t, (h * factor, w * factor)).unwrap();
        let back = maxpool_to(&up, (h, w)).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn mean_stack_of_copies_is_exact(
        len in 1usize..6,
        data in proptest::collection::vec(-100.0..100.0f64, 1..12),
    ) {
        let t = Tensor::new(vec![data.len()], data).unwrap();
        let out = mean_stack(&vec![t.clone(); len]).unwrap();
        prop_assert_eq!(out.data(), t.data());
    }

    #[test]
    fn samplers_are_deterministic_and_duplicate_free(
        ious in proptest::collection::vec(0.0..1.0f64, 1..60),
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        let negs: Vec<Candidate<f64>> = ious
            .iter()
            .map(|&iou| Candidate {
                bbox: Box2D::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                gt_index: None,
                iou,
                label: Label::Negative,
            })
            .collect();
        let cfg = SamplerConfig { num_negatives: n, seed, ..Default::default() };

        let a = sample_iou_balanced(&negs, &cfg).unwrap();
        let b = sample_iou_balanced(&negs, &cfg).unwrap();
        prop_assert_eq!(&a, &b);

        let r1 = sample_random(&negs, n, seed);
        let r2 = sample_random(&negs, n, seed);
        prop_assert_eq!(&r1, &r2);

        for report in [&a, &r1] {
            let mut seen = report.selected.clone();
            seen.dedup();
            prop_assert_eq!(seen.len(), report.selected.len());
            prop_assert_eq!(report.selected.len(), n.min(negs.len()));
            let total: usize = report.bin_selected_counts.iter().sum();
            prop_assert_eq!(total, report.selected.len());
            for (sel, pool) in report.bin_selected_counts.iter().zip(&report.bin_pool_counts) {
                prop_assert!(sel <= pool);
            }
        }
    }
}

/// Loss and gradient branches agree at |x| = 1 across the ablation grid.
#[test]
fn continuity_grid() {
    for &alpha in &[0.2f64, 0.3, 0.5, 1.0] {
        for &gamma in &[1.0f64, 1.5, 2.0] {
            let p = BalancedL1Params::new(alpha, gamma).unwrap();
            let inlier_loss = alpha / p.b * (p.b + 1.0) * (p.b + 1.0).ln() - alpha;
            let outlier_loss = balanced_l1(1.0, &p);
            assert!(
                (inlier_loss - outlier_loss).abs() < 1e-12,
                "loss jump at alpha={alpha}, gamma={gamma}"
            );
            let inlier_grad = alpha * (p.b + 1.0).ln();
            let outlier_grad = balanced_l1_grad(1.0, &p);
            assert!(
                (inlier_grad - outlier_grad).abs() < 1e-12,
                "gradient jump at alpha={alpha}, gamma={gamma}"
            );
        }
    }
}

/// The gradient is nondecreasing on x >= 0 (dense sampling).
#[test]
fn gradient_monotone_nondecreasing() {
    for &alpha in &[0.2f64, 0.5, 1.0] {
        for &gamma in &[1.0f64, 1.5, 2.0] {
            let p = BalancedL1Params::new(alpha, gamma).unwrap();
            let mut prev = 0.0;
            for i in 0..=3000 {
                let x = i as f64 / 1000.0;
                let g = balanced_l1_grad(x, &p);
                assert!(g >= prev - 1e-15, "drop at x={x}, alpha={alpha}, gamma={gamma}");
                prev = g;
            }
        }
    }
}

/// For defaults the inlier gradient dominates smooth L1's on (0, 1).
#[test]
fn inlier_gradient_promotion() {
    let p = BalancedL1Params::<f64>::default();
    for i in 1..100 {
        let x = i as f64 / 100.0;
        assert!(balanced_l1_grad(x, &p) > smooth_l1_grad(x), "x = {x}");
    }
}

/// Decreasing alpha at fixed gamma increases the inlier gradient.
#[test]
fn smaller_alpha_promotes_inliers_more() {
    let alphas = [0.2, 0.3, 0.5, 1.0];
    for &gamma in &[1.0f64, 1.5, 2.0] {
        for x in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let grads: Vec<f64> = alphas
                .iter()
                .map(|&a| balanced_l1_grad(x, &BalancedL1Params::new(a, gamma).unwrap()))
                .collect();
            for pair in grads.windows(2) {
                assert!(pair[0] > pair[1], "gamma={gamma}, x={x}: {grads:?}");
            }
        }
    }
}

/// Quota rule: every fully-populated bin receives exactly floor(N/K) plus
/// the remainder share.
#[test]
fn full_bins_get_exact_quota() {
    let negs: Vec<Candidate<f64>> = (0..90)
        .map(|i| Candidate {
            bbox: Box2D::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            gt_index: None,
            iou: (i % 3) as f64 * 0.16 + 0.02,
            label: Label::Negative,
        })
        .collect();
    let cfg = SamplerConfig { num_negatives: 17, num_bins: 3, seed: 4, ..Default::default() };
    let r = sample_iou_balanced(&negs, &cfg).unwrap();
    assert_eq!(r.bin_selected_counts, vec![6, 6, 5]);
}

#[test]
fn solve_b_matches_constraint_on_grid() {
    for &alpha in &[0.2f64, 0.3, 0.5, 1.0] {
        for &gamma in &[1.0f64, 1.5, 2.0] {
            let b = solve_b(alpha, gamma).unwrap();
            assert!((alpha * (b + 1.0).ln() - gamma).abs() < 1e-12);
        }
    }
}
