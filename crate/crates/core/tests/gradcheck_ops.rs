//! Every reverse-mode rule checked against central finite differences.
//!
//! Each op's analytic gradient comes from its vjp applied to a fixed
//! coefficient tensor; the objective is the matching weighted sum, so the
//! checker and the rule share no code path.

use libra_balance::scalar::lit;
use libra_balance::tensor::{
    add, conv1x1, conv1x1_vjp, finite_diff_check, matmul, matmul_vjp, maxpool_to, maxpool_to_vjp,
    mean_stack, mean_stack_vjp, resize_nearest, resize_nearest_vjp, softmax_rows,
    softmax_rows_vjp, Tensor,
};
use libra_balance::pyramid::{refine_nonlocal, NonLocalWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-6;

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn weighted_sum(t: &Tensor<f64>, coeffs: &Tensor<f64>) -> f64 {
    t.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn resize_nearest_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for target in [(6usize, 6usize), (2, 2), (4, 8)] {
        let x = random_tensor(vec![2, 4, 4], &mut rng);
        let coeffs = random_tensor(vec![2, target.0, target.1], &mut rng);
        let analytic = resize_nearest_vjp(x.shape(), target, &coeffs).unwrap();
        let at = x.clone().with_grad(analytic.data().to_vec()).unwrap();
        let err = finite_diff_check(
            |p| Ok(weighted_sum(&resize_nearest(p, target)?, &coeffs)),
            &at,
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "target {target:?}: err = {err}");
    }
}

#[test]
fn maxpool_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(vec![2, 4, 4], &mut rng);
    let coeffs = random_tensor(vec![2, 2, 2], &mut rng);
    let analytic = maxpool_to_vjp(&x, (2, 2), &coeffs).unwrap();
    let at = x.clone().with_grad(analytic.data().to_vec()).unwrap();
    let err = finite_diff_check(
        |p| Ok(weighted_sum(&maxpool_to(p, (2, 2))?, &coeffs)),
        &at,
        STEP,
    )
    .unwrap();
    assert!(err < TOL, "err = {err}");
}

#[test]
fn mean_stack_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stack: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(vec![1, 2, 3], &mut rng)).collect();
    let coeffs = random_tensor(vec![1, 2, 3], &mut rng);
    let analytic = mean_stack_vjp(stack.len(), &coeffs).unwrap();
    for replace in 0..stack.len() {
        let at = stack[replace].clone().with_grad(analytic.data().to_vec()).unwrap();
        let err = finite_diff_check(
            |p| {
                let mut s = stack.clone();
                s[replace] = p.clone();
                Ok(weighted_sum(&mean_stack(&s)?, &coeffs))
            },
            &at,
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "input {replace}: err = {err}");
    }
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_tensor(vec![3, 4], &mut rng);
    let b = random_tensor(vec![4, 2], &mut rng);
    let coeffs = random_tensor(vec![3, 2], &mut rng);
    let (da, db) = matmul_vjp(&a, &b, &coeffs).unwrap();

    let at_a = a.clone().with_grad(da.data().to_vec()).unwrap();
    let err_a = finite_diff_check(|p| Ok(weighted_sum(&matmul(p, &b)?, &coeffs)), &at_a, STEP).unwrap();
    assert!(err_a < TOL, "lhs err = {err_a}");

    let at_b = b.clone().with_grad(db.data().to_vec()).unwrap();
    let err_b = finite_diff_check(|p| Ok(weighted_sum(&matmul(&a, p)?, &coeffs)), &at_b, STEP).unwrap();
    assert!(err_b < TOL, "rhs err = {err_b}");
}

#[test]
fn softmax_rows_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(vec![4, 5], &mut rng);
    let coeffs = random_tensor(vec![4, 5], &mut rng);
    let y = softmax_rows(&x).unwrap();
    let analytic = softmax_rows_vjp(&y, &coeffs).unwrap();
    let at = x.clone().with_grad(analytic.data().to_vec()).unwrap();
    let err = finite_diff_check(
        |p| Ok(weighted_sum(&softmax_rows(p)?, &coeffs)),
        &at,
        STEP,
    )
    .unwrap();
    assert!(err < TOL, "err = {err}");
}

#[test]
fn conv1x1_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(vec![3, 2, 2], &mut rng);
    let w = random_tensor(vec![2, 3], &mut rng);
    let coeffs = random_tensor(vec![2, 2, 2], &mut rng);
    let (dx, dw) = conv1x1_vjp(&x, &w, &coeffs).unwrap();

    let at_x = x.clone().with_grad(dx.data().to_vec()).unwrap();
    let err_x = finite_diff_check(|p| Ok(weighted_sum(&conv1x1(p, &w)?, &coeffs)), &at_x, STEP).unwrap();
    assert!(err_x < TOL, "input err = {err_x}");

    let at_w = w.clone().with_grad(dw.data().to_vec()).unwrap();
    let err_w = finite_diff_check(|p| Ok(weighted_sum(&conv1x1(&x, p)?, &coeffs)), &at_w, STEP).unwrap();
    assert!(err_w < TOL, "weight err = {err_w}");
}

#[test]
fn add_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_tensor(vec![2, 3], &mut rng);
    let b = random_tensor(vec![2, 3], &mut rng);
    let coeffs = random_tensor(vec![2, 3], &mut rng);
    // the rule: upstream passes through unchanged
    let at = a.clone().with_grad(coeffs.data().to_vec()).unwrap();
    let err = finite_diff_check(|p| Ok(weighted_sum(&add(p, &b)?, &coeffs)), &at, STEP).unwrap();
    assert!(err < TOL, "err = {err}");
}

#[test]
fn balanced_l1_over_random_offsets_matches_differences() {
    // the loss-module gradient driven through the tensor checker
    let params = libra_balance::loss::BalancedL1Params::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut values = Vec::new();
    while values.len() < 16 {
        let v: f64 = rng.gen_range(-2.0..2.0);
        if v.abs() > 1e-4 && (v.abs() - 1.0).abs() > 1e-4 {
            values.push(v);
        }
    }
    let grad: Vec<f64> = values
        .iter()
        .map(|&v| libra_balance::loss::balanced_l1_grad(v, &params))
        .collect();
    let at = Tensor::new(vec![values.len()], values).unwrap().with_grad(grad).unwrap();
    let err = finite_diff_check(
        |p| {
            Ok(p.data()
                .iter()
                .map(|&v| libra_balance::loss::balanced_l1(v, &params))
                .sum())
        },
        &at,
        lit(STEP),
    )
    .unwrap();
    assert!(err < TOL, "err = {err}");
}

#[test]
fn nonlocal_refinement_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(vec![2, 3, 3], &mut rng);
    let w = NonLocalWeights::seeded(2, 2, 10).unwrap();
    let coeffs = random_tensor(vec![2, 3, 3], &mut rng);

    // gradients via the pyramid backward on a single-level stack
    let stack = libra_balance::pyramid::PyramidLevels::new(vec![x.clone()]).unwrap();
    let (_, grads) = libra_balance::pyramid::balanced_feature_pyramid_backward(
        &stack,
        Some(&w),
        0,
        std::slice::from_ref(&coeffs),
    )
    .unwrap();
    // single level: rescale and integrate are identities, so the pipeline
    // is x + refine(x); refine's input gradient is pipeline grad minus the
    // direct residual... instead check refine directly via the pipeline.
    let at = x.clone().with_grad(grads.levels[0].data().to_vec()).unwrap();
    let err = finite_diff_check(
        |p| {
            let stack = libra_balance::pyramid::PyramidLevels::new(vec![p.clone()])?;
            let out = libra_balance::pyramid::balanced_feature_pyramid(&stack, Some(&w), 0)?;
            Ok(weighted_sum(out.level(0), &coeffs))
        },
        &at,
        STEP,
    )
    .unwrap();
    assert!(err < 1e-5, "input err = {err}");

    let wg = grads.weights.unwrap();
    let weight_views: [(&str, &Tensor<f64>, &Tensor<f64>); 4] = [
        ("theta", &w.theta, &wg.theta),
        ("phi", &w.phi, &wg.phi),
        ("g", &w.g, &wg.g),
        ("w_z", &w.w_z, &wg.w_z),
    ];
    for (name, tensor, grad) in weight_views {
        let at = tensor.clone().with_grad(grad.data().to_vec()).unwrap();
        let err = finite_diff_check(
            |p| {
                let mut probe = w.clone();
                match name {
                    "theta" => probe.theta = p.clone(),
                    "phi" => probe.phi = p.clone(),
                    "g" => probe.g = p.clone(),
                    _ => probe.w_z = p.clone(),
                }
                Ok(weighted_sum(&refine_nonlocal(&x, &probe)?, &coeffs))
            },
            &at,
            STEP,
        )
        .unwrap();
        assert!(err < 1e-5, "{name} err = {err}");
    }
}
