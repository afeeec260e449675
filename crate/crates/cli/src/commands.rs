//! Subcommand implementations. Every command is deterministic given
//! (config, seed) and emits schema-stable, newline-terminated CSV.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use libra_balance::boxes::{assign, AssignConfig, Candidate};
use libra_balance::loss::{
    balanced_l1, balanced_l1_grad, localization_loss_grad, multi_task_loss, multi_task_loss_grad,
    smooth_l1, smooth_l1_grad, BalancedL1Params, DetectionTarget,
};
use libra_balance::pyramid::{
    balanced_feature_pyramid, balanced_feature_pyramid_backward, default_embed_channels,
    NonLocalWeights, PyramidLevels,
};
use libra_balance::sampler::{
    sample_iou_balanced, sample_random, Binning, SampleReport, SamplerConfig,
};
use libra_balance::tensor::{finite_diff_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{PyramidSettings, RunConfig, SamplerSettings};
use crate::scenario::gen_scenario;
use crate::seed::derive_seed;

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sibling_json(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn sampler_config(s: &SamplerSettings, seed: u64) -> SamplerConfig<f64> {
    SamplerConfig {
        num_negatives: s.neg_count,
        num_bins: s.bins,
        bin_range: (s.bin_lo, s.bin_hi),
        num_positives: s.pos_count,
        seed,
    }
}

// ---------------------------------------------------------------------------
// sample-hist
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SampleHistSummary {
    pub trials: usize,
    pub seed: u64,
    pub bins: usize,
    pub bin_range: (f64, f64),
    pub neg_count: usize,
    pub pool_total: u64,
    pub random_selected_total: u64,
    pub balanced_selected_total: u64,
    pub pool_hard_fraction: f64,
    pub random_hard_fraction: f64,
    pub balanced_hard_fraction: f64,
    /// Raw sampler reports from the first trial.
    pub first_trial_random: Option<SampleReport>,
    pub first_trial_balanced: Option<SampleReport>,
}

/// Runs both samplers over seeded scenarios (or a fixed scenario file) and
/// accumulates per-bin counts.
///
/// Writes the histogram CSV to `out` and a JSON summary next to it.
pub fn cmd_sample_hist(cfg: &RunConfig, out: &Path) -> anyhow::Result<SampleHistSummary> {
    cfg.validate()?;
    let seed = cfg.resolved_seed();
    let s = &cfg.sampler;
    let binning = Binning::new(s.bin_lo, s.bin_hi, s.bins)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let assign_cfg = AssignConfig::new(s.pos_iou_threshold, s.neg_iou_threshold)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let fixed_scenario = match &cfg.scenario_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading scenario {}", path.display()))?;
            Some(crate::scenario::Scenario::from_json(&text)?)
        }
        None => None,
    };

    let mut pool_counts = vec![0u64; s.bins];
    let mut random_counts = vec![0u64; s.bins];
    let mut balanced_counts = vec![0u64; s.bins];
    let mut pool_hard_sum = 0.0;
    let mut random_hard_sum = 0.0;
    let mut balanced_hard_sum = 0.0;
    let mut first_trial_random = None;
    let mut first_trial_balanced = None;

    for trial in 0..cfg.trials {
        let trial_seed = derive_seed(seed, trial as u64);
        let scenario = match &fixed_scenario {
            Some(s) => s.clone(),
            None => gen_scenario(&cfg.scenario, derive_seed(trial_seed, 0))?,
        };
        let candidates = assign(&scenario.candidates, &scenario.ground_truths, &assign_cfg);

        let sampler_seed = derive_seed(trial_seed, 1);
        let random = sample_random(&candidates, s.neg_count, sampler_seed);
        let balanced = sample_iou_balanced(&candidates, &sampler_config(s, sampler_seed))
            .map_err(|e| anyhow::anyhow!("{e}"))?;

        for (k, &m) in balanced.bin_pool_counts.iter().enumerate() {
            pool_counts[k] += m as u64;
        }
        for (k, &c) in balanced.bin_selected_counts.iter().enumerate() {
            balanced_counts[k] += c as u64;
        }
        for &i in &random.selected {
            random_counts[binning.bin_of(candidates[i].iou)] += 1;
        }
        pool_hard_sum += pool_hard_fraction(&candidates, &balanced);
        random_hard_sum += random.hard_fraction;
        balanced_hard_sum += balanced.hard_fraction;
        if trial == 0 {
            first_trial_random = Some(random);
            first_trial_balanced = Some(balanced);
        }
    }

    let mut csv = String::from("iou_bin_lo,iou_bin_hi,random_count,balanced_count,pool_count\n");
    for (k, (lo, hi)) in binning.edges().into_iter().enumerate() {
        csv.push_str(&format!(
            "{lo:.6},{hi:.6},{},{},{}\n",
            random_counts[k], balanced_counts[k], pool_counts[k]
        ));
    }
    write_file(out, &csv)?;

    let summary = SampleHistSummary {
        trials: cfg.trials,
        seed,
        bins: s.bins,
        bin_range: (s.bin_lo, s.bin_hi),
        neg_count: s.neg_count,
        pool_total: pool_counts.iter().sum(),
        random_selected_total: random_counts.iter().sum(),
        balanced_selected_total: balanced_counts.iter().sum(),
        pool_hard_fraction: pool_hard_sum / cfg.trials as f64,
        random_hard_fraction: random_hard_sum / cfg.trials as f64,
        balanced_hard_fraction: balanced_hard_sum / cfg.trials as f64,
        first_trial_random,
        first_trial_balanced,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_file(&sibling_json(out), &json)?;
    Ok(summary)
}

fn pool_hard_fraction(candidates: &[Candidate<f64>], report: &SampleReport) -> f64 {
    let pool: usize = report.bin_pool_counts.iter().sum();
    if pool == 0 {
        return 0.0;
    }
    let hard = candidates
        .iter()
        .filter(|c| {
            c.label == libra_balance::boxes::Label::Negative
                && c.iou >= libra_balance::sampler::HARD_NEGATIVE_IOU
        })
        .count();
    hard as f64 / pool as f64
}

// ---------------------------------------------------------------------------
// loss-curves
// ---------------------------------------------------------------------------

/// Emits `x, smooth_l1_loss, smooth_l1_grad, balanced_l1_loss,
/// balanced_l1_grad` over x in [0, 2] at step 0.01, one CSV per configured
/// (alpha, gamma) pair.
pub fn cmd_loss_curves(cfg: &RunConfig, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.loss.curves.is_empty() {
        bail!("invalid argument: no (alpha, gamma) pairs configured");
    }
    let mut written = Vec::new();
    let multiple = cfg.loss.curves.len() > 1;
    for &(alpha, gamma) in &cfg.loss.curves {
        let params = BalancedL1Params::new(alpha, gamma).map_err(|e| anyhow::anyhow!("{e}"))?;
        let mut csv =
            String::from("x,smooth_l1_loss,smooth_l1_grad,balanced_l1_loss,balanced_l1_grad\n");
        for i in 0..=200usize {
            let x = i as f64 / 100.0;
            csv.push_str(&format!(
                "{x:.2},{:.9},{:.9},{:.9},{:.9}\n",
                smooth_l1(x),
                smooth_l1_grad(x),
                balanced_l1(x, &params),
                balanced_l1_grad(x, &params),
            ));
        }
        let path = if multiple {
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("loss_curves");
            let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
            out.with_file_name(format!("{stem}_a{alpha}_g{gamma}.{ext}"))
        } else {
            out.to_path_buf()
        };
        write_file(&path, &csv)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-6;
const SCALAR_TOL: f64 = 1e-6;
const PYRAMID_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckRow {
    pub op: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub all_passed: bool,
}

fn weighted_sum(t: &Tensor<f64>, coeffs: &Tensor<f64>) -> f64 {
    t.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum()
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).expect("valid shape")
}

/// Offsets kept clear of the branch points at 0 and +-1.
fn random_offsets(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: f64 = rng.gen_range(-2.0..2.0);
        if v.abs() > 1e-3 && (v.abs() - 1.0).abs() > 1e-3 {
            out.push(v);
        }
    }
    out
}

fn check_scalar_family(
    name: &str,
    values: Vec<f64>,
    loss: impl Fn(f64) -> f64,
    grad: impl Fn(f64) -> f64,
) -> anyhow::Result<GradcheckRow> {
    let analytic: Vec<f64> = values.iter().map(|&v| grad(v)).collect();
    let at = Tensor::new(vec![values.len()], values)
        .and_then(|t| t.with_grad(analytic))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let err = finite_diff_check(|p| Ok(p.data().iter().map(|&v| loss(v)).sum()), &at, FD_STEP)
        .map_err(|e| anyhow::anyhow!("{name}: {e}"))?;
    Ok(row(name, err, SCALAR_TOL))
}

fn row(op: &str, err: f64, tol: f64) -> GradcheckRow {
    GradcheckRow { op: op.to_string(), max_rel_err: err, tolerance: tol, pass: err < tol }
}

fn check_tensor(
    name: &str,
    input: &Tensor<f64>,
    analytic: &Tensor<f64>,
    tol: f64,
    f: impl Fn(&Tensor<f64>) -> libra_balance::Result<f64>,
) -> anyhow::Result<GradcheckRow> {
    let at = input
        .clone()
        .with_grad(analytic.data().to_vec())
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let err = finite_diff_check(f, &at, FD_STEP).map_err(|e| anyhow::anyhow!("{name}: {e}"))?;
    Ok(row(name, err, tol))
}

/// Seeded levels, optional weights, resolved target level, and coefficient
/// tensors for a weighted-sum objective.
type PyramidFixture =
    (PyramidLevels<f64>, Option<NonLocalWeights<f64>>, usize, Vec<Tensor<f64>>);

fn pyramid_fixture(p: &PyramidSettings, seed: u64) -> anyhow::Result<PyramidFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels = Vec::new();
    let mut size = p.base_resolution;
    for _ in 0..p.levels {
        levels.push(random_tensor(vec![p.channels, size, size], &mut rng));
        size = size.div_ceil(2).max(1);
    }
    let stack = PyramidLevels::new(levels).map_err(|e| anyhow::anyhow!("{e}"))?;
    let target = p.target_level.unwrap_or_else(|| stack.default_target_level());
    let weights = if p.refine {
        let embed = p.embed_channels.unwrap_or_else(|| default_embed_channels(p.channels));
        Some(
            NonLocalWeights::seeded(p.channels, embed, derive_seed(seed, 1))
                .map_err(|e| anyhow::anyhow!("{e}"))?,
        )
    } else {
        None
    };
    let coeffs: Vec<Tensor<f64>> = stack
        .levels()
        .iter()
        .map(|t| random_tensor(t.shape().to_vec(), &mut rng))
        .collect();
    Ok((stack, weights, target, coeffs))
}

/// Finite-difference verification of every gradient rule: the tensor ops,
/// the loss family, and the end-to-end pyramid. Writes a CSV report and
/// returns the per-op errors.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> anyhow::Result<GradcheckReport> {
    cfg.validate()?;
    let seed = cfg.resolved_seed();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100));
    let mut rows = Vec::new();

    // sanity: a linear functional differentiates exactly
    {
        let x = random_tensor(vec![8], &mut rng);
        let coeffs = random_tensor(vec![8], &mut rng);
        let r = check_tensor("linear_sanity", &x, &coeffs, 1e-9, |p| {
            Ok(weighted_sum(p, &coeffs))
        })?;
        rows.push(r);
    }

    // tensor ops
    {
        use libra_balance::tensor as tx;
        let x = random_tensor(vec![2, 4, 4], &mut rng);
        let coeffs = random_tensor(vec![2, 8, 8], &mut rng);
        let analytic = tx::resize_nearest_vjp(x.shape(), (8, 8), &coeffs)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        rows.push(check_tensor("resize_nearest", &x, &analytic, SCALAR_TOL, |p| {
            Ok(weighted_sum(&tx::resize_nearest(p, (8, 8))?, &coeffs))
        })?);

        let coeffs = random_tensor(vec![2, 2, 2], &mut rng);
        let analytic =
            tx::maxpool_to_vjp(&x, (2, 2), &coeffs).map_err(|e| anyhow::anyhow!("{e}"))?;
        rows.push(check_tensor("maxpool_to", &x, &analytic, SCALAR_TOL, |p| {
            Ok(weighted_sum(&tx::maxpool_to(p, (2, 2))?, &coeffs))
        })?);

        let stack: Vec<Tensor<f64>> =
            (0..3).map(|_| random_tensor(vec![2, 3, 3], &mut rng)).collect();
        let coeffs = random_tensor(vec![2, 3, 3], &mut rng);
        let analytic =
            tx::mean_stack_vjp(stack.len(), &coeffs).map_err(|e| anyhow::anyhow!("{e}"))?;
        rows.push(check_tensor("mean_stack", &stack[1], &analytic, SCALAR_TOL, |p| {
            let mut s = stack.clone();
            s[1] = p.clone();
            Ok(weighted_sum(&tx::mean_stack(&s)?, &coeffs))
        })?);

        let a = random_tensor(vec![3, 4], &mut rng);
        let b = random_tensor(vec![4, 2], &mut rng);
        let coeffs = random_tensor(vec![3, 2], &mut rng);
        let (da, db) = tx::matmul_vjp(&a, &b, &coeffs).map_err(|e| anyhow::anyhow!("{e}"))?;
        rows.push(check_tensor("matmul_lhs", &a, &da, SCALAR_TOL, |p| {
            Ok(weighted_sum(&tx::matmul(p, &b)?, &coeffs))
        })?);
        rows.push(check_tensor("matmul_rhs", &b, &db, SCALAR_TOL, |p| {
            Ok(weighted_sum(&tx::matmul(&a, p)?, &coeffs))
        })?);

        let x = random_tensor(vec![4, 5], &mut rng);
        let coeffs = random_tensor(vec![4, 5], &mut rng);
        let y = tx::softmax_rows(&x).map_err(|e| anyhow::anyhow!("{e}"))?;
        let analytic =
            tx::softmax_rows_vjp(&y, &coeffs).map_err(|e| anyhow::anyhow!("{e}"))?;
        rows.push(check_tensor("softmax_rows", &x, &analytic, SCALAR_TOL, |p| {
            Ok(weighted_sum(&tx::softmax_rows(p)?, &coeffs))
        })?);

        let x = random_tensor(vec![3, 2, 2], &mut rng);
        let w = random_tensor(vec![2, 3], &mut rng);
        let coeffs = random_tensor(vec![2, 2, 2], &mut rng);
        let (dx, dw) = tx::conv1x1_vjp(&x, &w, &coeffs).map_err(|e| anyhow::anyhow!("{e}"))?;
        rows.push(check_tensor("conv1x1_input", &x, &dx, SCALAR_TOL, |p| {
            Ok(weighted_sum(&tx::conv1x1(p, &w)?, &coeffs))
        })?);
        rows.push(check_tensor("conv1x1_weight", &w, &dw, SCALAR_TOL, |p| {
            Ok(weighted_sum(&tx::conv1x1(&x, p)?, &coeffs))
        })?);

        let b = random_tensor(vec![2, 3], &mut rng);
        let x = random_tensor(vec![2, 3], &mut rng);
        let coeffs = random_tensor(vec![2, 3], &mut rng);
        rows.push(check_tensor("add", &x, &coeffs, SCALAR_TOL, |p| {
            Ok(weighted_sum(&tx::add(p, &b)?, &coeffs))
        })?);
    }

    // loss ops on 100 random offsets each
    let params =
        BalancedL1Params::new(cfg.loss.alpha, cfg.loss.gamma).map_err(|e| anyhow::anyhow!("{e}"))?;
    rows.push(check_scalar_family(
        "smooth_l1",
        random_offsets(100, &mut rng),
        smooth_l1,
        smooth_l1_grad,
    )?);
    rows.push(check_scalar_family(
        "balanced_l1",
        random_offsets(100, &mut rng),
        |x| balanced_l1(x, &params),
        |x| balanced_l1_grad(x, &params),
    )?);

    // localization loss over 100 random prediction/target pairs
    {
        let mut max_err = 0.0f64;
        for _ in 0..100 {
            let offs = random_offsets(4, &mut rng);
            let target = [0.0; 4];
            let pred = [offs[0], offs[1], offs[2], offs[3]];
            let grad = localization_loss_grad(&pred, &target, &params);
            let at = Tensor::new(vec![4], pred.to_vec())
                .and_then(|t| t.with_grad(grad.to_vec()))
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let err = finite_diff_check(
                |p| {
                    let v = [p.data()[0], p.data()[1], p.data()[2], p.data()[3]];
                    Ok(libra_balance::loss::localization_loss(&v, &target, &params))
                },
                &at,
                FD_STEP,
            )
            .map_err(|e| anyhow::anyhow!("localization_loss: {e}"))?;
            max_err = max_err.max(err);
        }
        rows.push(row("localization_loss", max_err, SCALAR_TOL));
    }

    // multi-task loss over 100 random foreground samples
    {
        let mut max_err = 0.0f64;
        for _ in 0..100 {
            let offs = random_offsets(4, &mut rng);
            let p1: f64 = rng.gen_range(0.05..0.95);
            let sample = DetectionTarget {
                class: 1,
                class_scores: vec![1.0 - p1, p1],
                prediction: [offs[0], offs[1], offs[2], offs[3]],
                target: [0.0; 4],
            };
            let grad = multi_task_loss_grad(&sample, cfg.loss.lambda, &params)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let at = Tensor::new(vec![4], sample.prediction.to_vec())
                .and_then(|t| t.with_grad(grad.to_vec()))
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let err = finite_diff_check(
                |p| {
                    let mut probe = sample.clone();
                    probe.prediction = [p.data()[0], p.data()[1], p.data()[2], p.data()[3]];
                    multi_task_loss(&probe, cfg.loss.lambda, &params)
                        .map_err(|e| libra_balance::Error::NumericFailure(e.to_string()))
                },
                &at,
                FD_STEP,
            )
            .map_err(|e| anyhow::anyhow!("multi_task_loss: {e}"))?;
            max_err = max_err.max(err);
        }
        rows.push(row("multi_task_loss", max_err, SCALAR_TOL));
    }

    // end-to-end pyramid: gradient of a weighted-sum functional wrt every
    // level and every projection weight
    {
        let (stack, weights, target, coeffs) = pyramid_fixture(&cfg.pyramid, derive_seed(seed, 101))?;
        let (_, grads) =
            balanced_feature_pyramid_backward(&stack, weights.as_ref(), target, &coeffs)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
        let objective = |levels: Vec<Tensor<f64>>, w: Option<&NonLocalWeights<f64>>| {
            let stack = PyramidLevels::new(levels)?;
            let out = balanced_feature_pyramid(&stack, w, target)?;
            let mut acc = 0.0;
            for (lev, c) in out.levels().iter().zip(&coeffs) {
                acc += weighted_sum(lev, c);
            }
            Ok(acc)
        };

        let mut max_err = 0.0f64;
        for l in 0..stack.len() {
            let at = stack
                .level(l)
                .clone()
                .with_grad(grads.levels[l].data().to_vec())
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let err = finite_diff_check(
                |p| {
                    let mut levels = stack.levels().to_vec();
                    levels[l] = p.clone();
                    objective(levels, weights.as_ref())
                },
                &at,
                FD_STEP,
            )
            .map_err(|e| anyhow::anyhow!("pyramid level {l}: {e}"))?;
            max_err = max_err.max(err);
        }
        if let (Some(w), Some(wg)) = (&weights, &grads.weights) {
            let parts: [(&str, &Tensor<f64>, &Tensor<f64>); 4] = [
                ("theta", &w.theta, &wg.theta),
                ("phi", &w.phi, &wg.phi),
                ("g", &w.g, &wg.g),
                ("w_z", &w.w_z, &wg.w_z),
            ];
            for (name, tensor, grad) in parts {
                let at = tensor
                    .clone()
                    .with_grad(grad.data().to_vec())
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                let err = finite_diff_check(
                    |p| {
                        let mut probe = w.clone();
                        match name {
                            "theta" => probe.theta = p.clone(),
                            "phi" => probe.phi = p.clone(),
                            "g" => probe.g = p.clone(),
                            _ => probe.w_z = p.clone(),
                        }
                        objective(stack.levels().to_vec(), Some(&probe))
                    },
                    &at,
                    FD_STEP,
                )
                .map_err(|e| anyhow::anyhow!("pyramid weight {name}: {e}"))?;
                max_err = max_err.max(err);
            }
        }
        rows.push(row("pyramid_end_to_end", max_err, PYRAMID_TOL));
    }

    let all_passed = rows.iter().all(|r| r.pass);
    let mut csv = String::from("op,max_rel_err,tolerance,pass\n");
    for r in &rows {
        csv.push_str(&format!("{},{:.3e},{:.0e},{}\n", r.op, r.max_rel_err, r.tolerance, r.pass));
    }
    write_file(out, &csv)?;
    Ok(GradcheckReport { rows, all_passed })
}

// ---------------------------------------------------------------------------
// pyramid-stats
// ---------------------------------------------------------------------------

/// Per-level mean/variance before vs after balancing, as CSV.
pub fn cmd_pyramid_stats(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    cfg.validate()?;
    let seed = cfg.resolved_seed();
    let (stack, weights, target, _) = pyramid_fixture(&cfg.pyramid, seed)?;
    let balanced = balanced_feature_pyramid(&stack, weights.as_ref(), target)
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    let stats = |t: &Tensor<f64>| {
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var)
    };

    let mut csv =
        String::from("level,height,width,channels,mean_before,var_before,mean_after,var_after\n");
    for l in 0..stack.len() {
        let (h, w) = stack.spatial(l);
        let (mb, vb) = stats(stack.level(l));
        let (ma, va) = stats(balanced.level(l));
        csv.push_str(&format!(
            "{l},{h},{w},{},{mb:.9},{vb:.9},{ma:.9},{va:.9}\n",
            stack.channels()
        ));
    }
    write_file(out, &csv)
}

// ---------------------------------------------------------------------------
// toy-fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ToyFitSummary {
    pub steps: usize,
    pub final_smooth_inlier_error: f64,
    pub final_balanced_inlier_error: f64,
    /// Share of the total gradient magnitude contributed by inliers at the
    /// first step, per loss.
    pub initial_inlier_gradient_share_smooth: f64,
    pub initial_inlier_gradient_share_balanced: f64,
}

struct FitPool {
    targets: Vec<[f64; 4]>,
    inlier: Vec<bool>,
}

fn build_pool(cfg: &RunConfig, seed: u64) -> FitPool {
    let t = &cfg.toy_fit;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-0.5..0.5));
    let outliers = ((t.pool_size as f64) * t.outlier_fraction).round() as usize;
    let mut targets = Vec::with_capacity(t.pool_size);
    let mut inlier = Vec::with_capacity(t.pool_size);
    for j in 0..t.pool_size {
        if j < outliers {
            // one-sided far-off targets so outliers systematically bias the fit
            targets.push(std::array::from_fn(|i| {
                truth[i] + rng.gen_range(2.0..2.0 + t.outlier_scale)
            }));
            inlier.push(false);
        } else if t.noise > 0.0 {
            targets.push(std::array::from_fn(|i| {
                truth[i] + rng.gen_range(-t.noise..t.noise)
            }));
            inlier.push(true);
        } else {
            targets.push(truth);
            inlier.push(true);
        }
    }
    FitPool { targets, inlier }
}

fn mean_inlier_error(pool: &FitPool, t: &[f64; 4]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (target, &is_in) in pool.targets.iter().zip(&pool.inlier) {
        if is_in {
            sum += (0..4).map(|i| (t[i] - target[i]).abs()).sum::<f64>() / 4.0;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn descend(
    pool: &FitPool,
    steps: usize,
    lr: f64,
    grad_fn: impl Fn(f64) -> f64,
    loss_fn: impl Fn(f64) -> f64,
) -> anyhow::Result<(Vec<f64>, f64)> {
    let n = pool.targets.len() as f64;
    let mut t = [0.0f64; 4];
    let mut errors = Vec::with_capacity(steps + 1);
    errors.push(mean_inlier_error(pool, &t));

    // inlier share of the gradient magnitude at the start
    let mut inlier_mag = 0.0;
    let mut total_mag = 0.0;
    for (target, &is_in) in pool.targets.iter().zip(&pool.inlier) {
        let mag: f64 = (0..4).map(|i| grad_fn(t[i] - target[i]).abs()).sum();
        total_mag += mag;
        if is_in {
            inlier_mag += mag;
        }
    }
    let share = if total_mag > 0.0 { inlier_mag / total_mag } else { 0.0 };

    for step in 0..steps {
        let mut grad = [0.0f64; 4];
        let mut loss = 0.0;
        for target in &pool.targets {
            for i in 0..4 {
                grad[i] += grad_fn(t[i] - target[i]);
                loss += loss_fn(t[i] - target[i]);
            }
        }
        if !loss.is_finite() {
            bail!("descent diverged at step {step}: non-finite loss");
        }
        for i in 0..4 {
            t[i] -= lr * grad[i] / n;
        }
        errors.push(mean_inlier_error(pool, &t));
    }
    Ok((errors, share))
}

/// Gradient descent on synthetic offset regression with injected outliers,
/// smooth vs balanced L1 under identical seeds and learning rate.
pub fn cmd_toy_fit(cfg: &RunConfig, out: &Path) -> anyhow::Result<ToyFitSummary> {
    cfg.validate()?;
    let t = &cfg.toy_fit;
    anyhow::ensure!(t.pool_size >= 1, "pool size must be positive");
    anyhow::ensure!(t.learning_rate > 0.0, "learning rate must be positive");
    anyhow::ensure!(
        (0.0..=1.0).contains(&t.outlier_fraction),
        "outlier fraction must lie in [0, 1]"
    );
    let seed = cfg.resolved_seed();
    let params =
        BalancedL1Params::new(cfg.loss.alpha, cfg.loss.gamma).map_err(|e| anyhow::anyhow!("{e}"))?;
    let pool = build_pool(cfg, seed);

    let (smooth_errors, smooth_share) =
        descend(&pool, t.steps, t.learning_rate, smooth_l1_grad, smooth_l1)?;
    let (balanced_errors, balanced_share) = descend(
        &pool,
        t.steps,
        t.learning_rate,
        |x| balanced_l1_grad(x, &params),
        |x| balanced_l1(x, &params),
    )?;

    let mut csv = String::from("step,smooth_inlier_error,balanced_inlier_error\n");
    for (step, (s, b)) in smooth_errors.iter().zip(&balanced_errors).enumerate() {
        csv.push_str(&format!("{step},{s:.9},{b:.9}\n"));
    }
    write_file(out, &csv)?;

    Ok(ToyFitSummary {
        steps: t.steps,
        final_smooth_inlier_error: *smooth_errors.last().unwrap(),
        final_balanced_inlier_error: *balanced_errors.last().unwrap(),
        initial_inlier_gradient_share_smooth: smooth_share,
        initial_inlier_gradient_share_balanced: balanced_share,
    })
}
