//! Smooth L1, balanced L1 (loss and closed-form gradient), localization
//! loss, and the multi-task composition.
//!
//! The balanced L1 family promotes inlier gradients: for `|x| < 1` the
//! gradient is `alpha * ln(b|x| + 1)` while outliers are capped at `gamma`.
//! Continuity of the gradient at `|x| = 1` forces `alpha * ln(b + 1) =
//! gamma`, which fixes `b`; continuity of the loss fixes the outlier
//! branch's additive constant.

use crate::error::{invalid, Result};
use crate::scalar::{lit, Real};

/// Floor inside the classification log so degenerate score vectors stay
/// finite.
pub const CLASS_PROB_FLOOR: f64 = 1e-12;

/// Parameters of the balanced L1 loss with the derived constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedL1Params<S: Real> {
    pub alpha: S,
    pub gamma: S,
    /// Derived from `alpha * ln(b + 1) = gamma`.
    pub b: S,
    /// Additive constant of the outlier branch, fixed by loss continuity at
    /// `|x| = 1`.
    pub c_const: S,
}

impl<S: Real> BalancedL1Params<S> {
    pub fn new(alpha: S, gamma: S) -> Result<Self> {
        let b = solve_b(alpha, gamma)?;
        let c_const = inlier_loss(S::one(), alpha, b) - gamma;
        Ok(Self { alpha, gamma, b, c_const })
    }
}

impl<S: Real> Default for BalancedL1Params<S> {
    /// The reference defaults `alpha = 0.5`, `gamma = 1.5`.
    fn default() -> Self {
        Self::new(lit(0.5), lit(1.5)).expect("default parameters are valid")
    }
}

/// Solves `alpha * ln(b + 1) = gamma` for `b` in closed form.
pub fn solve_b<S: Real>(alpha: S, gamma: S) -> Result<S> {
    if alpha.is_nan() || alpha <= S::zero() || !alpha.is_finite() {
        return Err(invalid("alpha must be positive and finite"));
    }
    if gamma.is_nan() || gamma <= S::zero() || !gamma.is_finite() {
        return Err(invalid("gamma must be positive and finite"));
    }
    let b = (gamma / alpha).exp() - S::one();
    if !b.is_finite() {
        return Err(invalid("gamma / alpha too large: b overflows"));
    }
    Ok(b)
}

fn inlier_loss<S: Real>(ax: S, alpha: S, b: S) -> S {
    let t = b * ax + S::one();
    alpha / b * t * t.ln() - alpha * ax
}

/// Balanced L1 loss; even in `x`.
pub fn balanced_l1<S: Real>(x: S, params: &BalancedL1Params<S>) -> S {
    let ax = x.abs();
    if ax < S::one() {
        inlier_loss(ax, params.alpha, params.b)
    } else {
        params.gamma * ax + params.c_const
    }
}

/// Closed-form gradient of [`balanced_l1`]; odd in `x`, zero at the origin.
pub fn balanced_l1_grad<S: Real>(x: S, params: &BalancedL1Params<S>) -> S {
    if x == S::zero() {
        return S::zero();
    }
    let ax = x.abs();
    let magnitude = if ax < S::one() {
        params.alpha * (params.b * ax + S::one()).ln()
    } else {
        params.gamma
    };
    magnitude * x.signum()
}

/// Smooth L1 with the inflection fixed at 1.
pub fn smooth_l1<S: Real>(x: S) -> S {
    let ax = x.abs();
    if ax < S::one() {
        lit::<S>(0.5) * x * x
    } else {
        ax - lit(0.5)
    }
}

/// Gradient of [`smooth_l1`]: `x` inside the inflection, `sign(x)` outside.
pub fn smooth_l1_grad<S: Real>(x: S) -> S {
    if x.abs() < S::one() {
        x
    } else {
        x.signum()
    }
}

/// Sum of balanced L1 over the four box-offset components.
pub fn localization_loss<S: Real>(
    prediction: &[S; 4],
    target: &[S; 4],
    params: &BalancedL1Params<S>,
) -> S {
    prediction
        .iter()
        .zip(target.iter())
        .fold(S::zero(), |acc, (&t, &v)| acc + balanced_l1(t - v, params))
}

/// Gradient of [`localization_loss`] with respect to the prediction.
pub fn localization_loss_grad<S: Real>(
    prediction: &[S; 4],
    target: &[S; 4],
    params: &BalancedL1Params<S>,
) -> [S; 4] {
    let mut grad = [S::zero(); 4];
    for i in 0..4 {
        grad[i] = balanced_l1_grad(prediction[i] - target[i], params);
    }
    grad
}

/// One training sample for the multi-task objective: class label `u`
/// (0 = background), class scores `p`, regression prediction and target.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTarget<S: Real> {
    pub class: usize,
    pub class_scores: Vec<S>,
    pub prediction: [S; 4],
    pub target: [S; 4],
}

impl<S: Real> DetectionTarget<S> {
    fn validate(&self) -> Result<()> {
        if self.class >= self.class_scores.len() {
            return Err(invalid(format!(
                "class {} out of range for {} scores",
                self.class,
                self.class_scores.len()
            )));
        }
        let mut sum = S::zero();
        for &p in &self.class_scores {
            if !p.is_finite() || p < S::zero() {
                return Err(invalid("class scores must be finite and non-negative"));
            }
            sum = sum + p;
        }
        if (sum - S::one()).abs() > lit(1e-6) {
            return Err(invalid("class scores must sum to 1"));
        }
        if self.prediction.iter().chain(self.target.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("regression vectors must be finite"));
        }
        Ok(())
    }
}

/// `L_cls(p, u) + lambda * [u >= 1] * L_loc(t^u, v)` with `L_cls` the
/// negative log-likelihood of the labelled class.
pub fn multi_task_loss<S: Real>(
    sample: &DetectionTarget<S>,
    lambda: S,
    params: &BalancedL1Params<S>,
) -> Result<S> {
    if lambda.is_nan() || lambda < S::zero() {
        return Err(invalid("lambda must be non-negative"));
    }
    sample.validate()?;
    let p = sample.class_scores[sample.class].max(lit(CLASS_PROB_FLOOR));
    let cls = -p.ln();
    let loc = if sample.class >= 1 {
        lambda * localization_loss(&sample.prediction, &sample.target, params)
    } else {
        S::zero()
    };
    Ok(cls + loc)
}

/// Gradient of [`multi_task_loss`] with respect to the regression
/// prediction (zero for background samples).
pub fn multi_task_loss_grad<S: Real>(
    sample: &DetectionTarget<S>,
    lambda: S,
    params: &BalancedL1Params<S>,
) -> Result<[S; 4]> {
    if lambda.is_nan() || lambda < S::zero() {
        return Err(invalid("lambda must be non-negative"));
    }
    sample.validate()?;
    if sample.class == 0 {
        return Ok([S::zero(); 4]);
    }
    let mut grad = localization_loss_grad(&sample.prediction, &sample.target, params);
    for g in &mut grad {
        *g = *g * lambda;
    }
    Ok(grad)
}

/// Regression-loss regime of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Inlier,
    Outlier,
}

/// Samples with a loss of at least 1.0 are outliers.
pub fn classify_sample<S: Real>(loss: S) -> SampleKind {
    if loss >= S::one() {
        SampleKind::Outlier
    } else {
        SampleKind::Inlier
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E3: f64 = 20.085536923187668; // e^3

    fn defaults() -> BalancedL1Params<f64> {
        BalancedL1Params::default()
    }

    /// Inlier-branch value at |x| = 1 under the defaults, simplified via the
    /// constraint: gamma * (b + 1) / b - alpha.
    fn loss_at_one() -> f64 {
        1.5 * (E3 / (E3 - 1.0)) - 0.5
    }

    #[test]
    fn solve_b_defaults() {
        let b = solve_b(0.5, 1.5).unwrap();
        assert!((b - (E3 - 1.0)).abs() < 1e-9);
        assert!((0.5 * (b + 1.0).ln() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn solve_b_equal_parameters() {
        let b = solve_b(0.7, 0.7).unwrap();
        assert!((b - (std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn solve_b_alpha_sweep_pair() {
        let b = solve_b(0.2, 1.0).unwrap();
        assert!((b - (5f64.exp() - 1.0)).abs() < 1e-9);
        assert!((b - 147.4131591025766).abs() < 1e-9);
    }

    #[test]
    fn solve_b_rejects_bad_parameters() {
        assert!(solve_b(0.0, 1.0).is_err());
        assert!(solve_b(-0.5, 1.0).is_err());
        assert!(solve_b(0.5, 0.0).is_err());
        assert!(solve_b(1e-3, 1.0).is_err()); // b overflows
    }

    #[test]
    fn loss_vanishes_at_origin() {
        assert_eq!(balanced_l1(0.0, &defaults()), 0.0);
        assert_eq!(smooth_l1(0.0), 0.0);
    }

    #[test]
    fn loss_at_junction_matches_hand_value() {
        let v = balanced_l1(1.0, &defaults());
        assert!((v - loss_at_one()).abs() < 1e-12, "{v} vs {}", loss_at_one());
    }

    #[test]
    fn continuity_constant_from_junction() {
        let p = defaults();
        assert!((p.c_const - (loss_at_one() - 1.5)).abs() < 1e-12);
        // roughly -0.4214 for the defaults
        assert!((p.c_const + 0.42140646).abs() < 1e-6);
    }

    #[test]
    fn gradient_at_origin_and_cap() {
        let p = defaults();
        assert_eq!(balanced_l1_grad(0.0, &p), 0.0);
        assert_eq!(balanced_l1_grad(1.0, &p), 1.5);
        assert_eq!(balanced_l1_grad(-2.5, &p), -1.5);
    }

    #[test]
    fn gradient_mid_inlier_value() {
        let p = defaults();
        let expect = 0.5 * (p.b * 0.5 + 1.0).ln();
        let got = balanced_l1_grad(0.5, &p);
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 1.17772).abs() < 1e-4);
        // central difference of the loss agrees
        let h = 1e-6;
        let fd = (balanced_l1(0.5 + h, &p) - balanced_l1(0.5 - h, &p)) / (2.0 * h);
        assert!((got - fd).abs() / fd.abs() < 1e-8);
    }

    #[test]
    fn smooth_l1_reference_points() {
        assert_eq!(smooth_l1(1.0), 0.5);
        assert_eq!(smooth_l1_grad(1.0), 1.0);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        assert_eq!(smooth_l1_grad(-0.25), -0.25);
    }

    #[test]
    fn localization_perfect_regression() {
        let p = defaults();
        let v = [0.2, -0.3, 0.0, 1.4];
        assert_eq!(localization_loss(&v, &v, &p), 0.0);
        assert_eq!(localization_loss_grad(&v, &v, &p), [0.0; 4]);
    }

    #[test]
    fn localization_unit_offsets() {
        let p = defaults();
        let pred = [1.0, 1.0, 1.0, 1.0];
        let tgt = [0.0; 4];
        let v = localization_loss(&pred, &tgt, &p);
        assert!((v - 4.0 * loss_at_one()).abs() < 1e-12);
    }

    #[test]
    fn multi_task_background_masks_regression() {
        let p = defaults();
        let sample = DetectionTarget {
            class: 0,
            class_scores: vec![0.25, 0.75],
            prediction: [5.0; 4],
            target: [0.0; 4],
        };
        let v = multi_task_loss(&sample, 1.0, &p).unwrap();
        assert!((v - (-0.25f64.ln())).abs() < 1e-12);
        assert_eq!(multi_task_loss_grad(&sample, 1.0, &p).unwrap(), [0.0; 4]);
    }

    #[test]
    fn multi_task_perfect_sample_is_zero() {
        let p = defaults();
        let sample = DetectionTarget {
            class: 1,
            class_scores: vec![0.0, 1.0],
            prediction: [0.1, 0.2, 0.3, 0.4],
            target: [0.1, 0.2, 0.3, 0.4],
        };
        assert_eq!(multi_task_loss(&sample, 1.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn multi_task_hand_composed_value() {
        let p = defaults();
        let sample = DetectionTarget {
            class: 1,
            class_scores: vec![0.5, 0.5],
            prediction: [1.0; 4],
            target: [0.0; 4],
        };
        let v = multi_task_loss(&sample, 1.0, &p).unwrap();
        let expect = 2f64.ln() + 4.0 * loss_at_one();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 5.00752).abs() < 1e-4);
    }

    #[test]
    fn multi_task_floor_guards_zero_probability() {
        let p = defaults();
        let sample = DetectionTarget {
            class: 1,
            class_scores: vec![1.0, 0.0],
            prediction: [0.0; 4],
            target: [0.0; 4],
        };
        let v = multi_task_loss(&sample, 1.0, &p).unwrap();
        assert!(v.is_finite());
        assert!((v - (-CLASS_PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn multi_task_validates_inputs() {
        let p = defaults();
        let sample = DetectionTarget {
            class: 3,
            class_scores: vec![0.5, 0.5],
            prediction: [0.0; 4],
            target: [0.0; 4],
        };
        assert!(multi_task_loss(&sample, 1.0, &p).is_err());
        let sample = DetectionTarget {
            class: 1,
            class_scores: vec![0.9, 0.9],
            prediction: [0.0; 4],
            target: [0.0; 4],
        };
        assert!(multi_task_loss(&sample, 1.0, &p).is_err());
        let sample = DetectionTarget {
            class: 1,
            class_scores: vec![0.5, 0.5],
            prediction: [0.0; 4],
            target: [0.0; 4],
        };
        assert!(multi_task_loss(&sample, -1.0, &p).is_err());
    }

    #[test]
    fn outlier_threshold_is_inclusive() {
        assert_eq!(classify_sample(0.99), SampleKind::Inlier);
        assert_eq!(classify_sample(1.0), SampleKind::Outlier);
        let p = defaults();
        assert_eq!(classify_sample(balanced_l1(1.0, &p)), SampleKind::Outlier);
    }

    #[test]
    fn works_in_f32_too() {
        let p = BalancedL1Params::<f32>::new(0.5, 1.5).unwrap();
        assert!((balanced_l1_grad(1.0f32, &p) - 1.5).abs() < 1e-6);
    }
}
