//! Box geometry, IoU, and max-IoU ground-truth assignment.
//!
//! Coordinates are continuous; degenerate (zero-area) boxes are legal and
//! simply produce an IoU of 0 so synthetic pools never abort sampling.

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Axis-aligned box with `x2 >= x1` and `y2 >= y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D<S: Real> {
    pub x1: S,
    pub y1: S,
    pub x2: S,
    pub y2: S,
}

impl<S: Real> Box2D<S> {
    pub fn new(x1: S, y1: S, x2: S, y2: S) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(invalid("box coordinates must be finite"));
        }
        if x2 < x1 || y2 < y1 {
            return Err(invalid("box must satisfy x2 >= x1 and y2 >= y1"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> S {
        self.x2 - self.x1
    }

    pub fn height(&self) -> S {
        self.y2 - self.y1
    }

    pub fn area(&self) -> S {
        self.width() * self.height()
    }
}

/// Intersection-over-union of two boxes; 0 when the union has zero area.
pub fn iou<S: Real>(a: &Box2D<S>, b: &Box2D<S>) -> S {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(S::zero());
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(S::zero());
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union > S::zero() {
        inter / union
    } else {
        S::zero()
    }
}

/// Assignment outcome of a candidate box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Ignored,
}

/// A sampling candidate: its box, the best-overlapping ground truth, the
/// overlap value, and the threshold-derived label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<S: Real> {
    pub bbox: Box2D<S>,
    pub gt_index: Option<usize>,
    pub iou: S,
    pub label: Label,
}

/// IoU thresholds splitting candidates into positive / negative / ignored.
#[derive(Debug, Clone, Copy)]
pub struct AssignConfig<S: Real> {
    pub pos_iou_threshold: S,
    pub neg_iou_threshold: S,
}

impl<S: Real> AssignConfig<S> {
    pub fn new(pos_iou_threshold: S, neg_iou_threshold: S) -> Result<Self> {
        if !pos_iou_threshold.is_finite() || !neg_iou_threshold.is_finite() {
            return Err(invalid("assignment thresholds must be finite"));
        }
        if neg_iou_threshold < S::zero()
            || pos_iou_threshold > S::one()
            || neg_iou_threshold > pos_iou_threshold
            || pos_iou_threshold <= S::zero()
        {
            return Err(invalid(
                "thresholds must satisfy 0 <= neg <= pos <= 1 with pos > 0",
            ));
        }
        Ok(Self { pos_iou_threshold, neg_iou_threshold })
    }
}

impl<S: Real> Default for AssignConfig<S> {
    fn default() -> Self {
        Self {
            pos_iou_threshold: crate::scalar::lit(0.5),
            neg_iou_threshold: crate::scalar::lit(0.5),
        }
    }
}

/// Labels every candidate by its max-IoU ground truth (ties break to the
/// lowest ground-truth index). With no ground truths every candidate is
/// negative with IoU 0.
pub fn assign<S: Real>(
    candidates: &[Box2D<S>],
    gts: &[Box2D<S>],
    cfg: &AssignConfig<S>,
) -> Vec<Candidate<S>> {
    candidates
        .iter()
        .map(|c| {
            let mut best: Option<(usize, S)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                let v = iou(c, gt);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            match best {
                None => Candidate {
                    bbox: *c,
                    gt_index: None,
                    iou: S::zero(),
                    label: Label::Negative,
                },
                Some((gi, v)) => {
                    let label = if v >= cfg.pos_iou_threshold {
                        Label::Positive
                    } else if v < cfg.neg_iou_threshold {
                        Label::Negative
                    } else {
                        Label::Ignored
                    };
                    Candidate { bbox: *c, gt_index: Some(gi), iou: v, label }
                }
            }
        })
        .collect()
}
