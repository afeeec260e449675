//! Random and IoU-balanced negative sampling, plus per-ground-truth
//! positive balancing.
//!
//! The balanced sampler stratifies the negative pool into `K` equal-width
//! IoU bins, gives each bin an `N/K` quota (remainder to the lowest-index
//! bins), and redistributes shortfall from under-populated bins round-robin
//! so exactly `min(N, M)` candidates come back. Within a bin selection is
//! uniform without replacement, so a fully-populated bin realises the
//! per-sample probability `(N/K) * (1/M_k)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boxes::{Candidate, Label};
use crate::error::{invalid, Result};
use crate::scalar::{lit, Real};

/// Overlap above which a negative is considered hard (used for the sampled
/// distribution reports).
pub const HARD_NEGATIVE_IOU: f64 = 0.05;

/// Equal-width binning of an IoU interval `[lo, hi)`; out-of-range values
/// clamp to the edge bins.
#[derive(Debug, Clone, Copy)]
pub struct Binning<S: Real> {
    lo: S,
    hi: S,
    bins: usize,
}

impl<S: Real> Binning<S> {
    pub fn new(lo: S, hi: S, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("binning needs at least one bin"));
        }
        if !(lo >= S::zero() && lo < hi && hi <= S::one()) {
            return Err(invalid("bin range must satisfy 0 <= lo < hi <= 1"));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Bin index of a value, clamped to `[0, bins)`.
    pub fn bin_of(&self, v: S) -> usize {
        if v < self.lo {
            return 0;
        }
        if v >= self.hi {
            return self.bins - 1;
        }
        let width = (self.hi - self.lo) / lit::<S>(self.bins as f64);
        let idx = ((v - self.lo) / width).to_f64().unwrap_or(0.0) as usize;
        idx.min(self.bins - 1)
    }

    /// `(lo, hi)` edges of every bin, in f64 for reporting.
    pub fn edges(&self) -> Vec<(f64, f64)> {
        let lo = self.lo.to_f64().unwrap();
        let hi = self.hi.to_f64().unwrap();
        let width = (hi - lo) / self.bins as f64;
        (0..self.bins)
            .map(|i| (lo + width * i as f64, lo + width * (i + 1) as f64))
            .collect()
    }
}

/// Configuration of one sampling pass.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplerConfig<S: Real> {
    /// Number of negatives to draw (N).
    pub num_negatives: usize,
    /// Number of IoU bins (K).
    pub num_bins: usize,
    /// IoU interval `[lo, hi)` split evenly into bins.
    pub bin_range: (S, S),
    /// Number of positives to draw.
    pub num_positives: usize,
    /// RNG seed.
    pub seed: u64,
}

impl<S: Real> SamplerConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.num_negatives == 0 {
            return Err(invalid("num_negatives must be positive"));
        }
        if self.num_positives == 0 {
            return Err(invalid("num_positives must be positive"));
        }
        Binning::new(self.bin_range.0, self.bin_range.1, self.num_bins).map(|_| ())
    }

    pub fn binning(&self) -> Result<Binning<S>> {
        Binning::new(self.bin_range.0, self.bin_range.1, self.num_bins)
    }
}

impl<S: Real> Default for SamplerConfig<S> {
    fn default() -> Self {
        Self {
            num_negatives: 64,
            num_bins: 3,
            bin_range: (S::zero(), lit(0.5)),
            num_positives: 16,
            seed: 0,
        }
    }
}

/// Outcome of one sampling pass.
///
/// For the negative samplers the bins are IoU strata; for the positive
/// sampler they are per-ground-truth groups in ascending index order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleReport {
    /// Indices into the candidate list handed to the sampler, ascending.
    pub selected: Vec<usize>,
    /// Pool size per bin (`M_k`).
    pub bin_pool_counts: Vec<usize>,
    /// Selected count per bin.
    pub bin_selected_counts: Vec<usize>,
    /// Fraction of selected candidates with IoU >= 0.05.
    pub hard_fraction: f64,
}

fn hard_fraction<S: Real>(candidates: &[Candidate<S>], selected: &[usize]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    let hard = selected
        .iter()
        .filter(|&&i| candidates[i].iou.to_f64().unwrap_or(0.0) >= HARD_NEGATIVE_IOU)
        .count();
    hard as f64 / selected.len() as f64
}

/// Draws `amount` distinct values from `pool` uniformly, or the whole pool
/// when it is not larger than `amount`. The whole-pool path consumes no
/// randomness.
fn draw_without_replacement(pool: &[usize], amount: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if amount >= pool.len() {
        return pool.to_vec();
    }
    rand::seq::index::sample(rng, pool.len(), amount)
        .iter()
        .map(|i| pool[i])
        .collect()
}

/// Uniform sampling without replacement of `min(n, M)` negatives.
pub fn sample_random<S: Real>(negatives: &[Candidate<S>], n: usize, seed: u64) -> SampleReport {
    let pool: Vec<usize> = negatives
        .iter()
        .enumerate()
        .filter(|(_, c)| c.label == Label::Negative)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = draw_without_replacement(&pool, n, &mut rng);
    selected.sort_unstable();
    let hf = hard_fraction(negatives, &selected);
    SampleReport {
        bin_pool_counts: vec![pool.len()],
        bin_selected_counts: vec![selected.len()],
        hard_fraction: hf,
        selected,
    }
}

/// Per-bin targets: `floor(N/K)` each, remainder to the lowest-index bins,
/// capped by the pool, shortfall redistributed round-robin.
fn bin_quotas(n: usize, pool_counts: &[usize]) -> Vec<usize> {
    let k = pool_counts.len();
    let base = n / k;
    let rem = n % k;
    let mut target: Vec<usize> = (0..k)
        .map(|i| (base + usize::from(i < rem)).min(pool_counts[i]))
        .collect();
    let want = n.min(pool_counts.iter().sum());
    let mut have: usize = target.iter().sum();
    while have < want {
        for i in 0..k {
            if have == want {
                break;
            }
            if target[i] < pool_counts[i] {
                target[i] += 1;
                have += 1;
            }
        }
    }
    target
}

/// IoU-balanced sampling of negatives (stratified over `cfg.num_bins` bins).
pub fn sample_iou_balanced<S: Real>(
    negatives: &[Candidate<S>],
    cfg: &SamplerConfig<S>,
) -> Result<SampleReport> {
    cfg.validate()?;
    let binning = cfg.binning()?;
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_bins];
    for (i, c) in negatives.iter().enumerate() {
        if c.label == Label::Negative {
            bins[binning.bin_of(c.iou)].push(i);
        }
    }
    let pool_counts: Vec<usize> = bins.iter().map(Vec::len).collect();
    let targets = bin_quotas(cfg.num_negatives, &pool_counts);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut selected = Vec::new();
    let mut bin_selected_counts = vec![0usize; cfg.num_bins];
    for (k, members) in bins.iter().enumerate() {
        if targets[k] == 0 {
            continue;
        }
        let picked = draw_without_replacement(members, targets[k], &mut rng);
        bin_selected_counts[k] = picked.len();
        selected.extend(picked);
    }
    selected.sort_unstable();
    let hf = hard_fraction(negatives, &selected);
    Ok(SampleReport {
        selected,
        bin_pool_counts: pool_counts,
        bin_selected_counts,
        hard_fraction: hf,
    })
}

/// Positive sampling balanced across ground truths: quotas are filled
/// round-robin over ascending ground-truth index until the budget or the
/// pool runs out, then drawn uniformly within each group.
pub fn sample_positive_balanced<S: Real>(
    positives: &[Candidate<S>],
    num_positives: usize,
    seed: u64,
) -> SampleReport {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, c) in positives.iter().enumerate() {
        if c.label == Label::Positive {
            if let Some(gt) = c.gt_index {
                groups.entry(gt).or_default().push(i);
            }
        }
    }
    let pool_counts: Vec<usize> = groups.values().map(Vec::len).collect();

    // round-robin quota simulation
    let mut quotas = vec![0usize; groups.len()];
    let total: usize = pool_counts.iter().sum();
    let mut remaining = num_positives.min(total);
    while remaining > 0 {
        for (g, &cap) in pool_counts.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            if quotas[g] < cap {
                quotas[g] += 1;
                remaining -= 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = Vec::new();
    let mut bin_selected_counts = vec![0usize; groups.len()];
    for (g, members) in groups.values().enumerate() {
        if quotas[g] == 0 {
            continue;
        }
        let picked = draw_without_replacement(members, quotas[g], &mut rng);
        bin_selected_counts[g] = picked.len();
        selected.extend(picked);
    }
    selected.sort_unstable();
    let hf = hard_fraction(positives, &selected);
    SampleReport {
        selected,
        bin_pool_counts: pool_counts,
        bin_selected_counts,
        hard_fraction: hf,
    }
}
