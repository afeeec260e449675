//! Balanced feature pyramid: rescale all levels to an intermediate
//! resolution, integrate by averaging, optionally refine with an
//! embedded-Gaussian non-local block, then rescale back and strengthen the
//! originals by residual addition.
//!
//! Levels finer than the intermediate one are max-pooled down and coarser
//! ones are nearest-upsampled; the strengthening pass uses the reverse
//! resamplers. Without refinement the transform has zero learned
//! parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::scalar::{lit, Real};
use crate::tensor::{
    add, channels_to_rows, conv1x1, conv1x1_vjp, matmul, matmul_vjp, maxpool_to, maxpool_to_vjp,
    mean_stack, mean_stack_vjp, resize_nearest, resize_nearest_vjp, rows_to_channels,
    softmax_rows, softmax_rows_vjp, transpose2, Tensor,
};

/// Ordered multi-resolution feature stack; level 0 is the finest and each
/// following level halves the spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevels<S: Real> {
    levels: Vec<Tensor<S>>,
    /// Integrated (and possibly refined) feature map at the intermediate
    /// resolution; populated on the output of the full pipeline.
    pub integrated: Option<Tensor<S>>,
}

impl<S: Real> PyramidLevels<S> {
    pub fn new(levels: Vec<Tensor<S>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(invalid("pyramid needs at least one level"));
        }
        for t in &levels {
            t.expect_rank(3, "pyramid level")?;
        }
        let channels = levels[0].shape()[0];
        for (l, t) in levels.iter().enumerate().skip(1) {
            if t.shape()[0] != channels {
                return Err(invalid("pyramid levels must share the channel count"));
            }
            let (ph, pw) = (levels[l - 1].shape()[1], levels[l - 1].shape()[2]);
            let (h, w) = (t.shape()[1], t.shape()[2]);
            if h != ph.div_ceil(2) || w != pw.div_ceil(2) {
                return Err(invalid(format!(
                    "level {l} is {h}x{w}, expected the ceil-half of {ph}x{pw}"
                )));
            }
            if h >= ph || w >= pw {
                return Err(invalid("pyramid spatial sizes must strictly decrease"));
            }
        }
        Ok(Self { levels, integrated: None })
    }

    pub fn levels(&self) -> &[Tensor<S>] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Tensor<S> {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.levels[0].shape()[0]
    }

    pub fn spatial(&self, l: usize) -> (usize, usize) {
        (self.levels[l].shape()[1], self.levels[l].shape()[2])
    }

    /// Default intermediate level: the second-coarsest.
    pub fn default_target_level(&self) -> usize {
        self.len().saturating_sub(2)
    }
}

/// Channel-projection weights of the embedded-Gaussian non-local block:
/// `theta`, `phi`, `g` map `C -> E`, `w_z` maps `E -> C`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonLocalWeights<S: Real> {
    pub theta: Tensor<S>,
    pub phi: Tensor<S>,
    pub g: Tensor<S>,
    pub w_z: Tensor<S>,
    pub embed_channels: usize,
}

/// Default reduced channel count: half the input channels, at least one.
pub fn default_embed_channels(channels: usize) -> usize {
    (channels / 2).max(1)
}

impl<S: Real> NonLocalWeights<S> {
    pub fn new(theta: Tensor<S>, phi: Tensor<S>, g: Tensor<S>, w_z: Tensor<S>) -> Result<Self> {
        theta.expect_rank(2, "theta")?;
        phi.expect_rank(2, "phi")?;
        g.expect_rank(2, "g")?;
        w_z.expect_rank(2, "w_z")?;
        let (embed, channels) = (theta.shape()[0], theta.shape()[1]);
        if phi.shape() != [embed, channels] || g.shape() != [embed, channels] {
            return Err(invalid("theta/phi/g must share the [embed, channels] shape"));
        }
        if w_z.shape() != [channels, embed] {
            return Err(invalid("w_z must map embed channels back to input channels"));
        }
        Ok(Self { theta, phi, g, w_z, embed_channels: embed })
    }

    /// Random projections with entries uniform in `±1/sqrt(channels)`.
    pub fn seeded(channels: usize, embed_channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 || embed_channels == 0 {
            return Err(invalid("channel counts must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (channels as f64).sqrt();
        let mut draw = |shape: Vec<usize>| {
            Tensor::from_fn(shape, |_| lit::<S>(rng.gen_range(-scale..scale)))
        };
        Self::new(
            draw(vec![embed_channels, channels])?,
            draw(vec![embed_channels, channels])?,
            draw(vec![embed_channels, channels])?,
            draw(vec![channels, embed_channels])?,
        )
    }

    pub fn channels(&self) -> usize {
        self.theta.shape()[1]
    }
}

/// Gradients of the non-local projections.
#[derive(Debug, Clone, PartialEq)]
pub struct NonLocalGrads<S: Real> {
    pub theta: Tensor<S>,
    pub phi: Tensor<S>,
    pub g: Tensor<S>,
    pub w_z: Tensor<S>,
}

/// Gradients of the full pipeline with respect to every input level and,
/// when refinement ran, every projection weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidGradients<S: Real> {
    pub levels: Vec<Tensor<S>>,
    pub weights: Option<NonLocalGrads<S>>,
}

fn check_target<S: Real>(levels: &PyramidLevels<S>, target_level: usize) -> Result<()> {
    if target_level >= levels.len() {
        return Err(invalid(format!(
            "target level {target_level} out of range for {} levels",
            levels.len()
        )));
    }
    Ok(())
}

/// Brings every level to the target level's resolution: finer levels are
/// max-pooled, coarser ones nearest-upsampled, the target passes through.
pub fn rescale_to<S: Real>(
    levels: &PyramidLevels<S>,
    target_level: usize,
) -> Result<Vec<Tensor<S>>> {
    check_target(levels, target_level)?;
    let size = levels.spatial(target_level);
    levels
        .levels()
        .iter()
        .enumerate()
        .map(|(l, t)| {
            if l < target_level {
                maxpool_to(t, size)
            } else if l > target_level {
                resize_nearest(t, size)
            } else {
                Ok(t.clone())
            }
        })
        .collect()
}

fn rescale_to_vjp<S: Real>(
    level: &Tensor<S>,
    l: usize,
    target_level: usize,
    size: (usize, usize),
    upstream: &Tensor<S>,
) -> Result<Tensor<S>> {
    if l < target_level {
        maxpool_to_vjp(level, size, upstream)
    } else if l > target_level {
        resize_nearest_vjp(level.shape(), size, upstream)
    } else {
        Ok(upstream.clone())
    }
}

/// Parameter-free integration: the elementwise mean over levels.
pub fn integrate<S: Real>(rescaled: &[Tensor<S>]) -> Result<Tensor<S>> {
    mean_stack(rescaled)
}

struct RefineCache<S: Real> {
    theta_rows: Tensor<S>,
    phi_rows: Tensor<S>,
    g_rows: Tensor<S>,
    attention: Tensor<S>,
    y_map: Tensor<S>,
}

fn refine_forward<S: Real>(
    x: &Tensor<S>,
    w: &NonLocalWeights<S>,
) -> Result<(Tensor<S>, RefineCache<S>)> {
    x.expect_rank(3, "refine_nonlocal input")?;
    if x.shape()[0] != w.channels() {
        return Err(invalid(format!(
            "input has {} channels, weights expect {}",
            x.shape()[0],
            w.channels()
        )));
    }
    let spatial = (x.shape()[1], x.shape()[2]);
    let theta_rows = channels_to_rows(&conv1x1(x, &w.theta)?)?;
    let phi_rows = channels_to_rows(&conv1x1(x, &w.phi)?)?;
    let g_rows = channels_to_rows(&conv1x1(x, &w.g)?)?;
    let logits = matmul(&theta_rows, &transpose2(&phi_rows)?)?;
    let attention = softmax_rows(&logits)?;
    let y_rows = matmul(&attention, &g_rows)?;
    let y_map = rows_to_channels(&y_rows, spatial)?;
    let z = conv1x1(&y_map, &w.w_z)?;
    let out = add(x, &z)?;
    Ok((out, RefineCache { theta_rows, phi_rows, g_rows, attention, y_map }))
}

fn refine_backward<S: Real>(
    x: &Tensor<S>,
    w: &NonLocalWeights<S>,
    cache: &RefineCache<S>,
    upstream: &Tensor<S>,
) -> Result<(Tensor<S>, NonLocalGrads<S>)> {
    let spatial = (x.shape()[1], x.shape()[2]);
    let (d_y_map, d_wz) = conv1x1_vjp(&cache.y_map, &w.w_z, upstream)?;
    let d_y_rows = channels_to_rows(&d_y_map)?;
    let (d_attention, d_g_rows) = matmul_vjp(&cache.attention, &cache.g_rows, &d_y_rows)?;
    let d_logits = softmax_rows_vjp(&cache.attention, &d_attention)?;
    let phi_t = transpose2(&cache.phi_rows)?;
    let (d_theta_rows, d_phi_t) = matmul_vjp(&cache.theta_rows, &phi_t, &d_logits)?;
    let d_phi_rows = transpose2(&d_phi_t)?;

    let (dx_theta, d_theta) = conv1x1_vjp(x, &w.theta, &rows_to_channels(&d_theta_rows, spatial)?)?;
    let (dx_phi, d_phi) = conv1x1_vjp(x, &w.phi, &rows_to_channels(&d_phi_rows, spatial)?)?;
    let (dx_g, d_g) = conv1x1_vjp(x, &w.g, &rows_to_channels(&d_g_rows, spatial)?)?;

    // residual path plus the three projection paths
    let dx = add(&add(&add(upstream, &dx_theta)?, &dx_phi)?, &dx_g)?;
    Ok((dx, NonLocalGrads { theta: d_theta, phi: d_phi, g: d_g, w_z: d_wz }))
}

/// Embedded-Gaussian non-local refinement with a residual connection:
/// `out = x + w_z(softmax(theta(x)^T phi(x)) . g(x))`.
pub fn refine_nonlocal<S: Real>(x: &Tensor<S>, w: &NonLocalWeights<S>) -> Result<Tensor<S>> {
    refine_forward(x, w).map(|(out, _)| out)
}

/// Adds the refined feature, resampled with the reverse procedure, onto
/// every original level: `P_l = C_l + rescale(refined -> level l)`.
pub fn strengthen<S: Real>(
    levels: &PyramidLevels<S>,
    refined: &Tensor<S>,
    target_level: usize,
) -> Result<PyramidLevels<S>> {
    check_target(levels, target_level)?;
    if refined.shape() != levels.level(target_level).shape() {
        return Err(invalid("refined tensor must be at the target level's resolution"));
    }
    let out = levels
        .levels()
        .iter()
        .enumerate()
        .map(|(l, t)| {
            let size = levels.spatial(l);
            let back = if l < target_level {
                resize_nearest(refined, size)?
            } else if l > target_level {
                maxpool_to(refined, size)?
            } else {
                refined.clone()
            };
            add(t, &back)
        })
        .collect::<Result<Vec<_>>>()?;
    PyramidLevels::new(out)
}

fn strengthen_vjp_to_refined<S: Real>(
    refined: &Tensor<S>,
    l: usize,
    target_level: usize,
    size: (usize, usize),
    upstream: &Tensor<S>,
) -> Result<Tensor<S>> {
    if l < target_level {
        resize_nearest_vjp(refined.shape(), size, upstream)
    } else if l > target_level {
        maxpool_to_vjp(refined, size, upstream)
    } else {
        Ok(upstream.clone())
    }
}

/// The full four-step pipeline. With no weights the refinement step is the
/// identity and the whole transform is parameter-free.
pub fn balanced_feature_pyramid<S: Real>(
    levels: &PyramidLevels<S>,
    weights: Option<&NonLocalWeights<S>>,
    target_level: usize,
) -> Result<PyramidLevels<S>> {
    let rescaled = rescale_to(levels, target_level)?;
    let integrated = integrate(&rescaled)?;
    let refined = match weights {
        Some(w) => refine_nonlocal(&integrated, w)?,
        None => integrated,
    };
    let mut out = strengthen(levels, &refined, target_level)?;
    out.integrated = Some(refined);
    Ok(out)
}

/// Runs the pipeline and backpropagates `upstream` (one gradient per output
/// level) to every input level and projection weight.
pub fn balanced_feature_pyramid_backward<S: Real>(
    levels: &PyramidLevels<S>,
    weights: Option<&NonLocalWeights<S>>,
    target_level: usize,
    upstream: &[Tensor<S>],
) -> Result<(PyramidLevels<S>, PyramidGradients<S>)> {
    check_target(levels, target_level)?;
    if upstream.len() != levels.len() {
        return Err(invalid("one upstream gradient per level is required"));
    }
    for (l, u) in upstream.iter().enumerate() {
        if u.shape() != levels.level(l).shape() {
            return Err(invalid(format!("upstream gradient {l} has the wrong shape")));
        }
    }

    // forward, keeping what the reverse pass needs
    let size = levels.spatial(target_level);
    let rescaled = rescale_to(levels, target_level)?;
    let integrated = integrate(&rescaled)?;
    let (refined, cache) = match weights {
        Some(w) => {
            let (r, c) = refine_forward(&integrated, w)?;
            (r, Some(c))
        }
        None => (integrated.clone(), None),
    };
    let mut out = strengthen(levels, &refined, target_level)?;
    out.integrated = Some(refined.clone());

    // reverse: strengthen
    let mut level_grads: Vec<Tensor<S>> = upstream.to_vec();
    let mut d_refined = Tensor::zeros(refined.shape().to_vec())?;
    for (l, u) in upstream.iter().enumerate() {
        let back = strengthen_vjp_to_refined(&refined, l, target_level, levels.spatial(l), u)?;
        d_refined = add(&d_refined, &back)?;
    }

    // reverse: refinement
    let (d_integrated, weight_grads) = match (weights, &cache) {
        (Some(w), Some(c)) => {
            let (dx, dw) = refine_backward(&integrated, w, c, &d_refined)?;
            (dx, Some(dw))
        }
        _ => (d_refined, None),
    };

    // reverse: integration and rescaling
    let d_each = mean_stack_vjp(levels.len(), &d_integrated)?;
    for (l, t) in levels.levels().iter().enumerate() {
        let back = rescale_to_vjp(t, l, target_level, size, &d_each)?;
        level_grads[l] = add(&level_grads[l], &back)?;
    }

    Ok((out, PyramidGradients { levels: level_grads, weights: weight_grads }))
}
