//! Parzen-style density models over encoded anchor configurations.
//!
//! Observations are split at a loss quantile into a "good" and a "bad" set,
//! a product-kernel density estimator is fitted to each, and candidates are
//! ranked by the ratio `l(x) / g(x)` of the good to the bad density.
//!
//! A model fitted from a space is joint over the whole encoding. The encoding
//! can also be cut into blocks (see [`level_blocks`]); each block then gets
//! its own good/bad estimator pair and the model densities are products over
//! blocks, so a draw from `l` may combine one good configuration's level 0
//! with another's level 1.

mod encoding;
mod kde;

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::space::{sample_configuration, sample_pair, AnchorConfiguration, ScaleRatio, SearchSpace};

pub use encoding::{decode, dim_kinds, encode, DimKind};
pub use kde::{Kde, CATEGORICAL_SMOOTHING};

/// Floor on `g(x)` in the acquisition ratio.
pub const EPSILON: f64 = 1e-12;
pub const DEFAULT_GAMMA: f64 = 0.15;

/// One evaluated point: encoded configuration and loss (lower is better).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Good/bad estimators over one block of coordinates.
#[derive(Debug, Clone)]
pub struct Block {
    pub range: Range<usize>,
    pub good: Kde,
    pub bad: Kde,
}

/// Fitted good/bad density pair, factorized over blocks.
#[derive(Debug, Clone)]
pub struct DensityModel {
    pub blocks: Vec<Block>,
    /// Largest loss admitted to the good set.
    pub split_threshold: f64,
    pub gamma: f64,
    pub min_points: usize,
}

/// Coordinate range of each level in the encoding of `space`.
pub fn level_blocks(space: &SearchSpace) -> Vec<Range<usize>> {
    let mut start = 0;
    space
        .levels
        .iter()
        .map(|l| {
            let end = start + 1 + 2 * l.anchor_count.max as usize;
            let r = start..end;
            start = end;
            r
        })
        .collect()
}

/// Default number of observations before a model is fitted: `2 * dim + 2`.
pub fn default_min_points(dim: usize) -> usize {
    2 * dim + 2
}

/// Size of the good set for `n` observations: `ceil(gamma * n)`, at least
/// one and leaving at least one observation in the bad set.
pub fn good_set_size(n: usize, gamma: f64) -> usize {
    ((gamma * n as f64).ceil() as usize).clamp(1, n.saturating_sub(1).max(1))
}

impl DensityModel {
    /// Fits one joint model over the encoding of `space`.
    pub fn fit(
        observations: &[Observation],
        space: &SearchSpace,
        gamma: f64,
        min_points: Option<usize>,
    ) -> Result<Option<Self>> {
        Self::fit_with_kinds(observations, &dim_kinds(space), gamma, min_points)
    }

    /// Fits a single joint block over all coordinates.
    pub fn fit_with_kinds(
        observations: &[Observation],
        kinds: &[DimKind],
        gamma: f64,
        min_points: Option<usize>,
    ) -> Result<Option<Self>> {
        Self::fit_blocked(observations, kinds, &[0..kinds.len()], gamma, min_points)
    }

    /// Fits the good/bad estimators of every block.
    ///
    /// Returns `Ok(None)` while fewer than `min_points` observations exist
    /// (default [`default_min_points`]); callers then fall back to the prior.
    /// Observations are ranked by loss with ties kept in input order; the
    /// first `ceil(gamma * n)` form the good set, or only the first one when
    /// every loss is equal.
    ///
    /// `blocks` must tile `0..kinds.len()` in order.
    pub fn fit_blocked(
        observations: &[Observation],
        kinds: &[DimKind],
        blocks: &[Range<usize>],
        gamma: f64,
        min_points: Option<usize>,
    ) -> Result<Option<Self>> {
        let tiles = blocks.first().is_some_and(|b| b.start == 0)
            && blocks.windows(2).all(|w| w[0].end == w[1].start)
            && blocks.iter().all(|b| b.start < b.end)
            && blocks.last().is_some_and(|b| b.end == kinds.len());
        if !tiles {
            return Err(Error::InvalidInput(format!("blocks {blocks:?} do not tile 0..{}", kinds.len())));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        for (i, o) in observations.iter().enumerate() {
            if o.x.len() != kinds.len() {
                return Err(Error::InvalidInput(format!(
                    "observation {i} has width {}, expected {}",
                    o.x.len(),
                    kinds.len()
                )));
            }
            if !o.y.is_finite() {
                return Err(Error::InvalidInput(format!("observation {i} has non-finite loss {}", o.y)));
            }
        }
        let min_points = min_points.unwrap_or_else(|| default_min_points(kinds.len())).max(2);
        let n = observations.len();
        if n < min_points {
            return Ok(None);
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| observations[a].y.total_cmp(&observations[b].y));
        let all_equal = observations.iter().all(|o| o.y == observations[0].y);
        let n_good = if all_equal { 1 } else { good_set_size(n, gamma) };
        let split_threshold = observations[order[n_good - 1]].y;

        let slice = |idx: &[usize], r: &Range<usize>| -> Vec<Vec<f64>> {
            idx.iter().map(|&i| observations[i].x[r.clone()].to_vec()).collect()
        };
        let blocks = blocks
            .iter()
            .map(|r| Block {
                range: r.clone(),
                good: Kde::fit(slice(&order[..n_good], r), kinds[r.clone()].to_vec()),
                bad: Kde::fit(slice(&order[n_good..], r), kinds[r.clone()].to_vec()),
            })
            .collect();
        Ok(Some(Self {
            blocks,
            split_threshold,
            gamma,
            min_points,
        }))
    }

    /// Number of observations in the good set.
    pub fn good_len(&self) -> usize {
        self.blocks[0].good.len()
    }

    pub fn bad_len(&self) -> usize {
        self.blocks[0].bad.len()
    }

    /// `ln l(x)`.
    pub fn good_log_pdf(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|b| b.good.log_pdf(&x[b.range.clone()])).sum()
    }

    /// `ln g(x)`.
    pub fn bad_log_pdf(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|b| b.bad.log_pdf(&x[b.range.clone()])).sum()
    }

    /// `ln l(x) - ln max(g(x), EPSILON)`; order-equivalent to [`Self::acquisition`].
    pub fn log_acquisition(&self, x: &[f64]) -> f64 {
        let l = self.good_log_pdf(x);
        let g = self.bad_log_pdf(x).max(EPSILON.ln());
        let score = l - g;
        if score.is_nan() {
            f64::NEG_INFINITY
        } else {
            score
        }
    }

    /// `l(x) / max(g(x), EPSILON)`, saturating at `f64::MAX`.
    pub fn acquisition(&self, x: &[f64]) -> f64 {
        self.log_acquisition(x).exp().min(f64::MAX)
    }
}

/// Proposes the next configuration.
///
/// Without a model this is exactly [`sample_configuration`] with the same
/// seed. With a model, `n_candidates` configurations are drawn from the good
/// density (continuous coordinates clipped to the level ranges, anchors that
/// violate the limits redrawn) and the one with the highest acquisition is
/// returned; ties go to the earliest draw.
pub fn propose(
    model: Option<&DensityModel>,
    space: &SearchSpace,
    n_candidates: usize,
    seed: u64,
) -> Result<AnchorConfiguration> {
    if n_candidates == 0 {
        return Err(Error::InvalidInput("n_candidates must be at least 1".into()));
    }
    let Some(model) = model else {
        return sample_configuration(space, seed);
    };
    let mut rng = seed::rng(seed);
    let mut best: Option<(f64, AnchorConfiguration)> = None;
    for _ in 0..n_candidates {
        let candidate = draw_from_good(model, space, &mut rng)?;
        let score = model.log_acquisition(&encode(&candidate, space)?);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

const PAIR_RETRIES: usize = 100;

fn draw_from_good<R: Rng + ?Sized>(
    model: &DensityModel,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<AnchorConfiguration> {
    let dim: usize = level_blocks(space).last().map_or(0, |r| r.end);
    if model.blocks.last().map(|b| b.range.end) != Some(dim) {
        return Err(Error::ConfigMismatch(format!("model does not cover the {dim}-dim encoding of this space")));
    }
    // One kernel per block; `raw` is the draw, `center` the kernel it came from.
    let mut raw = Vec::with_capacity(dim);
    let mut center = Vec::with_capacity(dim);
    let mut owner = Vec::with_capacity(dim);
    for (b, block) in model.blocks.iter().enumerate() {
        let kernel = rng.random_range(0..block.good.len());
        raw.extend(block.good.sample_at(kernel, rng));
        center.extend_from_slice(block.good.point(kernel));
        owner.extend(std::iter::repeat_n(b, block.range.len()));
    }
    let perturb = |at: usize, rng: &mut R| {
        let block = &model.blocks[owner[at]];
        block.good.perturb(center[at], at - block.range.start, rng)
    };

    let mut levels = Vec::with_capacity(space.num_levels());
    for (level, range) in space.levels.iter().zip(level_blocks(space)) {
        let base = range.start;
        let count = (raw[base].round() as i64)
            .clamp(level.anchor_count.min as i64, level.anchor_count.max as i64) as usize;
        let mut pairs = Vec::with_capacity(count);
        for slot in 0..count {
            let at = base + 1 + 2 * slot;
            let mut pair = clip_pair(raw[at], raw[at + 1], level);
            let mut tries = 0;
            while !level.pair_feasible(&pair, &space.limits) && tries < PAIR_RETRIES {
                let s = perturb(at, rng);
                let r = perturb(at + 1, rng);
                pair = clip_pair(s, r, level);
                tries += 1;
            }
            if !level.pair_feasible(&pair, &space.limits) {
                pair = sample_pair(level, &space.limits, rng)?;
            }
            pairs.push(pair);
        }
        levels.push(pairs);
    }
    Ok(AnchorConfiguration::new(levels).canonical())
}

fn clip_pair(log_scale: f64, log_ratio: f64, level: &crate::space::LevelSpace) -> ScaleRatio {
    ScaleRatio {
        scale: level.scale_range.clamp(log_scale.exp()),
        ratio: level.ratio_range.clamp(log_ratio.exp()),
    }
}
