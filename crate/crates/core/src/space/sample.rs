use rand::Rng;

use super::{AnchorConfiguration, GlobalLimits, LevelSpace, ScaleRatio, SearchSpace};
use crate::error::{Error, Result};
use crate::seed;

/// Rejection attempts per anchor before the region is declared empty.
pub const MAX_REJECTIONS: usize = 10_000;

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
}

/// Draws one feasible anchor for `level`: scale and ratio log-uniform over
/// the level ranges, redrawn jointly until the pixel box fits the limits.
pub fn sample_pair<R: Rng + ?Sized>(level: &LevelSpace, limits: &GlobalLimits, rng: &mut R) -> Result<ScaleRatio> {
    for _ in 0..MAX_REJECTIONS {
        let pair = ScaleRatio {
            scale: log_uniform(rng, level.scale_range.lo, level.scale_range.hi),
            ratio: log_uniform(rng, level.ratio_range.lo, level.ratio_range.hi),
        };
        if level.pair_feasible(&pair, limits) {
            return Ok(pair);
        }
    }
    Err(Error::InfeasibleSpace(format!(
        "level {}: no feasible anchor after {MAX_REJECTIONS} draws",
        level.level
    )))
}

/// Draws a configuration from the space prior.
pub fn sample_configuration(space: &SearchSpace, seed: u64) -> Result<AnchorConfiguration> {
    let mut rng = seed::rng(seed);
    let mut levels = Vec::with_capacity(space.num_levels());
    for level in &space.levels {
        let n = rng.random_range(level.anchor_count.min..=level.anchor_count.max) as usize;
        let pairs = (0..n)
            .map(|_| sample_pair(level, &space.limits, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        levels.push(pairs);
    }
    Ok(AnchorConfiguration::new(levels))
}
