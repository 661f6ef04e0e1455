use crate::error::{Error, Result};
use crate::space::{AnchorConfiguration, ScaleRatio, SearchSpace};

/// Kind of one coordinate of an encoded configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimKind {
    /// Real coordinate bounded by `[lo, hi]` (log scale or log ratio).
    Continuous { lo: f64, hi: f64 },
    /// Integer anchor count in `[min, max]`.
    Categorical { min: i64, max: i64 },
}

/// Layout of the fixed-width encoding: for every level, the anchor count
/// followed by `count_max` slots of `(ln scale, ln ratio)`. Unused slots
/// hold the log-midpoints of the level ranges.
pub fn dim_kinds(space: &SearchSpace) -> Vec<DimKind> {
    let mut kinds = Vec::new();
    for level in &space.levels {
        kinds.push(DimKind::Categorical { min: level.anchor_count.min as i64, max: level.anchor_count.max as i64 });
        let s = DimKind::Continuous { lo: level.scale_range.lo.ln(), hi: level.scale_range.hi.ln() };
        let r = DimKind::Continuous { lo: level.ratio_range.lo.ln(), hi: level.ratio_range.hi.ln() };
        for _ in 0..level.anchor_count.max {
            kinds.push(s);
            kinds.push(r);
        }
    }
    kinds
}

/// Encodes the canonical form of `config` (anchors sorted by scale, then ratio).
pub fn encode(config: &AnchorConfiguration, space: &SearchSpace) -> Result<Vec<f64>> {
    config.validate(space)?;
    let config = config.canonical();
    let mut x = Vec::new();
    for (pairs, level) in config.levels.iter().zip(&space.levels) {
        x.push(pairs.len() as f64);
        let pad_s = (level.scale_range.lo * level.scale_range.hi).sqrt().ln();
        let pad_r = (level.ratio_range.lo * level.ratio_range.hi).sqrt().ln();
        for slot in 0..level.anchor_count.max as usize {
            match pairs.get(slot) {
                Some(p) => {
                    x.push(p.scale.ln());
                    x.push(p.ratio.ln());
                }
                None => {
                    x.push(pad_s);
                    x.push(pad_r);
                }
            }
        }
    }
    Ok(x)
}

/// Inverse of [`encode`]; values are clamped into the level ranges.
pub fn decode(x: &[f64], space: &SearchSpace) -> Result<AnchorConfiguration> {
    let width = dim_kinds(space).len();
    if x.len() != width {
        return Err(Error::ConfigMismatch(format!("encoding has width {}, space expects {width}", x.len())));
    }
    let mut levels = Vec::with_capacity(space.num_levels());
    let mut offset = 0;
    for level in &space.levels {
        let count = (x[offset].round() as i64)
            .clamp(level.anchor_count.min as i64, level.anchor_count.max as i64) as usize;
        let pairs = (0..count)
            .map(|slot| {
                let at = offset + 1 + 2 * slot;
                ScaleRatio {
                    scale: level.scale_range.clamp(x[at].exp()),
                    ratio: level.ratio_range.clamp(x[at + 1].exp()),
                }
            })
            .collect();
        levels.push(pairs);
        offset += 1 + 2 * level.anchor_count.max as usize;
    }
    Ok(AnchorConfiguration::new(levels).canonical())
}
