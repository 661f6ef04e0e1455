//! Feature-map-wise anchor search space.
//!
//! An anchor is a `(scale, ratio)` pair with `scale = sqrt(width * height)`
//! and `ratio = height / width`. Anchors live per pyramid level; the scale
//! stored in a [`LevelSpace`] or [`AnchorConfiguration`] is the basic scale,
//! i.e. before multiplication by the level stride. The global width/height
//! limits apply to the stride-multiplied pixel box.

mod build;
mod coco;
pub(crate) mod format;
mod kmeans;
mod sample;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_space, quantile, SpaceParams};
pub use coco::{parse_coco, read_coco};
pub use format::{CONFIG_SCHEMA, SPACE_SCHEMA};
pub use kmeans::{kmeans, kmeans_anchors, kmeans_configuration, KMeansResult};
pub use sample::{sample_configuration, sample_pair, MAX_REJECTIONS};

/// Relative slack used when checking stored values against range bounds.
const RANGE_SLACK: f64 = 1e-9;

/// One ground-truth bounding box, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub width: f64,
    pub height: f64,
    pub image_id: u64,
}

impl BoxRecord {
    pub fn new(width: f64, height: f64, image_id: u64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite() && height > 0.0 && height.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "box dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height, image_id })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRatio {
    pub scale: f64,
    pub ratio: f64,
}

impl ScaleRatio {
    pub fn new(scale: f64, ratio: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scale and ratio must be positive, got scale={scale} ratio={ratio}"
            )));
        }
        Ok(Self { scale, ratio })
    }

    pub fn width(&self) -> f64 {
        self.scale / self.ratio.sqrt()
    }

    pub fn height(&self) -> f64 {
        self.scale * self.ratio.sqrt()
    }

    /// The same shape with its scale multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { scale: self.scale * factor, ratio: self.ratio }
    }
}

/// Converts a box to its `(scale, ratio)` parameterization.
pub fn box_to_scale_ratio(b: &BoxRecord) -> Result<ScaleRatio> {
    if !(b.width > 0.0 && b.height > 0.0) {
        return Err(Error::InvalidInput(format!(
            "box dimensions must be positive, got {}x{}",
            b.width, b.height
        )));
    }
    ScaleRatio::new((b.width * b.height).sqrt(), b.height / b.width)
}

/// Largest admissible anchor width and height, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalLimits {
    pub max_width: f64,
    pub max_height: f64,
}

impl GlobalLimits {
    pub fn new(max_width: f64, max_height: f64) -> Result<Self> {
        if !(max_width > 0.0 && max_width.is_finite() && max_height > 0.0 && max_height.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "limits must be positive, got W={max_width} H={max_height}"
            )));
        }
        Ok(Self { max_width, max_height })
    }

    /// Largest scale for which some ratio is feasible: `sqrt(W * H)`.
    pub fn max_scale(&self) -> f64 {
        (self.max_width * self.max_height).sqrt()
    }
}

/// Feasible ratio interval `[scale^2 / W^2, H^2 / scale^2]` for a pixel scale.
pub fn ratio_bounds(scale: f64, limits: &GlobalLimits) -> Result<Interval> {
    if !(scale > 0.0) {
        return Err(Error::InvalidInput(format!("scale must be positive, got {scale}")));
    }
    let lo = scale * scale / (limits.max_width * limits.max_width);
    let hi = limits.max_height * limits.max_height / (scale * scale);
    if lo > hi {
        return Err(Error::InfeasibleSpace(format!(
            "scale {scale} exceeds sqrt(W*H) = {}",
            limits.max_scale()
        )));
    }
    Ok(Interval { lo, hi })
}

/// Whether the pixel-space anchor fits inside the global limits.
pub fn is_feasible(pair: &ScaleRatio, limits: &GlobalLimits) -> bool {
    match ratio_bounds(pair.scale, limits) {
        Ok(b) => b.lo <= pair.ratio && pair.ratio <= b.hi,
        Err(_) => false,
    }
}

/// Maps a pixel scale to a pyramid level: `floor(log2(scale / base_scale))`
/// clamped to `[0, num_levels - 1]`.
pub fn assign_level(pair: &ScaleRatio, num_levels: usize, base_scale: f64) -> usize {
    assert!(num_levels >= 1 && base_scale > 0.0);
    let raw = (pair.scale / base_scale).log2().floor();
    if raw.is_nan() || raw <= 0.0 {
        0
    } else {
        (raw as usize).min(num_levels - 1)
    }
}

/// Closed interval on the positive reals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn log_width(&self) -> f64 {
        (self.hi / self.lo).ln()
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn contains_loosely(&self, v: f64) -> bool {
        self.lo * (1.0 - RANGE_SLACK) <= v && v <= self.hi * (1.0 + RANGE_SLACK)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    /// Narrows the interval to log-width `width` around its log-midpoint.
    /// Intervals already narrower are returned unchanged.
    pub fn shrink_log_width(&self, width: f64) -> Interval {
        if self.log_width() <= width {
            return *self;
        }
        let mid = (self.lo.ln() + self.hi.ln()) / 2.0;
        let lo = (mid - width / 2.0).exp().clamp(self.lo, self.hi);
        let hi = (mid + width / 2.0).exp().clamp(self.lo, self.hi);
        Interval { lo, hi }
    }

    fn is_valid(&self) -> bool {
        self.lo > 0.0 && self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl From<[u32; 2]> for CountRange {
    fn from([min, max]: [u32; 2]) -> Self {
        Self { min, max }
    }
}

impl From<CountRange> for [u32; 2] {
    fn from(c: CountRange) -> Self {
        [c.min, c.max]
    }
}

impl CountRange {
    pub fn contains(&self, n: usize) -> bool {
        self.min as usize <= n && n <= self.max as usize
    }
}

/// Search region of a single pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpace {
    pub level: usize,
    pub stride: u32,
    pub anchor_count: CountRange,
    pub scale_range: Interval,
    pub ratio_range: Interval,
}

impl LevelSpace {
    /// Whether a basic-scale anchor at this level fits the global limits.
    pub fn pair_feasible(&self, pair: &ScaleRatio, limits: &GlobalLimits) -> bool {
        is_feasible(&pair.scaled(self.stride as f64), limits)
    }

    fn pair_feasible_loosely(&self, pair: &ScaleRatio, limits: &GlobalLimits) -> bool {
        let px = pair.scaled(self.stride as f64);
        let lo = px.scale * px.scale / (limits.max_width * limits.max_width);
        let hi = limits.max_height * limits.max_height / (px.scale * px.scale);
        lo * (1.0 - RANGE_SLACK) <= px.ratio && px.ratio <= hi * (1.0 + RANGE_SLACK)
    }

    /// Ratios feasible somewhere in this level's scale range: the Eq.-2
    /// band at the smallest pixel scale.
    pub fn feasible_ratio_band(&self, limits: &GlobalLimits) -> Result<Interval> {
        ratio_bounds(self.scale_range.lo * self.stride as f64, limits)
    }

    pub fn validate(&self, limits: &GlobalLimits) -> Result<()> {
        let lvl = self.level;
        if self.stride == 0 {
            return Err(Error::InvalidInput(format!("level {lvl}: stride must be positive")));
        }
        if self.anchor_count.min < 1 || self.anchor_count.min > self.anchor_count.max {
            return Err(Error::InvalidInput(format!(
                "level {lvl}: anchor count range {:?} is invalid",
                self.anchor_count
            )));
        }
        if !self.scale_range.is_valid() || !self.ratio_range.is_valid() {
            return Err(Error::InvalidInput(format!(
                "level {lvl}: scale {:?} / ratio {:?} ranges must be positive with lo <= hi",
                self.scale_range, self.ratio_range
            )));
        }
        let band = self
            .feasible_ratio_band(limits)
            .map_err(|e| Error::InfeasibleSpace(format!("level {lvl}: {e}")))?;
        if band.intersect(&self.ratio_range).is_none() {
            return Err(Error::InfeasibleSpace(format!(
                "level {lvl}: ratio range {:?} misses the feasible band {:?}",
                self.ratio_range, band
            )));
        }
        Ok(())
    }
}

/// Per-level search regions plus the global feasibility limits.
///
/// `base_scale` is the pixel scale that maps to level 0 under
/// [`assign_level`]; it travels with the space so objectives assign boxes
/// exactly as the space builder did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub limits: GlobalLimits,
    pub base_scale: f64,
    pub levels: Vec<LevelSpace>,
}

impl SearchSpace {
    /// Builds a space and checks every invariant.
    pub fn new(limits: GlobalLimits, base_scale: f64, levels: Vec<LevelSpace>) -> Result<Self> {
        let space = Self { limits, base_scale, levels };
        space.validate()?;
        Ok(space)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_of_box(&self, b: &BoxRecord) -> Result<usize> {
        Ok(assign_level(&box_to_scale_ratio(b)?, self.num_levels(), self.base_scale))
    }

    /// Checks level numbering, per-level validity and that count maxima and
    /// log-widths of scale and ratio ranges never grow with the level.
    pub fn validate(&self) -> Result<()> {
        GlobalLimits::new(self.limits.max_width, self.limits.max_height)?;
        if !(self.base_scale > 0.0 && self.base_scale.is_finite()) {
            return Err(Error::InvalidInput(format!("base scale must be positive, got {}", self.base_scale)));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidInput("search space has no levels".into()));
        }
        for (i, level) in self.levels.iter().enumerate() {
            if level.level != i {
                return Err(Error::InvalidInput(format!(
                    "level indices must be consecutive from 0, found {} at position {i}",
                    level.level
                )));
            }
            level.validate(&self.limits)?;
        }
        const TOL: f64 = 1e-12;
        for pair in self.levels.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.anchor_count.max > a.anchor_count.max {
                return Err(Error::InvalidInput(format!(
                    "level {}: anchor count max {} exceeds level {}'s {}",
                    b.level, b.anchor_count.max, a.level, a.anchor_count.max
                )));
            }
            if b.scale_range.log_width() > a.scale_range.log_width() + TOL {
                return Err(Error::InvalidInput(format!(
                    "level {}: scale range is wider than level {}'s",
                    b.level, a.level
                )));
            }
            if b.ratio_range.log_width() > a.ratio_range.log_width() + TOL {
                return Err(Error::InvalidInput(format!(
                    "level {}: ratio range is wider than level {}'s",
                    b.level, a.level
                )));
            }
        }
        Ok(())
    }
}

/// Anchors per pyramid level; the search point of the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfiguration {
    pub levels: Vec<Vec<ScaleRatio>>,
}

impl AnchorConfiguration {
    pub fn new(levels: Vec<Vec<ScaleRatio>>) -> Self {
        Self { levels }
    }

    pub fn num_anchors(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// The same anchors with each level sorted by scale, then ratio.
    pub fn canonical(&self) -> Self {
        let levels = self
            .levels
            .iter()
            .map(|pairs| {
                let mut pairs = pairs.clone();
                pairs.sort_by(|a, b| a.scale.total_cmp(&b.scale).then(a.ratio.total_cmp(&b.ratio)));
                pairs
            })
            .collect();
        Self { levels }
    }

    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        if self.levels.len() != space.num_levels() {
            return Err(Error::ConfigMismatch(format!(
                "configuration has {} levels, space has {}",
                self.levels.len(),
                space.num_levels()
            )));
        }
        for (pairs, level) in self.levels.iter().zip(&space.levels) {
            let lvl = level.level;
            if !level.anchor_count.contains(pairs.len()) {
                return Err(Error::ConfigMismatch(format!(
                    "level {lvl}: {} anchors outside count range {:?}",
                    pairs.len(),
                    level.anchor_count
                )));
            }
            for p in pairs {
                if !level.scale_range.contains_loosely(p.scale) || !level.ratio_range.contains_loosely(p.ratio) {
                    return Err(Error::ConfigMismatch(format!(
                        "level {lvl}: anchor {p:?} outside scale {:?} / ratio {:?}",
                        level.scale_range, level.ratio_range
                    )));
                }
                if !level.pair_feasible_loosely(p, &space.limits) {
                    return Err(Error::ConfigMismatch(format!(
                        "level {lvl}: anchor {p:?} violates the width/height limits at stride {}",
                        level.stride
                    )));
                }
            }
        }
        Ok(())
    }
}
