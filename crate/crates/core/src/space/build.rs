use serde::{Deserialize, Serialize};

use super::{
    assign_level, box_to_scale_ratio, is_feasible, BoxRecord, CountRange, GlobalLimits, Interval, LevelSpace,
    SearchSpace,
};
use crate::error::{Error, Result};

/// Settings for deriving a search space from box statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaceParams {
    /// Lower empirical quantile of per-level scales and ratios.
    pub q_lo: f64,
    /// Upper empirical quantile.
    pub q_hi: f64,
    /// Multiplier applied to each range's log-width around its log-midpoint.
    pub padding: f64,
    /// Pixel scale assigned to level 0.
    pub base_scale: f64,
    /// Stride of level 0; level `i` has stride `base_stride << i`.
    pub base_stride: u32,
    pub count_min: u32,
    /// Anchor count maximum of level 0.
    pub count_max: u32,
    /// Decrease of the count maximum per level (floored at `count_min`).
    pub count_step: u32,
}

impl Default for SpaceParams {
    fn default() -> Self {
        Self {
            q_lo: 0.02,
            q_hi: 0.98,
            padding: 1.1,
            base_scale: 32.0,
            base_stride: 4,
            count_min: 1,
            count_max: 9,
            count_step: 1,
        }
    }
}

impl SpaceParams {
    fn validate(&self) -> Result<()> {
        if !(0.0 <= self.q_lo && self.q_lo <= self.q_hi && self.q_hi <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "quantiles must satisfy 0 <= q_lo <= q_hi <= 1, got ({}, {})",
                self.q_lo, self.q_hi
            )));
        }
        if !(self.padding >= 1.0 && self.padding.is_finite()) {
            return Err(Error::InvalidInput(format!("padding must be >= 1, got {}", self.padding)));
        }
        if !(self.base_scale > 0.0) || self.base_stride == 0 {
            return Err(Error::InvalidInput("base scale and base stride must be positive".into()));
        }
        if self.count_min < 1 || self.count_min > self.count_max {
            return Err(Error::InvalidInput(format!(
                "anchor counts must satisfy 1 <= min <= max, got ({}, {})",
                self.count_min, self.count_max
            )));
        }
        Ok(())
    }

    fn count_range(&self, level: usize) -> CountRange {
        let dec = self.count_step.saturating_mul(level as u32);
        CountRange { min: self.count_min, max: self.count_max.saturating_sub(dec).max(self.count_min) }
    }
}

/// Linear-interpolation empirical quantile of unsorted `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

fn padded(values: &[f64], params: &SpaceParams) -> Interval {
    let lo = quantile(values, params.q_lo).ln();
    let hi = quantile(values, params.q_hi).ln();
    let mid = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0 * params.padding;
    Interval::new((mid - half).exp(), (mid + half).exp())
}

/// Derives a feature-map-wise search space from ground-truth boxes.
///
/// Boxes outside the global limits are dropped. Each remaining box goes to
/// the level chosen by [`assign_level`]; its basic scale is the pixel scale
/// divided by the level stride. Per level the ranges are quantile bounds,
/// padded in log space, clipped to the width/height limits and then
/// narrowed so no level is wider than the one below it.
pub fn build_space(
    boxes: &[BoxRecord],
    num_levels: usize,
    limits: GlobalLimits,
    params: &SpaceParams,
) -> Result<SearchSpace> {
    params.validate()?;
    if boxes.is_empty() {
        return Err(Error::InvalidInput("no boxes to build a search space from".into()));
    }
    if num_levels == 0 {
        return Err(Error::InvalidInput("at least one level is required".into()));
    }
    let stride = |i: usize| params.base_stride << i;

    let mut per_level: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); num_levels];
    let mut kept = 0usize;
    for b in boxes {
        let sr = box_to_scale_ratio(b)?;
        if !is_feasible(&sr, &limits) {
            continue;
        }
        let lvl = assign_level(&sr, num_levels, params.base_scale);
        per_level[lvl].0.push(sr.scale / stride(lvl) as f64);
        per_level[lvl].1.push(sr.ratio);
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::InfeasibleSpace(format!(
            "all {} boxes exceed the limits {}x{}",
            boxes.len(),
            limits.max_width,
            limits.max_height
        )));
    }
    for (i, (s, _)) in per_level.iter().enumerate() {
        log::debug!("level {i}: {} boxes", s.len());
    }

    let raw: Vec<Option<(Interval, Interval)>> = per_level
        .iter()
        .map(|(s, r)| (!s.is_empty()).then(|| (padded(s, params), padded(r, params))))
        .collect();

    let mut levels: Vec<LevelSpace> = Vec::with_capacity(num_levels);
    for i in 0..num_levels {
        let (scale0, ratio0) = nearest_populated(&raw, i);
        let stride_i = stride(i);

        let cap = limits.max_scale() / stride_i as f64;
        let mut scale_range = Interval::new(scale0.lo.min(cap), scale0.hi.min(cap));
        if let Some(prev) = levels.last() {
            scale_range = scale_range.shrink_log_width(prev.scale_range.log_width());
        }

        let band = super::ratio_bounds(scale_range.lo * stride_i as f64, &limits)?;
        let mut ratio_range = ratio0.intersect(&band);
        if let (Some(r), Some(prev)) = (ratio_range.as_mut(), levels.last()) {
            *r = r.shrink_log_width(prev.ratio_range.log_width());
        }
        // Ratios in the band at the top scale fit at every scale of the level.
        // A range that misses it entirely, as inherited ranges can, is pinned
        // to its nearest edge so the level keeps a usable feasible region.
        let top = super::ratio_bounds(scale_range.hi * stride_i as f64, &limits)?;
        let ratio_range = match ratio_range.filter(|r| r.intersect(&top).is_some()) {
            Some(r) => r,
            None => {
                let edge = if ratio_range.unwrap_or(ratio0).hi < top.lo { top.lo } else { top.hi };
                Interval::new(edge, edge)
            }
        };

        let mut anchor_count = params.count_range(i);
        if let Some(prev) = levels.last() {
            anchor_count.max = anchor_count.max.min(prev.anchor_count.max).max(anchor_count.min);
        }

        levels.push(LevelSpace { level: i, stride: stride_i, anchor_count, scale_range, ratio_range });
    }

    SearchSpace::new(limits, params.base_scale, levels)
}

fn nearest_populated(raw: &[Option<(Interval, Interval)>], i: usize) -> (Interval, Interval) {
    (0..raw.len())
        .flat_map(|d| [i.checked_sub(d), Some(i + d)])
        .flatten()
        .find_map(|j| raw.get(j).copied().flatten())
        .expect("at least one level is populated")
}
