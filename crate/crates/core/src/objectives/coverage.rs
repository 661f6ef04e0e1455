use super::Objective;
use crate::error::{Error, ObjectiveError, Result};
use crate::space::{assign_level, box_to_scale_ratio, AnchorConfiguration, BoxRecord, SearchSpace};

/// IoU of two rectangles sharing a center.
pub fn centered_iou(w_a: f64, h_a: f64, w_b: f64, h_b: f64) -> f64 {
    let inter = w_a.min(w_b) * h_a.min(h_b);
    inter / (w_a * h_a + w_b * h_b - inter)
}

/// Maps boxes to pyramid levels and basic scales to pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAssigner {
    pub base_scale: f64,
    pub strides: Vec<u32>,
}

impl LevelAssigner {
    pub fn from_space(space: &SearchSpace) -> Self {
        Self { base_scale: space.base_scale, strides: space.levels.iter().map(|l| l.stride).collect() }
    }

    pub fn num_levels(&self) -> usize {
        self.strides.len()
    }
}

/// Mean over boxes of the best centered IoU with an anchor of the box's level.
///
/// Anchor pixel size is `basic scale * stride` with
/// `width = scale / sqrt(ratio)`, `height = scale * sqrt(ratio)`.
pub fn coverage_reward(config: &AnchorConfiguration, boxes: &[BoxRecord], assigner: &LevelAssigner) -> Result<f64> {
    if boxes.is_empty() {
        return Err(Error::InvalidInput("coverage needs at least one box".into()));
    }
    if config.levels.len() != assigner.num_levels() {
        return Err(Error::ConfigMismatch(format!(
            "configuration has {} levels, assigner has {}",
            config.levels.len(),
            assigner.num_levels()
        )));
    }
    // Pixel sizes per level, computed once.
    let anchors: Vec<Vec<(f64, f64)>> = config
        .levels
        .iter()
        .zip(&assigner.strides)
        .map(|(pairs, &s)| {
            pairs
                .iter()
                .map(|p| {
                    let px = p.scaled(s as f64);
                    (px.width(), px.height())
                })
                .collect()
        })
        .collect();
    let mut total = 0.0;
    for b in boxes {
        let lvl = assign_level(&box_to_scale_ratio(b)?, assigner.num_levels(), assigner.base_scale);
        let best = anchors[lvl]
            .iter()
            .map(|&(w, h)| centered_iou(w, h, b.width, b.height))
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / boxes.len() as f64)
}

/// Deterministic anchor-coverage objective; ignores budget index and seed.
#[derive(Debug, Clone)]
pub struct CoverageObjective {
    boxes: Vec<BoxRecord>,
    assigner: LevelAssigner,
    name: String,
}

impl CoverageObjective {
    pub fn new(boxes: Vec<BoxRecord>, space: &SearchSpace, name: impl Into<String>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::InvalidInput("coverage needs at least one box".into()));
        }
        Ok(Self { boxes, assigner: LevelAssigner::from_space(space), name: name.into() })
    }

    pub fn boxes(&self) -> &[BoxRecord] {
        &self.boxes
    }
}

impl Objective for CoverageObjective {
    fn evaluate(&self, config: &AnchorConfiguration, _budget_index: usize, _seed: u64) -> Result<f64, ObjectiveError> {
        coverage_reward(config, &self.boxes, &self.assigner).map_err(|e| ObjectiveError::Failed(e.to_string()))
    }

    fn describe(&self) -> String {
        format!("coverage:{}:{}", self.name, self.boxes.len())
    }
}
