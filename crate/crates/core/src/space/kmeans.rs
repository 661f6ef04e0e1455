use rand::Rng;

use super::{assign_level, box_to_scale_ratio, AnchorConfiguration, BoxRecord, ScaleRatio, SearchSpace};
use crate::error::{Error, Result};
use crate::seed;

const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<ScaleRatio>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub wss_history: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: [f64; 2], centers: &[[f64; 2]]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(p, *c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's k-means over `(ln scale, ln ratio)` with k-means++ seeding.
pub fn kmeans(points: &[ScaleRatio], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let pts: Vec<[f64; 2]> = points.iter().map(|p| [p.scale.ln(), p.ratio.ln()]).collect();
    let mut distinct = pts.clone();
    distinct.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::InvalidInput(format!(
            "k-means needs at least {k} distinct boxes, got {}",
            distinct.len()
        )));
    }

    let mut rng = seed::rng(seed);
    let mut centers = vec![distinct[rng.random_range(0..distinct.len())]];
    while centers.len() < k {
        let weights: Vec<f64> = distinct.iter().map(|p| nearest(*p, &centers).1).collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).expect("distinct points remain");
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 && target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        centers.push(distinct[pick]);
    }

    let mut assignments = vec![usize::MAX; pts.len()];
    let mut wss_history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut wss = 0.0;
        for (p, a) in pts.iter().zip(assignments.iter_mut()) {
            let (c, d) = nearest(*p, &centers);
            wss += d;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        wss_history.push(wss);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0, 0.0, 0.0]; k];
        for (p, &a) in pts.iter().zip(&assignments) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sums[a][2] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
    }

    Ok(KMeansResult {
        centers: centers.iter().map(|c| ScaleRatio { scale: c[0].exp(), ratio: c[1].exp() }).collect(),
        assignments,
        wss_history,
        iterations,
    })
}

/// K-means anchor shapes fitted to ground-truth boxes.
pub fn kmeans_anchors(boxes: &[BoxRecord], k: usize, seed: u64) -> Result<Vec<ScaleRatio>> {
    let points = boxes.iter().map(box_to_scale_ratio).collect::<Result<Vec<_>>>()?;
    Ok(kmeans(&points, k, seed)?.centers)
}

/// Per-level k-means baseline: each level gets as many clusters as its
/// count maximum allows, fitted to the boxes assigned to it and clamped
/// into the level's feasible region.
pub fn kmeans_configuration(boxes: &[BoxRecord], space: &SearchSpace, seed: u64) -> Result<AnchorConfiguration> {
    let mut per_level: Vec<Vec<ScaleRatio>> = vec![Vec::new(); space.num_levels()];
    for b in boxes {
        let sr = box_to_scale_ratio(b)?;
        let lvl = assign_level(&sr, space.num_levels(), space.base_scale);
        per_level[lvl].push(sr.scaled(1.0 / space.levels[lvl].stride as f64));
    }
    let mut levels = Vec::with_capacity(space.num_levels());
    for (i, (level, pts)) in space.levels.iter().zip(&per_level).enumerate() {
        let anchors = if pts.is_empty() {
            // Nothing to fit: fall back to the log-midpoint shape.
            let mid = |r: super::Interval| (r.lo * r.hi).sqrt();
            vec![ScaleRatio { scale: mid(level.scale_range), ratio: mid(level.ratio_range) }; level.anchor_count.min as usize]
        } else {
            let mut distinct = pts.clone();
            distinct.sort_by(|a, b| a.scale.total_cmp(&b.scale).then(a.ratio.total_cmp(&b.ratio)));
            distinct.dedup();
            let k = (level.anchor_count.max as usize).min(distinct.len());
            let mut centers = kmeans(pts, k, seed::derive(seed, &[i as u64]))?.centers;
            while centers.len() < level.anchor_count.min as usize {
                centers.push(centers[0]);
            }
            centers
        };
        let clamped = anchors
            .into_iter()
            .map(|p| {
                let scale = level.scale_range.clamp(p.scale);
                let band = super::ratio_bounds(scale * level.stride as f64, &space.limits)?;
                let ratio = band.clamp(level.ratio_range.clamp(p.ratio));
                Ok(ScaleRatio { scale, ratio })
            })
            .collect::<Result<Vec<_>>>()?;
        levels.push(clamped);
    }
    let config = AnchorConfiguration::new(levels);
    config.validate(space)?;
    Ok(config)
}
