//! Shared inputs for the benchmarks.

use aabo_core::density::{encode, Observation};
use aabo_core::objectives::CoverageObjective;
use aabo_core::space::{build_space, sample_configuration, SpaceParams};
use aabo_core::{seed, BoxRecord, GlobalLimits, SearchSpace};
use rand::Rng;

/// Log-uniform box sizes in a 1333x800 image.
pub fn boxes(n: usize, seed: u64) -> Vec<BoxRecord> {
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = rng.random_range(6f64.ln()..500f64.ln()).exp();
        let r = rng.random_range(0.3f64.ln()..3f64.ln()).exp();
        let (w, h) = (s / r.sqrt(), s * r.sqrt());
        if w <= 1333.0 && h <= 800.0 {
            out.push(BoxRecord { width: w, height: h, image_id: out.len() as u64 });
        }
    }
    out
}

pub fn space(boxes: &[BoxRecord]) -> SearchSpace {
    build_space(boxes, 5, GlobalLimits::new(1333.0, 800.0).unwrap(), &SpaceParams::default()).unwrap()
}

pub fn coverage(boxes: &[BoxRecord], space: &SearchSpace) -> CoverageObjective {
    CoverageObjective::new(boxes.to_vec(), space, "bench").unwrap()
}

/// `n` prior samples scored by anchor count, enough to fit a model.
pub fn observations(space: &SearchSpace, n: usize) -> Vec<Observation> {
    (0..n as u64)
        .map(|i| {
            let c = sample_configuration(space, i).unwrap();
            Observation { x: encode(&c, space).unwrap(), y: -(c.num_anchors() as f64) }
        })
        .collect()
}
