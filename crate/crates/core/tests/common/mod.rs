//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use aabo_core::seed;
use aabo_core::space::{build_space, SpaceParams};
use aabo_core::{BoxRecord, GlobalLimits, SearchSpace};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const IMAGE_W: f64 = 1333.0;
pub const IMAGE_H: f64 = 800.0;

/// Box sizes roughly like a detection dataset: log-normal scale with many
/// small objects, log-normal aspect ratio around 1.
pub fn detection_boxes(n: usize, seed: u64) -> Vec<BoxRecord> {
    let mut rng = seed::rng(seed);
    let scale: Normal<f64> = Normal::new(60f64.ln(), 0.9).unwrap();
    let ratio: Normal<f64> = Normal::new(0.0, 0.5).unwrap();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = scale.sample(&mut rng).exp().clamp(4.0, 700.0);
        let r = ratio.sample(&mut rng).exp();
        let (w, h) = (s / r.sqrt(), s * r.sqrt());
        if w <= IMAGE_W && h <= IMAGE_H {
            out.push(BoxRecord { width: w, height: h, image_id: rng.random_range(0..100) });
        }
    }
    out
}

pub fn five_level_space(boxes: &[BoxRecord]) -> SearchSpace {
    build_space(boxes, 5, GlobalLimits::new(IMAGE_W, IMAGE_H).unwrap(), &SpaceParams::default()).unwrap()
}
