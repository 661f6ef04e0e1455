use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DimKind;

/// Additive smoothing of the categorical kernel.
pub const CATEGORICAL_SMOOTHING: f64 = 0.1;

/// Relative bandwidth floor, as a fraction of the dimension's range.
const BANDWIDTH_FLOOR: f64 = 1e-3;

/// Product-kernel density estimator: Gaussian kernels on continuous
/// dimensions, smoothed indicator kernels on categorical ones.
///
/// The categorical kernel centred at `c_i` puts mass
/// `(1[c == c_i] + s) / (1 + s * m)` on each of the `m` categories.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    points: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
    kinds: Vec<DimKind>,
}

impl Kde {
    /// Fits bandwidths with the Scott-type rule `sd * n^(-1/(d+4))`,
    /// floored at a thousandth of the dimension's range.
    pub fn fit(points: Vec<Vec<f64>>, kinds: Vec<DimKind>) -> Self {
        assert!(!points.is_empty(), "a density needs at least one point");
        let n = points.len();
        let d = kinds.len();
        let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
        let bandwidths = kinds
            .iter()
            .enumerate()
            .map(|(j, kind)| match *kind {
                DimKind::Categorical { .. } => 0.0,
                DimKind::Continuous { lo, hi } => {
                    let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
                    let sd = if n > 1 {
                        (points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                    } else {
                        0.0
                    };
                    let floor = if hi > lo { BANDWIDTH_FLOOR * (hi - lo) } else { BANDWIDTH_FLOOR };
                    (sd * factor).max(floor)
                }
            })
            .collect();
        Self { points, bandwidths, kinds }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// Per-dimension bandwidths; zero for categorical dimensions.
    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn kinds(&self) -> &[DimKind] {
        &self.kinds
    }

    fn log_kernel(&self, center: &[f64], x: &[f64]) -> f64 {
        const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
        let mut acc = 0.0;
        for (j, kind) in self.kinds.iter().enumerate() {
            acc += match *kind {
                DimKind::Continuous { .. } => {
                    let h = self.bandwidths[j];
                    let z = (x[j] - center[j]) / h;
                    -0.5 * z * z - h.ln() - LN_SQRT_2PI
                }
                DimKind::Categorical { min, max } => {
                    let m = (max - min + 1) as f64;
                    let hit = if x[j].round() == center[j].round() { 1.0 } else { 0.0 };
                    ((hit + CATEGORICAL_SMOOTHING) / (1.0 + CATEGORICAL_SMOOTHING * m)).ln()
                }
            };
        }
        acc
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self.points.iter().map(|c| self.log_kernel(c, x)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        max + sum.ln() - (self.points.len() as f64).ln()
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Draws one coordinate from the kernel of dimension `dim` centred at `value`.
    pub fn perturb<R: Rng + ?Sized>(&self, value: f64, dim: usize, rng: &mut R) -> f64 {
        match self.kinds[dim] {
            DimKind::Continuous { .. } => {
                let z: f64 = StandardNormal.sample(rng);
                value + self.bandwidths[dim] * z
            }
            DimKind::Categorical { min, max } => {
                let m = (max - min + 1) as f64;
                let keep = 1.0 / (1.0 + CATEGORICAL_SMOOTHING * m);
                if rng.random::<f64>() < keep {
                    value.round()
                } else {
                    rng.random_range(min..=max) as f64
                }
            }
        }
    }

    /// Draws from the kernel centred at point `i`.
    pub fn sample_at<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Vec<f64> {
        let center = &self.points[i];
        (0..self.kinds.len()).map(|j| self.perturb(center[j], j, rng)).collect()
    }

    /// Draws from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let i = rng.random_range(0..self.points.len());
        self.sample_at(i, rng)
    }
}
