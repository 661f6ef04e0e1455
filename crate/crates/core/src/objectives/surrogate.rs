use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use super::coverage::{coverage_reward, LevelAssigner};
use super::Objective;
use crate::error::{Error, ObjectiveError, Result};
use crate::seed;
use crate::space::{read_coco, AnchorConfiguration, BoxRecord, SearchSpace};

type ConfigFn = Box<dyn Fn(&AnchorConfiguration) -> Result<f64, ObjectiveError> + Send + Sync>;

/// `asymptote * (1 - exp(-t / tau))` plus `N(0, sigma)` noise drawn from `noise_seed`.
pub fn surrogate_reward(asymptote: f64, tau: f64, t: usize, sigma: f64, noise_seed: u64) -> f64 {
    let mean = asymptote * (1.0 - (-(t as f64) / tau).exp());
    if sigma == 0.0 {
        return mean;
    }
    let z: f64 = seed::rng(noise_seed).sample(StandardNormal);
    mean + sigma * z
}

/// Parameter file for [`SurrogateObjective::from_spec`].
///
/// ```json
/// {"boxes": "hidden.json", "tau_min": 1.0, "ref_scale": 32.0, "sigma": 0.01}
/// ```
///
/// `boxes` is a COCO-style annotation file, relative to the parameter file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    pub boxes: String,
    #[serde(default = "one")]
    pub tau_min: f64,
    #[serde(default = "thirty_two")]
    pub ref_scale: f64,
    #[serde(default)]
    pub sigma: f64,
}

fn one() -> f64 {
    1.0
}

fn thirty_two() -> f64 {
    32.0
}

/// Budget-dependent synthetic training curve per configuration.
pub struct SurrogateObjective {
    asymptote: ConfigFn,
    tau: ConfigFn,
    sigma: f64,
    name: String,
}

impl SurrogateObjective {
    pub fn new<A, T>(name: impl Into<String>, asymptote: A, tau: T, sigma: f64) -> Result<Self>
    where
        A: Fn(&AnchorConfiguration) -> Result<f64, ObjectiveError> + Send + Sync + 'static,
        T: Fn(&AnchorConfiguration) -> Result<f64, ObjectiveError> + Send + Sync + 'static,
    {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("surrogate sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { asymptote: Box::new(asymptote), tau: Box::new(tau), sigma, name: name.into() })
    }

    /// Fixed pool: each configuration gets an explicit `(asymptote, tau)`.
    /// Configurations outside the table fail to evaluate.
    pub fn from_table(name: impl Into<String>, entries: &[(AnchorConfiguration, f64, f64)], sigma: f64) -> Result<Self> {
        let mut table = HashMap::new();
        for (config, a, tau) in entries {
            check_params(*a, *tau).map_err(|e| Error::InvalidInput(e.to_string()))?;
            table.insert(config.fingerprint(), (*a, *tau));
        }
        let table = std::sync::Arc::new(table);
        let lookup = move |c: &AnchorConfiguration| {
            table.get(&c.fingerprint()).copied().ok_or_else(|| ObjectiveError::Failed("configuration not in table".into()))
        };
        let lookup2 = lookup.clone();
        Self::new(name, move |c| lookup(c).map(|p| p.0), move |c| lookup2(c).map(|p| p.1), sigma)
    }

    /// Asymptote is the coverage of `hidden` boxes; configurations whose
    /// smallest anchor (in pixels) is below `ref_scale` converge slower:
    /// `tau = tau_min * max(1, ref_scale / smallest)`.
    pub fn from_coverage(
        name: impl Into<String>,
        hidden: Vec<BoxRecord>,
        space: &SearchSpace,
        tau_min: f64,
        ref_scale: f64,
        sigma: f64,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidInput("surrogate needs at least one hidden box".into()));
        }
        if !(tau_min > 0.0 && tau_min.is_finite()) || !(ref_scale > 0.0 && ref_scale.is_finite()) {
            return Err(Error::InvalidInput("tau_min and ref_scale must be positive".into()));
        }
        let assigner = LevelAssigner::from_space(space);
        let strides = assigner.strides.clone();
        let asymptote = move |c: &AnchorConfiguration| {
            coverage_reward(c, &hidden, &assigner).map_err(|e| ObjectiveError::Failed(e.to_string()))
        };
        let tau = move |c: &AnchorConfiguration| {
            let smallest = c
                .levels
                .iter()
                .zip(&strides)
                .flat_map(|(pairs, &s)| pairs.iter().map(move |p| p.scale * s as f64))
                .fold(f64::INFINITY, f64::min);
            if !smallest.is_finite() {
                return Err(ObjectiveError::Failed("configuration has no anchors".into()));
            }
            Ok(tau_min * (ref_scale / smallest).max(1.0))
        };
        Self::new(name, asymptote, tau, sigma)
    }

    /// Loads a [`SurrogateSpec`] file.
    pub fn from_spec_file(path: &Path, space: &SearchSpace) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: SurrogateSpec = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let boxes_path = path.parent().unwrap_or(Path::new(".")).join(&spec.boxes);
        let hidden = read_coco(&boxes_path)?;
        let name = format!("surrogate:{}:{}:{}:{}:{}", spec.boxes, hidden.len(), spec.tau_min, spec.ref_scale, spec.sigma);
        Self::from_coverage(name, hidden, space, spec.tau_min, spec.ref_scale, spec.sigma)
    }

    pub fn asymptote(&self, config: &AnchorConfiguration) -> Result<f64, ObjectiveError> {
        (self.asymptote)(config)
    }

    pub fn tau(&self, config: &AnchorConfiguration) -> Result<f64, ObjectiveError> {
        (self.tau)(config)
    }
}

fn check_params(a: f64, tau: f64) -> Result<(), ObjectiveError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(ObjectiveError::Failed(format!("asymptote {a} outside [0, 1]")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ObjectiveError::Failed(format!("time constant {tau} must be positive")));
    }
    Ok(())
}

impl Objective for SurrogateObjective {
    fn evaluate(&self, config: &AnchorConfiguration, budget_index: usize, seed: u64) -> Result<f64, ObjectiveError> {
        if budget_index == 0 {
            return Err(ObjectiveError::Failed("budget index starts at 1".into()));
        }
        let a = self.asymptote(config)?;
        let tau = self.tau(config)?;
        check_params(a, tau)?;
        let noise_seed = seed::derive(seed, &[config.fingerprint_u64(), budget_index as u64]);
        Ok(surrogate_reward(a, tau, budget_index, self.sigma, noise_seed))
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ScaleRatio;

    fn config(scale: f64) -> AnchorConfiguration {
        AnchorConfiguration::new(vec![vec![ScaleRatio { scale, ratio: 1.0 }]])
    }

    #[test]
    fn saturates() {
        let tau = 3.0;
        let r = surrogate_reward(0.7, tau, 60, 0.0, 0);
        assert!((r - 0.7).abs() < 1e-6);
    }

    #[test]
    fn one_time_constant() {
        let r = surrogate_reward(0.8, 4.0, 4, 0.0, 0);
        assert!((r - 0.8 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((r / 0.8 - 0.6321).abs() < 1e-4);
    }

    #[test]
    fn deterministic_noise() {
        let obj = SurrogateObjective::from_table("t", &[(config(2.0), 0.5, 2.0)], 0.1).unwrap();
        let a = obj.evaluate(&config(2.0), 3, 11).unwrap();
        assert_eq!(a, obj.evaluate(&config(2.0), 3, 11).unwrap());
        assert_ne!(a, obj.evaluate(&config(2.0), 3, 12).unwrap());
        assert_ne!(a, obj.evaluate(&config(2.0), 4, 11).unwrap());
        assert!(obj.evaluate(&config(3.0), 1, 0).is_err());
    }

    #[test]
    fn noise_has_requested_spread() {
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|i| surrogate_reward(0.0, 1.0, 1, 0.5, i)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02);
        assert!((var.sqrt() - 0.5).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SurrogateObjective::from_table("t", &[(config(2.0), 1.5, 2.0)], 0.0).is_err());
        assert!(SurrogateObjective::from_table("t", &[(config(2.0), 0.5, 0.0)], 0.0).is_err());
        assert!(SurrogateObjective::from_table("t", &[], -1.0).is_err());
    }

    #[test]
    fn small_anchors_converge_slower() {
        use crate::space::{CountRange, GlobalLimits, Interval, LevelSpace};
        let space = SearchSpace::new(
            GlobalLimits::new(1000.0, 1000.0).unwrap(),
            32.0,
            vec![LevelSpace {
                level: 0,
                stride: 4,
                anchor_count: CountRange { min: 1, max: 1 },
                scale_range: Interval::new(1.0, 20.0),
                ratio_range: Interval::new(0.5, 2.0),
            }],
        )
        .unwrap();
        let hidden = vec![BoxRecord { width: 20.0, height: 20.0, image_id: 0 }];
        let obj = SurrogateObjective::from_coverage("s", hidden, &space, 2.0, 32.0, 0.0).unwrap();
        // 2 * 4 = 8 px is a quarter of the reference scale.
        assert!((obj.tau(&config(2.0)).unwrap() - 8.0).abs() < 1e-12);
        assert!((obj.tau(&config(16.0)).unwrap() - 2.0).abs() < 1e-12);
        assert!((obj.asymptote(&config(5.0)).unwrap() - 1.0).abs() < 1e-12);
    }
}
