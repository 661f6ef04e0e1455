//! Stochastic bandit arms and Monte-Carlo regret simulation.
//!
//! Arm spec file:
//!
//! ```json
//! {"arms": [{"dist": "gaussian", "mu": 0.5, "sigma": 1.0}, {"dist": "bernoulli", "p": 0.3}]}
//! ```

use std::convert::Infallible;
use std::path::Path;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::baselines::{halving_pool, HalvingRank};
use sha2::{Digest, Sha256};

use crate::engine::trial_log::{Header, LogKind, LogWriter, PullLine, Record, LOG_SCHEMA};
use crate::error::{Error, Result};
use crate::scheduler::{self, PullTrace};
use crate::seed;

const TAG_STREAM: u64 = 0x5354;
const TAG_POLICY: u64 = 0x504f;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArmSpec {
    Gaussian {
        mu: f64,
        #[serde(default = "unit")]
        sigma: f64,
    },
    Bernoulli {
        p: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl ArmSpec {
    pub fn mean(&self) -> f64 {
        match *self {
            ArmSpec::Gaussian { mu, .. } => mu,
            ArmSpec::Bernoulli { p } => p,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ArmSpec::Gaussian { mu, sigma } if mu.is_finite() && sigma.is_finite() && sigma >= 0.0 => Ok(()),
            ArmSpec::Bernoulli { p } if (0.0..=1.0).contains(&p) => Ok(()),
            other => Err(Error::InvalidInput(format!("invalid arm {other:?}"))),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ArmSpec::Gaussian { mu, sigma } => Normal::new(mu, sigma).expect("validated").sample(rng),
            ArmSpec::Bernoulli { p } => {
                if Bernoulli::new(p).expect("validated").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditSpec {
    pub arms: Vec<ArmSpec>,
}

impl BanditSpec {
    pub fn new(arms: Vec<ArmSpec>) -> Result<Self> {
        let spec = Self { arms };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("arm spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::InvalidInput("arm spec has no arms".into()));
        }
        self.arms.iter().try_for_each(ArmSpec::validate)
    }

    pub fn means(&self) -> Vec<f64> {
        self.arms.iter().map(ArmSpec::mean).collect()
    }

    /// Index of the largest mean, lowest index on ties.
    pub fn best_arm(&self) -> usize {
        let mus = self.means();
        (0..mus.len()).fold(0, |b, i| if mus[i] > mus[b] { i } else { b })
    }
}

/// Independent reward stream per arm: the `j`-th pull of arm `a` depends
/// only on `(seed, a, j)`, so different policies see the same draws.
pub struct BanditStreams<'a> {
    spec: &'a BanditSpec,
    rngs: Vec<seed::Rng>,
}

impl<'a> BanditStreams<'a> {
    pub fn new(spec: &'a BanditSpec, seed: u64) -> Self {
        let rngs = (0..spec.arms.len()).map(|a| seed::rng(seed::derive(seed, &[TAG_STREAM, a as u64]))).collect();
        Self { spec, rngs }
    }

    pub fn pull(&mut self, arm: usize) -> f64 {
        self.spec.arms[arm].sample(&mut self.rngs[arm])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BanditPolicy {
    Smc,
    Random,
    /// Halving from one pull per arm, `eta = 2`, ranked by mean; the final
    /// survivor receives the rest of the horizon.
    Halving,
}

impl BanditPolicy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Smc => "smc",
            Self::Random => "random",
            Self::Halving => "halving",
        }
    }
}

impl std::str::FromStr for BanditPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smc" => Ok(Self::Smc),
            "random" => Ok(Self::Random),
            "halving" => Ok(Self::Halving),
            _ => Err(Error::InvalidInput(format!("unknown policy {s:?} (expected smc, random or halving)"))),
        }
    }
}

/// One simulated run: arms pulled in order and their rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub trace: PullTrace,
    pub rewards: Vec<f64>,
}

/// Plays `policy` for `horizon` pulls. A single-arm spec is pulled `horizon` times.
pub fn simulate(spec: &BanditSpec, policy: BanditPolicy, horizon: usize, seed: u64) -> Result<SimulationRun> {
    let k = spec.arms.len();
    let mut streams = BanditStreams::new(spec, seed);
    let mut rewards = Vec::with_capacity(horizon);
    let mut oracle = |arm: usize, _t: usize| -> std::result::Result<f64, Infallible> {
        let r = streams.pull(arm);
        rewards.push(r);
        Ok(r)
    };
    let trace = if k == 1 {
        for t in 1..=horizon {
            let _ = oracle(0, t);
        }
        PullTrace(vec![0; horizon])
    } else {
        match policy {
            BanditPolicy::Smc => {
                let run = scheduler::run_policy(k, horizon, seed::derive(seed, &[TAG_POLICY]), oracle)?;
                match run {
                    Ok(run) => run.trace,
                    Err(abort) => match abort.error {},
                }
            }
            BanditPolicy::Random => {
                let mut rng = seed::rng(seed::derive(seed, &[TAG_POLICY]));
                let mut counts = vec![0usize; k];
                let trace = (0..horizon)
                    .map(|_| {
                        let arm = rng.random_range(0..k);
                        counts[arm] += 1;
                        let _ = oracle(arm, counts[arm]);
                        arm
                    })
                    .collect();
                PullTrace(trace)
            }
            BanditPolicy::Halving => {
                let mut oracle = oracle;
                halving_pool(k, horizon, 2, HalvingRank::Mean, |a, t| oracle(a, t).unwrap_or_else(|e| match e {}))?.trace
            }
        }
    };
    Ok(SimulationRun { trace, rewards })
}

/// Writes one simulated run as a `simulation` trial log, so that `report`
/// can compute its regret curve. Each pull is its own line: `trial_id` and
/// `arm` are the arm index, `round` is the pull number and `budget_index`
/// counts that arm's pulls.
pub fn write_simulation_log(spec: &BanditSpec, policy: BanditPolicy, run: &SimulationRun, seed: u64, path: &Path) -> Result<()> {
    let doc = serde_json::json!({ "spec": spec, "policy": policy.name(), "horizon": run.rewards.len() });
    let header = Header {
        schema: LOG_SCHEMA.to_string(),
        kind: LogKind::Simulation,
        config_hash: hex::encode(Sha256::digest(doc.to_string().as_bytes())),
        objective: format!("bandit:{}", policy.name()),
        seed,
        mus: Some(spec.means()),
    };
    let mut writer = LogWriter::create(path)?;
    writer.write(&Record::Header(header))?;
    let mut counts = vec![0usize; spec.arms.len()];
    for (t, (&arm, &reward)) in run.trace.0.iter().zip(&run.rewards).enumerate() {
        counts[arm] += 1;
        writer.write(&Record::Pull(PullLine {
            trial_id: arm,
            generation: 0,
            round: t + 1,
            arm,
            leader: None,
            budget_index: counts[arm],
            config_ref: format!("arm-{arm}"),
            reward: Some(reward),
            error: None,
            seed,
        }))?;
    }
    writer.sync()
}

/// Regret statistics across seeds, one row per pull count `t = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTable {
    pub regret_mean: Vec<f64>,
    pub regret_stderr: Vec<f64>,
    /// Fraction of the first `t` pulls spent on the best arm, averaged over seeds.
    pub best_arm_pull_frac: Vec<f64>,
    /// `per_seed[i][t-1]`: cumulative regret of seed `i` after `t` pulls.
    pub per_seed: Vec<Vec<f64>>,
}

impl RegretTable {
    pub const HEADER: &'static str = "t,regret_mean,regret_stderr,best_arm_pull_frac";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for t in 0..self.regret_mean.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                t + 1,
                self.regret_mean[t],
                self.regret_stderr[t],
                self.best_arm_pull_frac[t]
            ));
        }
        out
    }

    /// Long format: `seed_index,t,regret`.
    pub fn per_seed_csv(&self) -> String {
        let mut out = String::from("seed_index,t,regret\n");
        for (i, curve) in self.per_seed.iter().enumerate() {
            for (t, r) in curve.iter().enumerate() {
                out.push_str(&format!("{i},{},{r}\n", t + 1));
            }
        }
        out
    }
}

/// Seed `i` of a batch; shared across policies so comparisons are paired.
pub fn run_seed(base_seed: u64, i: usize) -> u64 {
    seed::derive(base_seed, &[i as u64])
}

pub fn regret_table(spec: &BanditSpec, policy: BanditPolicy, horizon: usize, seeds: usize, base_seed: u64) -> Result<RegretTable> {
    if seeds == 0 {
        return Err(Error::InvalidInput("need at least one seed".into()));
    }
    let mus = spec.means();
    let best = spec.best_arm();
    let mut per_seed = Vec::with_capacity(seeds);
    let mut frac_sum = vec![0.0; horizon];
    for i in 0..seeds {
        let run = simulate(spec, policy, horizon, run_seed(base_seed, i))?;
        let mut hits = 0usize;
        for (t, &arm) in run.trace.0.iter().enumerate() {
            hits += usize::from(mus[arm] == mus[best]);
            frac_sum[t] += hits as f64 / (t + 1) as f64;
        }
        per_seed.push(scheduler::regret_curve(&run.trace, &mus)?);
    }
    let n = seeds as f64;
    let mut regret_mean = Vec::with_capacity(horizon);
    let mut regret_stderr = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mean = per_seed.iter().map(|c| c[t]).sum::<f64>() / n;
        let var = if seeds > 1 { per_seed.iter().map(|c| (c[t] - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        regret_mean.push(mean);
        regret_stderr.push((var / n).sqrt());
    }
    let best_arm_pull_frac = frac_sum.into_iter().map(|s| s / n).collect();
    Ok(RegretTable { regret_mean, regret_stderr, best_arm_pull_frac, per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BanditSpec {
        BanditSpec::new(vec![
            ArmSpec::Gaussian { mu: 0.0, sigma: 1.0 },
            ArmSpec::Gaussian { mu: 1.0, sigma: 1.0 },
            ArmSpec::Bernoulli { p: 0.5 },
        ])
        .unwrap()
    }

    #[test]
    fn parses_spec() {
        let s = BanditSpec::from_json(r#"{"arms":[{"dist":"gaussian","mu":0.5},{"dist":"bernoulli","p":0.25}]}"#).unwrap();
        assert_eq!(s.arms[0], ArmSpec::Gaussian { mu: 0.5, sigma: 1.0 });
        assert_eq!(s.means(), vec![0.5, 0.25]);
        for bad in [r#"{"arms":[]}"#, r#"{"arms":[{"dist":"bernoulli","p":2}]}"#, r#"{"arms":[{"dist":"cauchy"}]}"#, "nope"] {
            assert!(BanditSpec::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn streams_are_per_arm() {
        let s = spec();
        let mut a = BanditStreams::new(&s, 9);
        let mut b = BanditStreams::new(&s, 9);
        let x0 = a.pull(0);
        let _ = b.pull(1);
        assert_eq!(x0, b.pull(0));
    }

    #[test]
    fn every_policy_spends_the_horizon() {
        for policy in [BanditPolicy::Smc, BanditPolicy::Random, BanditPolicy::Halving] {
            for horizon in [3, 10, 57] {
                let run = simulate(&spec(), policy, horizon, 4).unwrap();
                assert_eq!(run.trace.len(), horizon);
                assert_eq!(run.rewards.len(), horizon);
                assert_eq!(run, simulate(&spec(), policy, horizon, 4).unwrap());
            }
        }
    }

    #[test]
    fn single_arm_has_zero_regret() {
        let s = BanditSpec::new(vec![ArmSpec::Bernoulli { p: 0.3 }]).unwrap();
        for policy in [BanditPolicy::Smc, BanditPolicy::Random, BanditPolicy::Halving] {
            let t = regret_table(&s, policy, 50, 3, 1).unwrap();
            assert!(t.regret_mean.iter().all(|&r| r == 0.0));
            assert!(t.best_arm_pull_frac.iter().all(|&f| f == 1.0));
        }
    }

    #[test]
    fn table_matches_direct_computation() {
        let s = spec();
        let t = regret_table(&s, BanditPolicy::Random, 20, 2, 3).unwrap();
        let mus = s.means();
        let mut manual = vec![0.0; 20];
        for i in 0..2 {
            let run = simulate(&s, BanditPolicy::Random, 20, run_seed(3, i)).unwrap();
            let mut acc = 0.0;
            for (j, &arm) in run.trace.0.iter().enumerate() {
                acc += 1.0 - mus[arm];
                manual[j] += acc / 2.0;
            }
        }
        for j in 0..20 {
            assert!((t.regret_mean[j] - manual[j]).abs() < 1e-12);
        }
        let csv = t.to_csv();
        assert!(csv.starts_with("t,regret_mean,regret_stderr,best_arm_pull_frac\n1,"));
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn simulation_log_reports_regret() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.jsonl");
        let spec = spec();
        let run = simulate(&spec, BanditPolicy::Smc, 200, run_seed(4, 0)).unwrap();
        write_simulation_log(&spec, BanditPolicy::Smc, &run, 4, &path).unwrap();
        let table = regret_table(&spec, BanditPolicy::Smc, 200, 1, 4).unwrap();
        let report = crate::engine::Report::from_log(&path).unwrap();
        assert_eq!(report.kind, Some(LogKind::Simulation));
        assert_eq!(report.curve.len(), 200);
        for (p, want) in report.curve.iter().zip(&table.per_seed[0]) {
            assert!((p.regret.unwrap() - want).abs() < 1e-9);
        }
        assert!(report.to_csv().starts_with("# curve\nevaluation,generation,trial_id,budget_index,reward,best_so_far,regret\n"));
        let pulls: usize = report.budgets.iter().map(|b| b.pulls).sum();
        assert_eq!(pulls, 200);
    }
}
