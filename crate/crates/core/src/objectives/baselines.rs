use super::{checked_evaluate, Objective};
use crate::engine::{GenerationSummary, Proposer, SearchResult, TrialRecord};
use crate::error::{Error, Result};
use crate::scheduler::PullTrace;
use crate::seed;
use crate::space::{sample_configuration, SearchSpace};

const TAG_CONFIG: u64 = 0x52;
const TAG_TRIAL: u64 = 0x53;

/// How halving ranks the survivors of a rung.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalvingRank {
    /// Mean of all rewards so far (stationary bandits).
    Mean,
    /// Reward at the rung's budget (training curves).
    Latest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HalvingConfig {
    pub eta: usize,
    /// Hyperband brackets; `1` is a single halving run.
    pub brackets: usize,
    /// Per-configuration budget of the first rung of the most aggressive bracket.
    pub min_budget: usize,
}

impl Default for HalvingConfig {
    fn default() -> Self {
        Self { eta: 3, brackets: 3, min_budget: 1 }
    }
}

/// `(configurations, cumulative budget per configuration)` for each rung:
/// `n_i = max(1, floor(n / eta^i))`, `r_i = min_budget * eta^i`.
pub fn halving_schedule(n: usize, eta: usize, rungs: usize, min_budget: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(rungs);
    let (mut div, mut r) = (1usize, min_budget);
    for _ in 0..rungs {
        out.push(((n / div).max(1), r));
        div = div.saturating_mul(eta);
        r = r.saturating_mul(eta);
    }
    out
}

/// Budget consumed by a schedule when survivors continue from their
/// previous budget: `sum_i n_i * (r_i - r_{i-1})`.
pub fn schedule_budget(schedule: &[(usize, usize)]) -> usize {
    let mut prev = 0;
    schedule
        .iter()
        .map(|&(n, r)| {
            let d = n * (r - prev);
            prev = r;
            d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalvingRun {
    /// Arm of every pull, in order.
    pub trace: PullTrace,
    /// Rewards per arm.
    pub rewards: Vec<Vec<f64>>,
    /// Arms alive at the start of each rung.
    pub rungs: Vec<Vec<usize>>,
    pub winner: usize,
}

impl HalvingRun {
    pub fn consumed(&self) -> usize {
        self.trace.len()
    }
}

struct Pool<F> {
    rewards: Vec<Vec<f64>>,
    trace: Vec<usize>,
    oracle: F,
}

impl<F: FnMut(usize, usize) -> f64> Pool<F> {
    fn pull(&mut self, arm: usize) {
        let t = self.rewards[arm].len() + 1;
        let r = (self.oracle)(arm, t);
        self.rewards[arm].push(r);
        self.trace.push(arm);
    }

    fn score(&self, arm: usize, rank: HalvingRank) -> f64 {
        let r = &self.rewards[arm];
        let s = match rank {
            HalvingRank::Mean => r.iter().sum::<f64>() / r.len() as f64,
            HalvingRank::Latest => r.last().copied().unwrap_or(f64::NEG_INFINITY),
        };
        if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            s
        }
    }

    /// Top `keep` arms by score, ties to the lower index, returned in index order.
    fn select(&self, arms: &[usize], keep: usize, rank: HalvingRank) -> Vec<usize> {
        let mut ranked = arms.to_vec();
        ranked.sort_by(|&a, &b| self.score(b, rank).total_cmp(&self.score(a, rank)).then(a.cmp(&b)));
        ranked.truncate(keep.max(1));
        ranked.sort_unstable();
        ranked
    }
}

fn check_eta(eta: usize) -> Result<()> {
    if eta < 2 {
        return Err(Error::InvalidInput(format!("eta must be at least 2, got {eta}")));
    }
    Ok(())
}

/// One halving run over arms `0..n`. `oracle(arm, budget_index)` returns the
/// reward of the arm's `budget_index`-th unit; failures should be `-inf`.
pub fn successive_halving<F>(
    n: usize,
    eta: usize,
    rungs: usize,
    min_budget: usize,
    rank: HalvingRank,
    oracle: F,
) -> Result<HalvingRun>
where
    F: FnMut(usize, usize) -> f64,
{
    check_eta(eta)?;
    if n == 0 || rungs == 0 || min_budget == 0 {
        return Err(Error::InvalidInput("halving needs n, rungs and min_budget >= 1".into()));
    }
    let schedule = halving_schedule(n, eta, rungs, min_budget);
    let mut pool = Pool { rewards: vec![Vec::new(); n], trace: Vec::new(), oracle };
    let mut alive: Vec<usize> = (0..n).collect();
    let mut rungs_seen = Vec::with_capacity(rungs);
    for (i, &(_, budget)) in schedule.iter().enumerate() {
        for &arm in &alive {
            while pool.rewards[arm].len() < budget {
                pool.pull(arm);
            }
        }
        rungs_seen.push(alive.clone());
        let keep = schedule.get(i + 1).map_or(1, |s| s.0);
        alive = pool.select(&alive, keep, rank);
    }
    Ok(HalvingRun { trace: PullTrace(pool.trace), rewards: pool.rewards, rungs: rungs_seen, winner: alive[0] })
}

/// Halving over a fixed pool of `k` arms with exactly `horizon` pulls:
/// rungs start at one unit per arm and continue until one arm is left,
/// which then receives the remaining budget. If the horizon runs out
/// first, the best arm of the interrupted rung wins.
pub fn halving_pool<F>(k: usize, horizon: usize, eta: usize, rank: HalvingRank, oracle: F) -> Result<HalvingRun>
where
    F: FnMut(usize, usize) -> f64,
{
    check_eta(eta)?;
    if k == 0 {
        return Err(Error::InvalidInput("halving needs at least one arm".into()));
    }
    let mut rungs = 1;
    while k / eta.pow(rungs as u32 - 1) > 1 {
        rungs += 1;
    }
    let schedule = halving_schedule(k, eta, rungs, 1);
    let mut pool = Pool { rewards: vec![Vec::new(); k], trace: Vec::with_capacity(horizon), oracle };
    let mut alive: Vec<usize> = (0..k).collect();
    let mut rungs_seen = Vec::new();
    'rungs: for (i, &(_, budget)) in schedule.iter().enumerate() {
        rungs_seen.push(alive.clone());
        for &arm in &alive {
            while pool.rewards[arm].len() < budget {
                if pool.trace.len() == horizon {
                    let tried: Vec<usize> = alive.iter().copied().filter(|&a| !pool.rewards[a].is_empty()).collect();
                    alive = pool.select(if tried.is_empty() { &alive } else { &tried }, 1, rank);
                    break 'rungs;
                }
                pool.pull(arm);
            }
        }
        let keep = schedule.get(i + 1).map_or(1, |s| s.0);
        alive = pool.select(&alive, keep, rank);
    }
    let winner = alive[0];
    while pool.trace.len() < horizon {
        pool.pull(winner);
    }
    Ok(HalvingRun { trace: PullTrace(pool.trace), rewards: pool.rewards, rungs: rungs_seen, winner })
}

fn evaluate_into<O: Objective + ?Sized>(objective: &O, trial: &mut TrialRecord) -> f64 {
    let t = trial.rewards.len() + 1;
    let r = if trial.failed() {
        f64::NEG_INFINITY
    } else {
        match checked_evaluate(objective, &trial.config, t, trial.seed) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("trial {} failed: {e}", trial.trial_id);
                trial.error = Some(e.to_string());
                f64::NEG_INFINITY
            }
        }
    };
    trial.rewards.push(r);
    trial.timestamps.push(crate::engine::trial_log::now_millis());
    r
}

fn summary(generation: usize, trials: &[TrialRecord], incumbent: &mut f64) -> GenerationSummary {
    let generation_best = trials.iter().filter_map(TrialRecord::best_reward).fold(f64::NEG_INFINITY, f64::max);
    *incumbent = incumbent.max(generation_best);
    GenerationSummary {
        generation,
        trial_ids: trials.iter().map(|t| t.trial_id).collect(),
        pulls: trials.iter().map(|t| t.rewards.len()).collect(),
        model_fitted: false,
        generation_best,
        incumbent_reward: *incumbent,
    }
}

fn new_trial(space: &SearchSpace, seed: u64, id: usize, generation: usize) -> Result<TrialRecord> {
    let config = sample_configuration(space, seed::derive(seed, &[TAG_CONFIG, id as u64]))?;
    Ok(TrialRecord::new(id, generation, config, Proposer::Prior, seed::derive(seed, &[TAG_TRIAL, id as u64])))
}

/// Independent prior samples, one budget unit each.
pub fn random_search_policy<O: Objective + ?Sized>(
    space: &SearchSpace,
    objective: &O,
    total_budget: usize,
    seed: u64,
) -> Result<SearchResult> {
    if total_budget == 0 {
        return Err(Error::InvalidInput("random search needs a budget of at least 1".into()));
    }
    space.validate()?;
    let mut trials = Vec::with_capacity(total_budget);
    for id in 0..total_budget {
        let mut trial = new_trial(space, seed, id, 0)?;
        evaluate_into(objective, &mut trial);
        trials.push(trial);
    }
    let mut incumbent = f64::NEG_INFINITY;
    let gen = summary(0, &trials, &mut incumbent);
    SearchResult::from_trials(trials, vec![gen], total_budget)
}

/// Hyperband: bracket `s = brackets-1, …, 0` samples
/// `ceil(brackets / (s+1) * eta^s)` prior configurations and halves them
/// over `s+1` rungs starting at `min_budget * eta^(brackets-1-s)` units.
/// Each bracket is one generation of the result.
pub fn successive_halving_policy<O: Objective + ?Sized>(
    space: &SearchSpace,
    objective: &O,
    config: &HalvingConfig,
    seed: u64,
) -> Result<SearchResult> {
    check_eta(config.eta)?;
    if config.brackets == 0 || config.min_budget == 0 {
        return Err(Error::InvalidInput("brackets and min_budget must be at least 1".into()));
    }
    space.validate()?;
    let s_max = config.brackets - 1;
    let mut trials: Vec<TrialRecord> = Vec::new();
    let mut gens = Vec::new();
    let mut incumbent = f64::NEG_INFINITY;
    let mut evaluations = 0;
    for (bracket, s) in (0..=s_max).rev().enumerate() {
        let eta_s = config.eta.pow(s as u32);
        let n = (config.brackets * eta_s).div_ceil(s + 1);
        let r0 = config.min_budget * config.eta.pow((s_max - s) as u32);
        let first = trials.len();
        for i in 0..n {
            trials.push(new_trial(space, seed, first + i, bracket)?);
        }
        let run = {
            let pool = &mut trials[first..];
            successive_halving(n, config.eta, s + 1, r0, HalvingRank::Latest, |arm, _t| evaluate_into(objective, &mut pool[arm]))?
        };
        evaluations += run.consumed();
        gens.push(summary(bracket, &trials[first..], &mut incumbent));
    }
    SearchResult::from_trials(trials, gens, evaluations)
}
