//! Sub-sample mean comparisons (SMC).
//!
//! Round 1 evaluates every arm once. In every later round the arm with the
//! most budget is the leader; each other arm receives one more budget unit
//! if it is "better" than the leader, and the leader receives one when no
//! arm is. A challenger `k` is better than the leader `k'` when
//!
//! 1. `n_k < n_k'` and `n_k < c_n`, or
//! 2. `c_n <= n_k < n_k'` and the mean of all of `k`'s rewards is at least
//!    the mean of some window of `n_k` consecutive leader rewards,
//!
//! with `c_n = sqrt(ln n)` over the total number of evaluations `n`.
//!
//! Arms are indexed from 0. Rewards are maximized.

use std::cell::RefCell;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Reward history of one arm, append-only.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Arm {
    rewards: Vec<f64>,
    /// Per window length: running window sum, smallest sum seen, and the
    /// number of rewards scanned. Only used while all rewards are finite.
    #[serde(skip)]
    windows: RefCell<Vec<Option<WindowScan>>>,
}

#[derive(Debug, Clone, Copy)]
struct WindowScan {
    sum: f64,
    min: f64,
    end: usize,
}

impl PartialEq for Arm {
    fn eq(&self, other: &Self) -> bool {
        self.rewards == other.rewards
    }
}

impl Arm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rewards(rewards: Vec<f64>) -> Self {
        Self { rewards, windows: RefCell::default() }
    }

    pub fn pulls(&self) -> usize {
        self.rewards.len()
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn push(&mut self, reward: f64) {
        self.rewards.push(reward);
    }

    /// Mean of the full history; NaN when empty.
    pub fn mean(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }

    /// Smallest mean over all windows of `len` consecutive rewards.
    /// `len` must be in `1..=pulls()`.
    fn min_window_mean(&self, len: usize) -> f64 {
        let rewards = &self.rewards;
        // Leaders keep growing between queries, so extend the previous scan.
        let mut cache = self.windows.borrow_mut();
        if cache.len() <= len {
            cache.resize(len + 1, None);
        }
        let slot = &mut cache[len];
        let from = slot.map_or(0, |s| s.end);
        if rewards[from..].iter().all(|r| r.is_finite()) {
            let scan = slot.get_or_insert_with(|| {
                let sum: f64 = rewards[..len].iter().sum();
                WindowScan { sum, min: sum, end: len }
            });
            for i in scan.end..rewards.len() {
                scan.sum += rewards[i] - rewards[i - len];
                scan.min = scan.min.min(scan.sum);
            }
            scan.end = rewards.len();
            return scan.min / len as f64;
        }
        // Running sums would turn -inf - -inf into NaN.
        *slot = None;
        rewards
            .windows(len)
            .map(|w| w.iter().sum::<f64>() / len as f64)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Mean of `len` rewards starting at 1-based position `start`.
pub fn window_mean(rewards: &[f64], start: usize, len: usize) -> Result<f64> {
    if start == 0 || len == 0 || start + len - 1 > rewards.len() {
        return Err(Error::InvalidInput(format!(
            "window [{start}, {}] is outside 1..={}",
            start + len.saturating_sub(1),
            rewards.len()
        )));
    }
    Ok(rewards[start - 1..start - 1 + len].iter().sum::<f64>() / len as f64)
}

/// The comparison threshold `sqrt(ln n)`, zero for `n < 2`.
pub fn threshold(total: usize) -> f64 {
    if total < 2 {
        0.0
    } else {
        (total as f64).ln().sqrt()
    }
}

/// Whether `challenger` earns a budget unit against `leader`.
pub fn is_better(challenger: &Arm, leader: &Arm, c_n: f64) -> bool {
    let nk = challenger.pulls();
    let nl = leader.pulls();
    if nk >= nl {
        return false;
    }
    let nkf = nk as f64;
    if nkf < c_n {
        return true;
    }
    // nk >= c_n >= 0 here; an arm with no rewards has no mean to compare.
    nk > 0 && challenger.mean() >= leader.min_window_mean(nk)
}

/// Arm ids selected for evaluation, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullTrace(pub Vec<usize>);

impl PullTrace {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub arms: Vec<Arm>,
    /// Round to be planned next; starts at 1.
    pub round: usize,
    pub horizon: usize,
}

impl SchedulerState {
    pub fn new(num_arms: usize, horizon: usize) -> Result<Self> {
        if num_arms < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 arms, got {num_arms}")));
        }
        if horizon < num_arms {
            return Err(Error::InvalidInput(format!("horizon {horizon} is shorter than the {num_arms} arms")));
        }
        Ok(Self { arms: vec![Arm::new(); num_arms], round: 1, horizon })
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn total(&self) -> usize {
        self.arms.iter().map(Arm::pulls).sum()
    }

    pub fn remaining(&self) -> usize {
        self.horizon.saturating_sub(self.total())
    }

    pub fn c_n(&self) -> f64 {
        threshold(self.total())
    }

    /// Arm with the most pulls; ties go to the larger mean, then the lower id.
    pub fn elect_leader(&self) -> usize {
        let mut best = 0;
        for (i, arm) in self.arms.iter().enumerate().skip(1) {
            let b = &self.arms[best];
            let more = arm.pulls() > b.pulls();
            let tie_better = arm.pulls() == b.pulls() && arm.pulls() > 0 && arm.mean() > b.mean();
            if more || tie_better {
                best = i;
            }
        }
        best
    }

    /// The arms to evaluate this round, before horizon truncation.
    ///
    /// Round 1 plans every arm. Later rounds plan every non-leader that is
    /// better than the leader, in id order, or the leader alone.
    pub fn plan_round(&self) -> Vec<usize> {
        if self.round == 1 {
            return (0..self.num_arms()).collect();
        }
        let leader = self.elect_leader();
        let c_n = self.c_n();
        let plan: Vec<usize> = (0..self.num_arms())
            .filter(|&k| k != leader && is_better(&self.arms[k], &self.arms[leader], c_n))
            .collect();
        if plan.is_empty() {
            vec![leader]
        } else {
            plan
        }
    }
}

/// Keeps `plan` when it fits in `remaining`, otherwise a uniformly random
/// subset of size `remaining` in the original order.
pub fn truncate_to_horizon(plan: &[usize], remaining: usize, seed: u64) -> Vec<usize> {
    if plan.len() <= remaining {
        return plan.to_vec();
    }
    let mut rng = seed::rng(seed);
    let mut keep = index::sample(&mut rng, plan.len(), remaining).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| plan[i]).collect()
}

/// One executed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Leader at planning time; `None` in round 1.
    pub leader: Option<usize>,
    /// Total evaluations when the round was planned.
    pub total_before: usize,
    pub c_n: f64,
    /// Arms evaluated, after truncation.
    pub pulls: Vec<usize>,
    pub truncated: bool,
}

/// Stepwise SMC driver: ask for a round, evaluate it, record the rewards.
#[derive(Debug, Clone)]
pub struct SubsampleScheduler {
    state: SchedulerState,
    seed: u64,
    pending: Option<RoundRecord>,
    history: Vec<RoundRecord>,
}

impl SubsampleScheduler {
    pub fn new(num_arms: usize, horizon: usize, seed: u64) -> Result<Self> {
        Ok(Self { state: SchedulerState::new(num_arms, horizon)?, seed, pending: None, history: Vec::new() })
    }

    pub fn state(&self) -> &SchedulerState {
        &self.state
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub fn is_done(&self) -> bool {
        self.state.remaining() == 0
    }

    /// Plans the next round. Returns `None` once the horizon is spent.
    ///
    /// # Panics
    ///
    /// If the previous round has not been completed with [`Self::complete_round`].
    pub fn next_round(&mut self) -> Option<&RoundRecord> {
        assert!(self.pending.is_none(), "previous round not completed");
        if self.is_done() {
            return None;
        }
        let planned = self.state.plan_round();
        let remaining = self.state.remaining();
        let pulls = truncate_to_horizon(&planned, remaining, seed::derive(self.seed, &[self.state.round as u64]));
        self.pending = Some(RoundRecord {
            round: self.state.round,
            leader: (self.state.round > 1).then(|| self.state.elect_leader()),
            total_before: self.state.total(),
            c_n: self.state.c_n(),
            truncated: pulls.len() < planned.len(),
            pulls,
        });
        self.pending.as_ref()
    }

    /// Applies the rewards of the pending round, in plan order.
    pub fn complete_round(&mut self, rewards: &[f64]) -> Result<()> {
        let round = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidInput("no round is pending".into()))?;
        if rewards.len() != round.pulls.len() {
            let n = round.pulls.len();
            self.pending = Some(round);
            return Err(Error::InvalidInput(format!("expected {n} rewards, got {}", rewards.len())));
        }
        for (&arm, &r) in round.pulls.iter().zip(rewards) {
            self.state.arms[arm].push(r);
        }
        self.state.round += 1;
        self.history.push(round);
        Ok(())
    }

    pub fn into_parts(self) -> (SchedulerState, Vec<RoundRecord>) {
        (self.state, self.history)
    }
}

/// Result of a complete policy run.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub trace: PullTrace,
    pub state: SchedulerState,
    pub rounds: Vec<RoundRecord>,
}

/// An oracle failure, with everything evaluated before it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAbort<E> {
    pub trace: PullTrace,
    pub state: SchedulerState,
    pub error: E,
}

/// Runs SMC over `num_arms` arms for `horizon` pulls.
///
/// `oracle(arm, budget_index)` returns the reward of the arm's
/// `budget_index`-th evaluation (1-based). Arms are evaluated in plan order.
pub fn run_policy<E, F>(
    num_arms: usize,
    horizon: usize,
    seed: u64,
    mut oracle: F,
) -> Result<Result<PolicyRun, PolicyAbort<E>>>
where
    F: FnMut(usize, usize) -> std::result::Result<f64, E>,
{
    let mut sched = SubsampleScheduler::new(num_arms, horizon, seed)?;
    let mut trace = Vec::with_capacity(horizon);
    while let Some(round) = sched.next_round() {
        let pulls = round.pulls.clone();
        let mut rewards = Vec::with_capacity(pulls.len());
        for &arm in &pulls {
            let budget_index = sched.state().arms[arm].pulls() + 1;
            match oracle(arm, budget_index) {
                Ok(r) => {
                    rewards.push(r);
                    trace.push(arm);
                }
                Err(error) => {
                    // Keep the completed part of the round.
                    let mut state = sched.state().clone();
                    for (&a, &r) in pulls.iter().zip(&rewards) {
                        state.arms[a].push(r);
                    }
                    return Ok(Err(PolicyAbort { trace: PullTrace(trace), state, error }));
                }
            }
        }
        sched.complete_round(&rewards)?;
    }
    let (state, rounds) = sched.into_parts();
    Ok(Ok(PolicyRun { trace: PullTrace(trace), state, rounds }))
}

/// Cumulative regret `sum_t (mu* - mu[trace_t])`.
pub fn regret(trace: &PullTrace, mus: &[f64]) -> Result<f64> {
    Ok(regret_curve(trace, mus)?.last().copied().unwrap_or(0.0))
}

/// Regret after each prefix of the trace.
pub fn regret_curve(trace: &PullTrace, mus: &[f64]) -> Result<Vec<f64>> {
    let best = mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    trace
        .0
        .iter()
        .map(|&arm| {
            let mu = mus.get(arm).ok_or_else(|| {
                Error::InvalidInput(format!("arm {arm} has no mean (only {} arms)", mus.len()))
            })?;
            acc += best - mu;
            Ok(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn arm(r: &[f64]) -> Arm {
        Arm::from_rewards(r.to_vec())
    }

    #[test]
    fn window_means() {
        assert_eq!(window_mean(&[1.0, 2.0, 3.0], 1, 3).unwrap(), 2.0);
        assert_eq!(window_mean(&[1.0, 2.0, 3.0], 2, 2).unwrap(), 2.5);
        assert_eq!(window_mean(&[5.0], 1, 1).unwrap(), 5.0);
        assert!(window_mean(&[1.0, 2.0], 2, 2).is_err());
        assert!(window_mean(&[1.0, 2.0], 0, 1).is_err());
        assert!(window_mean(&[1.0, 2.0], 1, 0).is_err());
    }

    #[test]
    fn better_conditions() {
        // Condition 1.
        assert!(is_better(&arm(&[0.0]), &arm(&[1.0, 1.0, 1.0]), 2.0));
        // Condition 2: 0.9 beats every leader window of length 2.
        assert!(is_better(&arm(&[0.9, 0.9]), &arm(&[0.5; 4]), 2.0));
        assert!(!is_better(&arm(&[0.4, 0.4]), &arm(&[0.5; 4]), 2.0));
        // Equal budgets never qualify.
        assert!(!is_better(&arm(&[9.0; 3]), &arm(&[0.0; 3]), 0.0));
        // Some window suffices: [0.1, 0.1] is the weak spot of the leader.
        assert!(is_better(&arm(&[0.2, 0.2]), &arm(&[0.9, 0.1, 0.1, 0.9]), 1.0));
    }

    fn brute_force_better(ch: &[f64], ld: &[f64], c_n: f64) -> bool {
        let (nk, nl) = (ch.len(), ld.len());
        let cond1 = nk < nl && (nk as f64) < c_n;
        let cond2 = c_n <= nk as f64
            && nk < nl
            && nk > 0
            && (1..=nl - nk + 1).any(|j| window_mean(ch, 1, nk).unwrap() >= window_mean(ld, j, nk).unwrap());
        cond1 || cond2
    }

    #[test]
    fn better_matches_window_enumeration() {
        let mut rng = seed::rng(11);
        for _ in 0..10_000 {
            let nk = rng.random_range(1..=12);
            let nl = rng.random_range(1..=12);
            // Coarse values make ties common.
            let ch: Vec<f64> = (0..nk).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
            let ld: Vec<f64> = (0..nl).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
            let c_n = threshold(rng.random_range(2..5000));
            assert_eq!(is_better(&arm(&ch), &arm(&ld), c_n), brute_force_better(&ch, &ld, c_n), "{ch:?} vs {ld:?} c_n={c_n}");
        }
    }

    fn state_with(rewards: &[&[f64]], round: usize) -> SchedulerState {
        SchedulerState { arms: rewards.iter().map(|r| arm(r)).collect(), round, horizon: 1000 }
    }

    #[test]
    fn window_scan_follows_a_growing_arm() {
        let mut rng = seed::rng(12);
        let mut grown = Arm::new();
        for step in 0..300 {
            let r = if step == 200 { f64::NEG_INFINITY } else { rng.random_range(-3.0..3.0) };
            grown.push(r);
            let fresh = Arm::from_rewards(grown.rewards().to_vec());
            for len in [1, 2, 5, 17] {
                if len <= grown.pulls() {
                    let (a, b) = (grown.min_window_mean(len), fresh.min_window_mean(len));
                    assert!(a == b || (a.is_nan() && b.is_nan()), "step {step} len {len}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn leader_election() {
        assert_eq!(state_with(&[&[0.0; 5], &[1.0; 3], &[1.0; 3]], 2).elect_leader(), 0);
        assert_eq!(state_with(&[&[0.2; 4], &[0.7; 4]], 2).elect_leader(), 1);
        assert_eq!(state_with(&[&[0.5; 4], &[0.5; 4]], 2).elect_leader(), 0);
    }

    #[test]
    fn plans() {
        // After a uniform first round nobody has fewer pulls than the leader.
        let s = state_with(&[&[0.1], &[0.9], &[0.3], &[0.5], &[0.2]], 2);
        assert_eq!(s.elect_leader(), 1);
        assert_eq!(s.plan_round(), vec![1]);

        let s = SchedulerState { arms: vec![arm(&[0.9; 3]), arm(&[0.0])], round: 5, horizon: 100 };
        assert!(s.c_n() > 1.0);
        assert_eq!(s.plan_round(), vec![1]);

        let s = state_with(&[&[1.0; 10], &[0.1; 4], &[0.2; 5]], 9);
        assert!(s.c_n() <= 4.0);
        assert_eq!(s.plan_round(), vec![0]);
        assert_eq!(state_with(&[&[], &[]], 1).plan_round(), vec![0, 1]);
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_to_horizon(&[0, 1, 2], 5, 0), vec![0, 1, 2]);
        let t = truncate_to_horizon(&[3, 5, 7, 9], 2, 0);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|a| [3, 5, 7, 9].contains(a)) && t[0] < t[1]);
        assert!(truncate_to_horizon(&[1, 2], 0, 0).is_empty());
    }

    #[test]
    fn truncation_is_uniform() {
        let mut counts = [0usize; 4];
        for seed in 0..10_000 {
            for a in truncate_to_horizon(&[0, 1, 2, 3], 2, seed) {
                counts[a] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.5).abs() <= 0.02, "{f}");
        }
    }

    #[test]
    fn smallest_run_pulls_everyone_once() {
        let run = run_policy::<(), _>(2, 2, 0, |_, _| Ok(1.0)).unwrap().unwrap();
        assert_eq!(run.trace, PullTrace(vec![0, 1]));
        assert!(run_policy::<(), _>(1, 5, 0, |_, _| Ok(1.0)).is_err());
        assert!(run_policy::<(), _>(3, 2, 0, |_, _| Ok(1.0)).is_err());
    }

    #[test]
    fn oracle_failure_keeps_partial_trace() {
        let mut calls = 0;
        let out = run_policy(3, 30, 0, |arm, _| {
            calls += 1;
            if calls == 5 {
                Err(format!("arm {arm} broke"))
            } else {
                Ok(arm as f64)
            }
        })
        .unwrap();
        let abort = out.unwrap_err();
        assert_eq!(abort.trace.len(), 4);
        assert_eq!(abort.state.total(), 4);
        assert!(abort.error.contains("broke"));
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret(&PullTrace(vec![0; 7]), &[0.9, 0.5]).unwrap(), 0.0);
        assert!((regret(&PullTrace(vec![1; 5]), &[0.9, 0.5]).unwrap() - 2.0).abs() < 1e-12);
        assert!(regret(&PullTrace(vec![2]), &[0.9, 0.5]).is_err());
        let curve = regret_curve(&PullTrace(vec![1, 0, 2, 1]), &[0.5, 0.1, 0.3]).unwrap();
        assert!(curve.windows(2).all(|w| w[1] >= w[0]) && curve[0] >= 0.0);
    }

    #[test]
    fn budget_index_counts_per_arm() {
        let mut seen = vec![Vec::new(); 3];
        let run = run_policy::<(), _>(3, 40, 1, |arm, t| {
            seen[arm].push(t);
            Ok(0.1 * arm as f64)
        })
        .unwrap()
        .unwrap();
        for (arm, ts) in seen.iter().enumerate() {
            assert_eq!(*ts, (1..=ts.len()).collect::<Vec<_>>());
            assert_eq!(run.state.arms[arm].pulls(), ts.len());
        }
    }
}
