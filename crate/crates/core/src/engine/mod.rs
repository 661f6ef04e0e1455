//! The search loop: propose a pool, spend a generation's budget on it with
//! sub-sample comparisons, refit the density model, repeat.
//!
//! Every evaluation is appended to a [trial log](trial_log). Resuming
//! replays the log through the same deterministic loop: logged rewards are
//! used instead of calling the objective, and the run continues from the
//! first missing record.

mod report;
pub mod trial_log;

use std::collections::HashSet;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{self, DensityModel, Observation};
use crate::error::{Error, ObjectiveError, Result};
use crate::objectives::{checked_evaluate, Objective};
use crate::scheduler::SubsampleScheduler;
use crate::seed;
use crate::space::{AnchorConfiguration, SearchSpace};

pub use report::{report, CurvePoint, GenerationRow, Report, ReportFormat, TrialBudget};
use trial_log::{Header, LogEntry, LogKind, LogWriter, PullLine, Record, TrialLine, LOG_SCHEMA};

const TAG_PROPOSE: u64 = 1;
const TAG_SMC: u64 = 2;
const TAG_TRIAL: u64 = 3;

/// Where a trial's configuration came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposer {
    Prior,
    DensityModel,
    Carryover,
    /// Supplied by the caller for the first generation.
    Given,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub pool_size: usize,
    /// Budget units per pool member: a generation spends
    /// `pool_size * budgets_per_generation` units in total.
    pub budgets_per_generation: usize,
    pub generations: usize,
    pub gamma: f64,
    /// Candidates drawn from the good density per proposal.
    pub n_candidates: usize,
    /// Observations needed before the model is used; `None` means `pool_size`.
    pub min_points: Option<usize>,
    pub carryover_count: usize,
    pub seed: u64,
    /// Concurrent evaluations within a round. Does not affect results.
    pub workers: usize,
    /// Extra attempts after a failed evaluation, with the same seed.
    pub retries: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            pool_size: 16,
            budgets_per_generation: 64,
            generations: 4,
            gamma: density::DEFAULT_GAMMA,
            n_candidates: 64,
            min_points: None,
            carryover_count: 1,
            seed: 0,
            workers: 1,
            retries: 0,
        }
    }
}

impl EngineConfig {
    /// Budget units spent by the scheduler in one generation.
    pub fn generation_horizon(&self) -> usize {
        self.pool_size * self.budgets_per_generation
    }

    /// Budget units of the whole run.
    pub fn total_budget(&self) -> usize {
        self.generation_horizon() * self.generations
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.pool_size < 2 {
            return bad(format!("pool size must be at least 2, got {}", self.pool_size));
        }
        if self.budgets_per_generation < self.pool_size {
            return bad(format!(
                "budgets per generation ({}) must be at least the pool size ({})",
                self.budgets_per_generation, self.pool_size
            ));
        }
        if self.generations == 0 {
            return bad("need at least one generation".into());
        }
        if self.carryover_count >= self.pool_size {
            return bad(format!("carryover count {} must be below the pool size", self.carryover_count));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if self.n_candidates == 0 {
            return bad("n_candidates must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }
}

/// One configuration's evaluations within a generation.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub generation: usize,
    pub config: AnchorConfiguration,
    pub proposer: Proposer,
    pub seed: u64,
    /// Reward per budget unit; `-inf` once the trial has failed.
    pub rewards: Vec<f64>,
    pub error: Option<String>,
    /// Milliseconds since the epoch per reward. Ignored by `==`.
    pub timestamps: Vec<u64>,
}

impl PartialEq for TrialRecord {
    fn eq(&self, other: &Self) -> bool {
        self.trial_id == other.trial_id
            && self.generation == other.generation
            && self.config == other.config
            && self.proposer == other.proposer
            && self.seed == other.seed
            && self.rewards.len() == other.rewards.len()
            && self.rewards.iter().zip(&other.rewards).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.error == other.error
    }
}

impl TrialRecord {
    pub fn new(trial_id: usize, generation: usize, config: AnchorConfiguration, proposer: Proposer, seed: u64) -> Self {
        Self { trial_id, generation, config, proposer, seed, rewards: Vec::new(), error: None, timestamps: Vec::new() }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// Best reward, or `None` for failed or unevaluated trials.
    pub fn best_reward(&self) -> Option<f64> {
        if self.failed() || self.rewards.is_empty() {
            return None;
        }
        Some(self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub trial_ids: Vec<usize>,
    /// Budget units per pool member.
    pub pulls: Vec<usize>,
    pub model_fitted: bool,
    /// Best reward among this generation's trials; `-inf` if all failed.
    pub generation_best: f64,
    /// Best reward so far, over all generations.
    pub incumbent_reward: f64,
}

/// Outcome of a search. `==` compares the search itself, not how many
/// evaluations this particular call performed.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_config: AnchorConfiguration,
    pub best_reward: f64,
    pub best_trial_id: usize,
    pub trials: Vec<TrialRecord>,
    pub generations: Vec<GenerationSummary>,
    /// Objective calls made by this call; replayed rewards are not counted.
    pub new_evaluations: usize,
}

impl PartialEq for SearchResult {
    fn eq(&self, other: &Self) -> bool {
        self.best_config == other.best_config
            && self.best_reward.to_bits() == other.best_reward.to_bits()
            && self.best_trial_id == other.best_trial_id
            && self.trials == other.trials
            && self.generations == other.generations
    }
}

impl SearchResult {
    /// Picks the best successful trial; ties go to the lower trial id.
    pub fn from_trials(trials: Vec<TrialRecord>, generations: Vec<GenerationSummary>, new_evaluations: usize) -> Result<Self> {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in trials.iter().enumerate() {
            if let Some(r) = t.best_reward() {
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((i, r));
                }
            }
        }
        let (i, best_reward) = best.ok_or(Error::AllTrialsFailed)?;
        Ok(Self {
            best_config: trials[i].config.clone(),
            best_reward,
            best_trial_id: trials[i].trial_id,
            trials,
            generations,
            new_evaluations,
        })
    }

    /// Trials whose objective failed.
    pub fn failed_trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| t.failed())
    }
}

/// Logged records not yet consumed by the replaying loop.
struct Replay {
    entries: std::vec::IntoIter<LogEntry>,
    next: Option<LogEntry>,
}

impl Replay {
    fn new(entries: Vec<LogEntry>) -> Self {
        let mut entries = entries.into_iter();
        let next = entries.next();
        Self { entries, next }
    }

    fn empty() -> Self {
        Self::new(Vec::new())
    }

    fn is_exhausted(&self) -> bool {
        self.next.is_none()
    }

    fn take(&mut self) -> Option<LogEntry> {
        let cur = self.next.take();
        self.next = self.entries.next();
        cur
    }

    /// Consumes the record the loop is about to produce, if logged.
    /// Returns the logged entry, or `None` once past the end of the log.
    fn expect(&mut self, record: &Record) -> Result<Option<LogEntry>> {
        let Some(entry) = self.take() else { return Ok(None) };
        let same = match (&entry.record, record) {
            (Record::Trial(a), Record::Trial(b)) => a == b,
            // Rewards come from the log; everything else must agree.
            (Record::Pull(a), Record::Pull(b)) => {
                a.trial_id == b.trial_id
                    && a.generation == b.generation
                    && a.round == b.round
                    && a.arm == b.arm
                    && a.leader == b.leader
                    && a.budget_index == b.budget_index
                    && a.config_ref == b.config_ref
                    && a.seed == b.seed
            }
            _ => false,
        };
        if !same {
            return Err(Error::LogDivergence {
                line: entry.line,
                reason: format!("expected {}, found {}", describe(record), describe(&entry.record)),
            });
        }
        Ok(Some(entry))
    }
}

fn describe(record: &Record) -> String {
    match record {
        Record::Header(_) => "header".into(),
        Record::Trial(t) => format!("trial {} (generation {}, config {})", t.trial_id, t.generation, t.config_ref),
        Record::Pull(p) => format!(
            "pull of trial {} (generation {}, round {}, budget index {})",
            p.trial_id, p.generation, p.round, p.budget_index
        ),
    }
}

enum Outcome {
    Reward(f64),
    Failed(String),
}

/// One scheduled evaluation.
struct Job {
    arm: usize,
    trial: usize,
    budget_index: usize,
}

pub struct SearchEngine<'a> {
    space: &'a SearchSpace,
    objective: &'a dyn Objective,
    config: EngineConfig,
    initial_pool: Vec<AnchorConfiguration>,
}

impl<'a> SearchEngine<'a> {
    pub fn new(space: &'a SearchSpace, objective: &'a dyn Objective, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        space.validate()?;
        Ok(Self { space, objective, config, initial_pool: Vec::new() })
    }

    /// Fixes (part of) the first generation's pool; the rest is proposed.
    pub fn with_initial_pool(mut self, pool: Vec<AnchorConfiguration>) -> Result<Self> {
        if pool.len() > self.config.pool_size {
            return Err(Error::InvalidInput(format!(
                "initial pool has {} configurations, pool size is {}",
                pool.len(),
                self.config.pool_size
            )));
        }
        for c in &pool {
            c.validate(self.space)?;
        }
        self.initial_pool = pool;
        Ok(self)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Hash of everything that determines the run: settings that affect
    /// results, the space, the objective identity and any initial pool.
    pub fn config_hash(&self) -> String {
        let c = &self.config;
        let doc = serde_json::json!({
            "pool_size": c.pool_size,
            "budgets_per_generation": c.budgets_per_generation,
            "generations": c.generations,
            "gamma": c.gamma,
            "n_candidates": c.n_candidates,
            "min_points": c.min_points,
            "carryover_count": c.carryover_count,
            "seed": c.seed,
            "space": self.space.to_json(),
            "objective": self.objective.describe(),
            "initial_pool": self.initial_pool.iter().map(|p| p.fingerprint()).collect::<Vec<_>>(),
        });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }

    fn header(&self) -> Record {
        Record::Header(Header {
            schema: LOG_SCHEMA.into(),
            kind: LogKind::Search,
            config_hash: self.config_hash(),
            objective: self.objective.describe(),
            seed: self.config.seed,
            mus: None,
        })
    }

    /// Runs without a log.
    pub fn run(&self) -> Result<SearchResult> {
        self.execute(Replay::empty(), None)
    }

    /// Runs and writes a fresh log to `path`, replacing any existing file.
    pub fn run_logged(&self, path: &Path) -> Result<SearchResult> {
        let mut writer = LogWriter::create(path)?;
        writer.write(&self.header())?;
        writer.sync()?;
        self.execute(Replay::empty(), Some(writer))
    }

    /// Continues the run recorded in `path`. A missing or empty file starts
    /// a fresh run; a torn final line is discarded.
    pub fn resume(&self, path: &Path) -> Result<SearchResult> {
        if !path.exists() || std::fs::metadata(path)?.len() == 0 {
            return self.run_logged(path);
        }
        let contents = trial_log::read_log(path)?;
        if contents.torn_tail {
            log::warn!("{}: discarding incomplete final line", path.display());
        }
        let Some(header) = contents.header() else {
            // Only a torn header was written.
            return self.run_logged(path);
        };
        let expected = self.config_hash();
        if header.config_hash != expected || header.kind != LogKind::Search {
            return Err(Error::ConfigHashMismatch { expected, found: header.config_hash.clone() });
        }
        let writer = LogWriter::append(path, contents.valid_len)?;
        let entries = contents.entries.into_iter().skip(1).collect();
        self.execute(Replay::new(entries), Some(writer))
    }

    fn execute(&self, mut replay: Replay, mut writer: Option<LogWriter>) -> Result<SearchResult> {
        let cfg = &self.config;
        let k = cfg.pool_size;
        let min_points = cfg.min_points.unwrap_or(k);
        let mut trials: Vec<TrialRecord> = Vec::new();
        let mut observations: Vec<Observation> = Vec::new();
        let mut summaries = Vec::with_capacity(cfg.generations);
        let mut new_evaluations = 0;
        let mut incumbent = f64::NEG_INFINITY;

        for g in 0..cfg.generations {
            let mut pool: Vec<(AnchorConfiguration, Proposer)> = Vec::with_capacity(k);
            if g == 0 {
                pool.extend(self.initial_pool.iter().map(|c| (c.clone(), Proposer::Given)));
            } else {
                pool.extend(carryover(&trials, cfg.carryover_count).into_iter().map(|c| (c, Proposer::Carryover)));
            }
            let model = if pool.len() < k {
                DensityModel::fit(&observations, self.space, cfg.gamma, Some(min_points))?
            } else {
                None
            };
            for slot in pool.len()..k {
                let s = seed::derive(cfg.seed, &[TAG_PROPOSE, g as u64, slot as u64]);
                let config = density::propose(model.as_ref(), self.space, cfg.n_candidates, s)?;
                let proposer = if model.is_some() { Proposer::DensityModel } else { Proposer::Prior };
                pool.push((config, proposer));
            }

            let first = trials.len();
            for (config, proposer) in pool {
                let id = trials.len();
                let trial = TrialRecord::new(id, g, config, proposer, seed::derive(cfg.seed, &[TAG_TRIAL, id as u64]));
                let rec = Record::Trial(TrialLine::new(id, g, proposer, trial.seed, &trial.config));
                if replay.expect(&rec)?.is_none() {
                    if let Some(w) = writer.as_mut() {
                        w.write(&rec)?;
                    }
                }
                trials.push(trial);
            }
            let ids: Vec<usize> = (first..first + k).collect();
            let refs: Vec<String> = ids.iter().map(|&i| trial_log::config_ref(&trials[i].config)).collect();

            let horizon = cfg.generation_horizon();
            let mut sched = SubsampleScheduler::new(k, horizon, seed::derive(cfg.seed, &[TAG_SMC, g as u64]))?;
            while let Some(round) = sched.next_round() {
                let round = round.clone();
                let mut planned = vec![0usize; k];
                let jobs: Vec<Job> = round
                    .pulls
                    .iter()
                    .map(|&arm| {
                        planned[arm] += 1;
                        Job { arm, trial: ids[arm], budget_index: trials[ids[arm]].rewards.len() + planned[arm] }
                    })
                    .collect();
                let line_for = |job: &Job, outcome: Option<&Outcome>| PullLine {
                    trial_id: job.trial,
                    generation: g,
                    round: round.round,
                    arm: job.arm,
                    leader: round.leader,
                    budget_index: job.budget_index,
                    config_ref: refs[job.arm].clone(),
                    reward: match outcome {
                        Some(Outcome::Reward(r)) => Some(*r),
                        _ => None,
                    },
                    error: match outcome {
                        Some(Outcome::Failed(e)) => Some(e.clone()),
                        _ => None,
                    },
                    seed: trials[job.trial].seed,
                };

                // Logged prefix of the round, then live evaluations.
                let mut outcomes: Vec<Option<(Outcome, Option<u64>)>> = Vec::with_capacity(jobs.len());
                for job in &jobs {
                    if replay.is_exhausted() {
                        outcomes.push(None);
                        continue;
                    }
                    let entry = replay.expect(&Record::Pull(line_for(job, None)))?.expect("not exhausted");
                    let Record::Pull(p) = entry.record else { unreachable!("matched as pull") };
                    let outcome = match (p.reward, p.error) {
                        (Some(r), None) if r.is_finite() => Outcome::Reward(r),
                        (None, Some(e)) => Outcome::Failed(e),
                        _ => {
                            return Err(Error::CorruptLog { line: entry.line, reason: "pull needs either a reward or an error".into() })
                        }
                    };
                    outcomes.push(Some((outcome, entry.timestamp)));
                }
                let live: Vec<usize> = (0..jobs.len()).filter(|&i| outcomes[i].is_none()).collect();
                let results = self.evaluate_jobs(&live.iter().map(|&i| &jobs[i]).collect::<Vec<_>>(), &trials);
                new_evaluations += results.iter().filter(|r| r.1).count();
                for (&i, (outcome, _)) in live.iter().zip(results) {
                    let ts = match writer.as_mut() {
                        Some(w) => Some(w.write(&Record::Pull(line_for(&jobs[i], Some(&outcome))))?),
                        None => None,
                    };
                    outcomes[i] = Some((outcome, ts));
                }
                if let Some(w) = writer.as_mut() {
                    w.sync()?;
                }

                let mut rewards = Vec::with_capacity(jobs.len());
                for (job, slot) in jobs.iter().zip(outcomes) {
                    let (outcome, ts) = slot.expect("every job has an outcome");
                    let trial = &mut trials[job.trial];
                    let r = match outcome {
                        Outcome::Reward(r) => r,
                        Outcome::Failed(e) => {
                            if trial.error.is_none() {
                                log::warn!("trial {} failed: {e}", trial.trial_id);
                                trial.error = Some(e);
                            }
                            f64::NEG_INFINITY
                        }
                    };
                    trial.rewards.push(r);
                    trial.timestamps.push(ts.unwrap_or_else(trial_log::now_millis));
                    rewards.push(r);
                }
                sched.complete_round(&rewards)?;
            }

            let (state, _) = sched.into_parts();
            let generation_best = ids.iter().filter_map(|&i| trials[i].best_reward()).fold(f64::NEG_INFINITY, f64::max);
            incumbent = incumbent.max(generation_best);
            for &i in &ids {
                if let Some(best) = trials[i].best_reward() {
                    observations.push(Observation { x: density::encode(&trials[i].config, self.space)?, y: -best });
                }
            }
            log::info!("generation {g}: best {generation_best:.6}, incumbent {incumbent:.6}");
            summaries.push(GenerationSummary {
                generation: g,
                trial_ids: ids,
                pulls: state.arms.iter().map(|a| a.pulls()).collect(),
                model_fitted: model.is_some(),
                generation_best,
                incumbent_reward: incumbent,
            });
        }

        if let Some(extra) = replay.take() {
            return Err(Error::LogDivergence { line: extra.line, reason: "log continues past the end of the run".into() });
        }
        SearchResult::from_trials(trials, summaries, new_evaluations)
    }

    /// Evaluates jobs, in parallel when `workers > 1`. The flag is true when
    /// the objective was called; pulls of failed trials are not re-evaluated.
    fn evaluate_jobs(&self, jobs: &[&Job], trials: &[TrialRecord]) -> Vec<(Outcome, bool)> {
        let run = |job: &Job| -> (Outcome, bool) {
            let trial = &trials[job.trial];
            if trial.failed() {
                return (Outcome::Failed("trial failed earlier".into()), false);
            }
            (self.evaluate_with_retries(&trial.config, job.budget_index, trial.seed), true)
        };
        let workers = self.config.workers.min(jobs.len());
        if workers <= 1 {
            return jobs.iter().map(|j| run(j)).collect();
        }
        let chunk = jobs.len().div_ceil(workers);
        thread::scope(|s| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|j| run(j)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation thread panicked")).collect()
        })
    }

    fn evaluate_with_retries(&self, config: &AnchorConfiguration, budget_index: usize, seed: u64) -> Outcome {
        let mut last: Option<ObjectiveError> = None;
        for attempt in 0..=self.config.retries {
            match checked_evaluate(self.objective, config, budget_index, seed) {
                Ok(r) => return Outcome::Reward(r),
                Err(e) => {
                    log::debug!("evaluation attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Outcome::Failed(last.expect("at least one attempt").to_string())
    }
}

/// Best distinct configurations so far; ties go to the earlier trial.
fn carryover(trials: &[TrialRecord], count: usize) -> Vec<AnchorConfiguration> {
    let mut ranked: Vec<(f64, usize)> = trials.iter().filter_map(|t| t.best_reward().map(|r| (r, t.trial_id))).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, id) in ranked {
        if out.len() == count {
            break;
        }
        if seen.insert(trials[id].config.fingerprint()) {
            out.push(trials[id].config.clone());
        }
    }
    out
}

/// Runs a search without a log.
pub fn run_search(space: &SearchSpace, objective: &dyn Objective, config: EngineConfig) -> Result<SearchResult> {
    SearchEngine::new(space, objective, config)?.run()
}

/// Continues (or starts) the logged run at `log_path`.
pub fn resume(log_path: &Path, space: &SearchSpace, objective: &dyn Objective, config: EngineConfig) -> Result<SearchResult> {
    SearchEngine::new(space, objective, config)?.resume(log_path)
}
