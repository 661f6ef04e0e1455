//! Summaries computed from a trial log.
//!
//! JSON (`aabo-report/1`):
//!
//! ```text
//! {"schema": "aabo-report/1", "kind": "search" | "simulation" | null,
//!  "config_hash": …, "best": {"trial_id", "reward", "config_ref"} | null,
//!  "curve": [{"evaluation", "generation", "trial_id", "budget_index", "reward", "best_so_far", "regret"?}],
//!  "generations": [{"generation", "evaluations", "generation_best", "best_trial_id", "incumbent_reward", "incumbent_trial_id"}],
//!  "budgets": [{"trial_id", "generation", "config_ref", "pulls", "best_reward"}]}
//! ```
//!
//! CSV is the same three tables, each introduced by a `# name` line and
//! separated by a blank line. Missing values are empty fields. `regret` is
//! only present for simulation logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::trial_log::{self, LogContents, LogKind, Record};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA: &str = "aabo-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::InvalidInput(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub evaluation: usize,
    pub generation: usize,
    pub trial_id: usize,
    pub budget_index: usize,
    pub reward: Option<f64>,
    pub best_so_far: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRow {
    pub generation: usize,
    pub evaluations: usize,
    pub generation_best: Option<f64>,
    pub best_trial_id: Option<usize>,
    pub incumbent_reward: Option<f64>,
    pub incumbent_trial_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialBudget {
    pub trial_id: usize,
    pub generation: usize,
    pub config_ref: String,
    pub pulls: usize,
    pub best_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Best {
    pub trial_id: usize,
    pub reward: f64,
    pub config_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub kind: Option<LogKind>,
    pub config_hash: Option<String>,
    pub best: Option<Best>,
    pub curve: Vec<CurvePoint>,
    pub generations: Vec<GenerationRow>,
    pub budgets: Vec<TrialBudget>,
}

fn better(candidate: Option<f64>, current: Option<f64>) -> bool {
    match (candidate, current) {
        (Some(c), Some(b)) => c > b,
        (Some(_), None) => true,
        _ => false,
    }
}

impl Report {
    pub fn from_log(path: &Path) -> Result<Self> {
        let contents = trial_log::read_log(path)?;
        if contents.torn_tail {
            log::warn!("{}: ignoring incomplete final line", path.display());
        }
        Self::from_contents(&contents)
    }

    pub fn from_contents(contents: &LogContents) -> Result<Self> {
        let header = contents.header();
        let mus = header.and_then(|h| h.mus.clone());
        let best_mu = mus.as_ref().map(|m| m.iter().copied().fold(f64::NEG_INFINITY, f64::max));

        let mut curve = Vec::new();
        let mut generations: BTreeMap<usize, GenerationRow> = BTreeMap::new();
        let mut budgets: BTreeMap<usize, TrialBudget> = BTreeMap::new();
        let mut best_so_far: Option<f64> = None;
        let mut best: Option<Best> = None;
        let mut regret = 0.0;

        for entry in &contents.entries {
            match &entry.record {
                Record::Header(_) => {}
                Record::Trial(t) => {
                    budgets.insert(
                        t.trial_id,
                        TrialBudget { trial_id: t.trial_id, generation: t.generation, config_ref: t.config_ref.clone(), pulls: 0, best_reward: None },
                    );
                }
                Record::Pull(p) => {
                    let b = budgets.entry(p.trial_id).or_insert_with(|| TrialBudget {
                        trial_id: p.trial_id,
                        generation: p.generation,
                        config_ref: p.config_ref.clone(),
                        pulls: 0,
                        best_reward: None,
                    });
                    b.pulls += 1;
                    if better(p.reward, b.best_reward) {
                        b.best_reward = p.reward;
                    }
                    if better(p.reward, best_so_far) {
                        best_so_far = p.reward;
                        best = Some(Best { trial_id: p.trial_id, reward: p.reward.expect("checked"), config_ref: p.config_ref.clone() });
                    }
                    let point_regret = match (&mus, best_mu) {
                        (Some(m), Some(top)) => {
                            let mu = m.get(p.trial_id).ok_or_else(|| Error::CorruptLog {
                                line: entry.line,
                                reason: format!("arm {} has no mean in the header", p.trial_id),
                            })?;
                            regret += top - mu;
                            Some(regret)
                        }
                        _ => None,
                    };
                    curve.push(CurvePoint {
                        evaluation: curve.len() + 1,
                        generation: p.generation,
                        trial_id: p.trial_id,
                        budget_index: p.budget_index,
                        reward: p.reward,
                        best_so_far,
                        regret: point_regret,
                    });
                    let g = generations.entry(p.generation).or_insert_with(|| GenerationRow {
                        generation: p.generation,
                        evaluations: 0,
                        generation_best: None,
                        best_trial_id: None,
                        incumbent_reward: None,
                        incumbent_trial_id: None,
                    });
                    g.evaluations += 1;
                    if better(p.reward, g.generation_best) {
                        g.generation_best = p.reward;
                        g.best_trial_id = Some(p.trial_id);
                    }
                    if let Some(b) = &best {
                        g.incumbent_reward = Some(b.reward);
                        g.incumbent_trial_id = Some(b.trial_id);
                    }
                }
            }
        }
        Ok(Self {
            schema: REPORT_SCHEMA,
            kind: header.map(|h| h.kind),
            config_hash: header.map(|h| h.config_hash.clone()),
            best,
            curve,
            generations: generations.into_values().collect(),
            budgets: budgets.into_values().collect(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        let simulation = self.kind == Some(LogKind::Simulation);
        let mut out = String::from("# curve\nevaluation,generation,trial_id,budget_index,reward,best_so_far");
        out.push_str(if simulation { ",regret\n" } else { "\n" });
        for p in &self.curve {
            let _ = write!(out, "{},{},{},{},{},{}", p.evaluation, p.generation, p.trial_id, p.budget_index, opt(&p.reward), opt(&p.best_so_far));
            if simulation {
                let _ = write!(out, ",{}", opt(&p.regret));
            }
            out.push('\n');
        }
        out.push_str("\n# generations\ngeneration,evaluations,generation_best,best_trial_id,incumbent_reward,incumbent_trial_id\n");
        for g in &self.generations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                g.generation,
                g.evaluations,
                opt(&g.generation_best),
                opt(&g.best_trial_id),
                opt(&g.incumbent_reward),
                opt(&g.incumbent_trial_id)
            );
        }
        out.push_str("\n# budgets\ntrial_id,generation,config_ref,pulls,best_reward\n");
        for b in &self.budgets {
            let _ = writeln!(out, "{},{},{},{},{}", b.trial_id, b.generation, b.config_ref, b.pulls, opt(&b.best_reward));
        }
        out
    }
}

/// Reads the log at `path` and renders its report.
pub fn report(path: &Path, format: ReportFormat) -> Result<String> {
    let r = Report::from_log(path)?;
    Ok(match format {
        ReportFormat::Csv => r.to_csv(),
        ReportFormat::Json => r.to_json(),
    })
}
