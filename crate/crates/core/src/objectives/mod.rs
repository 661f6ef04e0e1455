//! Evaluation targets and competitor policies.

pub mod bandit;
mod baselines;
mod coverage;
mod external;
mod surrogate;

use crate::error::ObjectiveError;
use crate::space::AnchorConfiguration;

pub use baselines::{
    halving_pool, halving_schedule, random_search_policy, schedule_budget, successive_halving,
    successive_halving_policy, HalvingConfig, HalvingRank, HalvingRun,
};
pub use coverage::{centered_iou, coverage_reward, CoverageObjective, LevelAssigner};
pub use external::{request_line, ExternalCommand};
pub use surrogate::{surrogate_reward, SurrogateObjective, SurrogateSpec};

/// A black-box objective queried one budget unit at a time.
///
/// `budget_index` is 1-based: the `t`-th evaluation of the same
/// configuration. Rewards are maximized. Implementations must be safe to
/// call concurrently for distinct `(config, budget_index)` keys.
pub trait Objective: Sync {
    fn evaluate(&self, config: &AnchorConfiguration, budget_index: usize, seed: u64) -> Result<f64, ObjectiveError>;

    /// Stable identity folded into the engine configuration hash.
    fn describe(&self) -> String;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn evaluate(&self, config: &AnchorConfiguration, budget_index: usize, seed: u64) -> Result<f64, ObjectiveError> {
        (**self).evaluate(config, budget_index, seed)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Adapts a closure into an [`Objective`].
pub struct FnObjective<F> {
    name: String,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&AnchorConfiguration, usize, u64) -> Result<f64, ObjectiveError> + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&AnchorConfiguration, usize, u64) -> Result<f64, ObjectiveError> + Sync,
{
    fn evaluate(&self, config: &AnchorConfiguration, budget_index: usize, seed: u64) -> Result<f64, ObjectiveError> {
        (self.f)(config, budget_index, seed)
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// Evaluates and rejects non-finite rewards.
pub(crate) fn checked_evaluate<O: Objective + ?Sized>(
    objective: &O,
    config: &AnchorConfiguration,
    budget_index: usize,
    seed: u64,
) -> Result<f64, ObjectiveError> {
    let r = objective.evaluate(config, budget_index, seed)?;
    if r.is_finite() {
        Ok(r)
    } else {
        Err(ObjectiveError::NonFinite(r))
    }
}
