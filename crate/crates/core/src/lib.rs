//! Anchor-box hyper-parameter search.
//!
//! The crate is organised around five pieces that are usually used together:
//!
//! - [`space`]: the feasibility-bounded, per-pyramid-level anchor search space,
//!   annotation ingestion, prior sampling and the k-means anchor baseline.
//! - [`density`]: Parzen-style "good"/"bad" density models over encoded
//!   configurations and the acquisition ratio used to pick proposals.
//! - [`scheduler`]: sub-sample mean comparisons, a nonparametric bandit
//!   policy that decides which configuration receives the next budget unit.
//! - [`objectives`]: evaluation targets (anchor coverage, budget-dependent
//!   surrogates, bandit arms, external commands) and the baseline policies.
//! - [`engine`]: the propose / schedule / refit loop with a resumable,
//!   checksummed trial log and reports built from it.
//!
//! Every randomized routine takes an explicit `u64` seed; equal inputs and
//! seeds give bit-identical outputs.

pub mod density;
pub mod engine;
mod error;
pub mod objectives;
pub mod scheduler;
pub mod seed;
pub mod space;

pub use density::{DensityModel, Observation};
pub use engine::{run_search, EngineConfig, SearchEngine, SearchResult, TrialRecord};
pub use error::{Error, ObjectiveError, Result};
pub use objectives::Objective;
pub use scheduler::{PullTrace, SchedulerState};
pub use space::{AnchorConfiguration, BoxRecord, GlobalLimits, LevelSpace, ScaleRatio, SearchSpace};
