//! `aabo`: build anchor search spaces, run searches, simulate bandits and
//! summarize trial logs.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O failure while writing an output |
//! | 2 | unreadable or malformed input (flags, annotation/space/spec files, corrupt log) |
//! | 3 | infeasible search space |
//! | 4 | objective failure (any trial failed after its retries) |
//! | 5 | log does not match the run being resumed |

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use aabo_core::engine::{self, ReportFormat};
use aabo_core::objectives::bandit::{self, BanditPolicy, BanditSpec};
use aabo_core::objectives::{CoverageObjective, ExternalCommand, SurrogateObjective};
use aabo_core::space::{build_space, read_coco, SpaceParams};
use aabo_core::{EngineConfig, Error, GlobalLimits, Objective, SearchEngine, SearchSpace};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aabo", version, about = "Anchor-box search with sub-sample mean comparisons")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a per-level search space from COCO-style annotations.
    SpaceBuild(SpaceBuildArgs),
    /// Run the search engine and write a trial log.
    SearchRun(SearchRunArgs),
    /// Simulate a bandit policy and write regret curves.
    BanditSim(BanditSimArgs),
    /// Summarize a trial log on standard output.
    Report(ReportArgs),
}

#[derive(Args)]
struct SpaceBuildArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    levels: usize,
    #[arg(long)]
    max_width: f64,
    #[arg(long)]
    max_height: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SpaceParams::default().q_lo)]
    q_lo: f64,
    #[arg(long, default_value_t = SpaceParams::default().q_hi)]
    q_hi: f64,
    #[arg(long, default_value_t = SpaceParams::default().padding)]
    padding: f64,
    #[arg(long, default_value_t = SpaceParams::default().base_scale)]
    base_scale: f64,
    #[arg(long, default_value_t = SpaceParams::default().base_stride)]
    base_stride: u32,
    #[arg(long, default_value_t = SpaceParams::default().count_min)]
    count_min: u32,
    #[arg(long, default_value_t = SpaceParams::default().count_max)]
    count_max: u32,
    #[arg(long, default_value_t = SpaceParams::default().count_step)]
    count_step: u32,
}

#[derive(Args)]
struct SearchRunArgs {
    #[arg(long)]
    space: PathBuf,
    /// `coverage:BOXES.json`, `surrogate:PARAMS.json` or `cmd:PROGRAM [ARGS...]`.
    #[arg(long)]
    objective: String,
    #[arg(long, default_value_t = EngineConfig::default().pool_size)]
    pool: usize,
    /// Budget units per pool member and generation.
    #[arg(long, default_value_t = EngineConfig::default().budgets_per_generation)]
    budgets: usize,
    #[arg(long, default_value_t = EngineConfig::default().generations)]
    generations: usize,
    #[arg(long, default_value_t = EngineConfig::default().carryover_count)]
    carryover: usize,
    #[arg(long, default_value_t = EngineConfig::default().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = EngineConfig::default().n_candidates)]
    n_candidates: usize,
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue the run recorded in --log instead of starting over.
    #[arg(long, requires = "log")]
    resume: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Per-evaluation timeout in seconds for `cmd:` objectives.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    #[arg(long, default_value_t = 0)]
    retries: usize,
}

#[derive(Args)]
struct BanditSimArgs {
    /// Arm spec, e.g. `{"arms": [{"dist": "gaussian", "mu": 0.5}]}`.
    #[arg(long)]
    arms: PathBuf,
    #[arg(long, value_parser = parse_policy)]
    policy: BanditPolicy,
    #[arg(long)]
    horizon: usize,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    /// Mean curves: `t,regret_mean,regret_stderr,best_arm_pull_frac`.
    #[arg(long)]
    out: PathBuf,
    /// Per-seed curves: `seed_index,t,regret`.
    #[arg(long)]
    per_seed_out: Option<PathBuf>,
    /// Trial log of the first seed, readable by `report`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_parser = parse_format, default_value = "json")]
    format: ReportFormat,
}

fn parse_policy(s: &str) -> Result<BanditPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

struct Failure {
    code: u8,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 1,
        Error::InvalidInput(_) | Error::ConfigMismatch(_) | Error::CorruptLog { .. } | Error::Json(_) => 2,
        Error::InfeasibleSpace(_) => 3,
        Error::Objective(_) | Error::AllTrialsFailed => 4,
        Error::ConfigHashMismatch { .. } | Error::LogDivergence { .. } => 5,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

/// Errors while reading an input file are input errors (exit 2), not
/// output failures.
fn input<T>(path: &Path, r: aabo_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| {
        let code = if matches!(e, Error::Io(_)) { 2 } else { exit_code(&e) };
        Failure { code, message: format!("{}: {e}", path.display()) }
    })
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()) })
}

fn read_space(path: &Path) -> Result<SearchSpace, Failure> {
    input(path, std::fs::read_to_string(path).map_err(Error::from).and_then(|t| SearchSpace::from_json(&t)))
}

fn space_build(a: SpaceBuildArgs) -> Result<(), Failure> {
    let boxes = input(&a.annotations, read_coco(&a.annotations))?;
    let params = SpaceParams {
        q_lo: a.q_lo,
        q_hi: a.q_hi,
        padding: a.padding,
        base_scale: a.base_scale,
        base_stride: a.base_stride,
        count_min: a.count_min,
        count_max: a.count_max,
        count_step: a.count_step,
    };
    let limits = GlobalLimits::new(a.max_width, a.max_height)?;
    let space = build_space(&boxes, a.levels, limits, &params)?;
    write(&a.out, &space.to_json())?;

    let mut counts = vec![0usize; space.num_levels()];
    for b in &boxes {
        counts[space.level_of_box(b)?] += 1;
    }
    println!("{} boxes, {} levels -> {}", boxes.len(), space.num_levels(), a.out.display());
    println!("level  stride  boxes  anchors  scale            ratio");
    for (l, n) in space.levels.iter().zip(counts) {
        let row = format!(
            "{:>5}  {:>6}  {:>5}  {:>3}-{:<3}  {:>7.3}-{:<7.3}  {:>6.3}-{:<6.3}",
            l.level, l.stride, n, l.anchor_count.min, l.anchor_count.max, l.scale_range.lo, l.scale_range.hi, l.ratio_range.lo, l.ratio_range.hi
        );
        println!("{}", row.trim_end());
    }
    Ok(())
}

fn file_name(path: &str) -> String {
    Path::new(path).file_name().map_or_else(|| path.to_string(), |n| n.to_string_lossy().into_owned())
}

fn objective(spec: &str, space: &SearchSpace, a: &SearchRunArgs) -> Result<Box<dyn Objective>, Failure> {
    let bad = |m: String| Failure { code: 2, message: m };
    let (kind, rest) = spec.split_once(':').ok_or_else(|| bad(format!("objective {spec:?} must look like kind:argument")))?;
    match kind {
        "coverage" => {
            let path = Path::new(rest);
            let boxes = input(path, read_coco(path))?;
            Ok(Box::new(CoverageObjective::new(boxes, space, file_name(rest))?))
        }
        "surrogate" => {
            let path = Path::new(rest);
            Ok(Box::new(input(path, SurrogateObjective::from_spec_file(path, space))?))
        }
        "cmd" => {
            if !(a.timeout > 0.0 && a.timeout.is_finite()) {
                return Err(bad(format!("timeout must be positive, got {}", a.timeout)));
            }
            Ok(Box::new(ExternalCommand::new(rest, Duration::from_secs_f64(a.timeout), a.workers)?))
        }
        _ => Err(bad(format!("unknown objective kind {kind:?} (expected coverage, surrogate or cmd)"))),
    }
}

fn search_run(a: SearchRunArgs, seed: u64) -> Result<(), Failure> {
    let space = read_space(&a.space)?;
    let obj = objective(&a.objective, &space, &a)?;
    let config = EngineConfig {
        pool_size: a.pool,
        budgets_per_generation: a.budgets,
        generations: a.generations,
        gamma: a.gamma,
        n_candidates: a.n_candidates,
        min_points: a.min_points,
        carryover_count: a.carryover,
        seed,
        workers: a.workers,
        retries: a.retries,
    };
    let engine = SearchEngine::new(&space, obj.as_ref(), config)?;
    let result = match (&a.log, a.resume) {
        (Some(log), true) => engine.resume(log)?,
        (Some(log), false) => {
            if std::fs::metadata(log).is_ok_and(|m| m.len() > 0) {
                return Err(Failure { code: 2, message: format!("{} already exists; pass --resume to continue it", log.display()) });
            }
            engine.run_logged(log)?
        }
        (None, _) => engine.run()?,
    };

    println!("best reward {} (trial {})", result.best_reward, result.best_trial_id);
    print!("{}", result.best_config.to_json());
    println!("{} trials, {} new evaluations", result.trials.len(), result.new_evaluations);
    let failed: Vec<_> = result.failed_trials().collect();
    if failed.is_empty() {
        return Ok(());
    }
    for t in &failed {
        eprintln!("trial {} failed: {}", t.trial_id, t.error.as_deref().unwrap_or("unknown error"));
    }
    Err(Failure { code: 4, message: format!("{} trial(s) failed", failed.len()) })
}

fn bandit_sim(a: BanditSimArgs, seed: u64) -> Result<(), Failure> {
    let spec = input(&a.arms, std::fs::read_to_string(&a.arms).map_err(Error::from).and_then(|t| BanditSpec::from_json(&t)))?;
    if a.horizon == 0 {
        return Err(Failure { code: 2, message: "horizon must be at least 1".into() });
    }
    let table = bandit::regret_table(&spec, a.policy, a.horizon, a.seeds, seed)?;
    write(&a.out, &table.to_csv())?;
    if let Some(p) = &a.per_seed_out {
        write(p, &table.per_seed_csv())?;
    }
    if let Some(p) = &a.log {
        let first = bandit::run_seed(seed, 0);
        let run = bandit::simulate(&spec, a.policy, a.horizon, first)?;
        bandit::write_simulation_log(&spec, a.policy, &run, first, p).map_err(|e| Failure {
            code: exit_code(&e),
            message: format!("{}: {e}", p.display()),
        })?;
    }
    let t = a.horizon - 1;
    println!(
        "{} arms, policy {}, horizon {}, {} seeds: regret {:.3} +- {:.3}, best-arm share {:.3}",
        spec.arms.len(),
        a.policy.name(),
        a.horizon,
        a.seeds,
        table.regret_mean[t],
        table.regret_stderr[t],
        table.best_arm_pull_frac[t]
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let text = input(&a.log, engine::report(&a.log, a.format))?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AABO_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SpaceBuild(a) => space_build(a),
        Command::SearchRun(a) => search_run(a, cli.seed),
        Command::BanditSim(a) => bandit_sim(a, cli.seed),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
