//! Acceptance criteria, one check each. Runs without the libtest harness so
//! every criterion prints exactly one PASS/FAIL line; exits non-zero if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use aabo_core::density::{dim_kinds, encode, propose, DensityModel, Observation};
use aabo_core::engine::trial_log::{determinism_hash, read_log};
use aabo_core::objectives::bandit::{regret_table, ArmSpec, BanditPolicy, BanditSpec};
use aabo_core::objectives::{halving_pool, random_search_policy, CoverageObjective, HalvingRank, SurrogateObjective};
use aabo_core::scheduler::{is_better, Arm, SubsampleScheduler};
use aabo_core::space::{is_feasible, CountRange, Interval};
use aabo_core::{seed, AnchorConfiguration, EngineConfig, GlobalLimits, LevelSpace, Objective, ScaleRatio, SearchEngine, SearchSpace};
use rand::Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("1 feasibility grid", Duration::from_secs(1), feasibility_grid),
        ("2 smc round accounting and comparisons", Duration::from_secs(10), smc_correctness),
        ("3 smc regret vs random", Duration::from_secs(60), smc_efficiency),
        ("4 early-stop advantage over halving", Duration::from_secs(120), early_stop_advantage),
        ("5 engine vs random search on coverage", Duration::from_secs(300), engine_vs_random),
        ("6 tpe proposals and normalization", Duration::from_secs(30), tpe_behavior),
        ("7 appendix anchor table", Duration::from_secs(5), appendix_fixture),
        ("8 determinism and resume", Duration::from_secs(60), determinism_and_resume),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked"));
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed < limit;
        failed += usize::from(!pass);
        println!(
            "criterion {name}: {} ({}; {:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

fn feasibility_grid() -> Outcome {
    let limits = GlobalLimits::new(1333.0, 800.0).unwrap();
    let (w_max, h_max) = (limits.max_width, limits.max_height);
    let mut disagree = 0;
    for i in 0..100 {
        let w = 0.1 * w_max + (2.0 * w_max - 0.1 * w_max) * i as f64 / 99.0;
        for j in 0..100 {
            let h = 0.1 * h_max + (2.0 * h_max - 0.1 * h_max) * j as f64 / 99.0;
            let pair = ScaleRatio { scale: (w * h).sqrt(), ratio: h / w };
            if is_feasible(&pair, &limits) != (w <= w_max && h <= h_max) {
                disagree += 1;
            }
        }
    }
    outcome(disagree == 0, format!("{disagree}/10000 cells disagree"))
}

/// All-windows oracle: a challenger with `nk` pulls beats the leader when its
/// mean reaches the mean of some length-`nk` window of the leader's rewards.
fn better_by_enumeration(challenger: &[f64], leader: &[f64], c_n: f64) -> bool {
    let (nk, nl) = (challenger.len(), leader.len());
    if nk >= nl {
        return false;
    }
    if (nk as f64) < c_n {
        return true;
    }
    if nk == 0 {
        return false;
    }
    let mean = challenger.iter().sum::<f64>() / nk as f64;
    (0..=nl - nk).any(|s| mean >= leader[s..s + nk].iter().sum::<f64>() / nk as f64)
}

fn smc_correctness() -> Outcome {
    let mut violations = 0;
    let mut boundaries = 0;
    for k in [2usize, 5, 10] {
        for stream in 0..100u64 {
            let mut rng = seed::rng(seed::derive(0xACC2, &[k as u64, stream]));
            let mus: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let horizon = rng.random_range(k..=40 * k);
            let mut sched = SubsampleScheduler::new(k, horizon, stream).unwrap();
            while let Some(round) = sched.next_round() {
                let r = round.round;
                let n = round.total_before;
                if r >= 2 {
                    boundaries += 1;
                    if !(k + r - 2 <= n && n <= k + (k - 1) * (r - 2)) {
                        violations += 1;
                    }
                }
                let pulls = round.pulls.clone();
                let rewards: Vec<f64> = pulls.iter().map(|&a| mus[a] + rng.random_range(-1.0..1.0)).collect();
                sched.complete_round(&rewards).unwrap();
            }
        }
    }

    let mut mismatches = 0;
    let mut rng = seed::rng(0xACC2);
    for _ in 0..10_000 {
        let nl = rng.random_range(0..30);
        let nk = rng.random_range(0..30);
        let leader: Vec<f64> = (0..nl).map(|_| rng.random_range(-12.0..12.0)).collect();
        let challenger: Vec<f64> = (0..nk).map(|_| rng.random_range(-12.0..12.0)).collect();
        let c_n = rng.random_range(0.0..3.0);
        let got = is_better(&Arm::from_rewards(challenger.clone()), &Arm::from_rewards(leader.clone()), c_n);
        if got != better_by_enumeration(&challenger, &leader, c_n) {
            mismatches += 1;
        }
    }
    outcome(
        violations == 0 && boundaries > 0 && mismatches == 0,
        format!("{violations} bound violations over {boundaries} round boundaries, {mismatches}/10000 is_better mismatches"),
    )
}

fn smc_efficiency() -> Outcome {
    let arms = (0..10).map(|i| ArmSpec::Gaussian { mu: 0.3 * i as f64, sigma: 1.0 }).collect();
    let spec = BanditSpec::new(arms).unwrap();
    let smc = regret_table(&spec, BanditPolicy::Smc, 8000, 50, 3).unwrap();
    let random = regret_table(&spec, BanditPolicy::Random, 8000, 50, 3).unwrap();
    let (rs, rr) = (*smc.regret_mean.last().unwrap(), *random.regret_mean.last().unwrap());
    let frac = *smc.best_arm_pull_frac.last().unwrap();
    outcome(
        rs <= 0.25 * rr && frac >= 0.85,
        format!("regret smc {rs:.1} vs random {rr:.1} (ratio {:.3}), best-arm fraction {frac:.3}", rs / rr),
    )
}

fn single_anchor_space() -> SearchSpace {
    SearchSpace::new(
        GlobalLimits::new(1000.0, 1000.0).unwrap(),
        1000.0,
        vec![LevelSpace {
            level: 0,
            stride: 1,
            anchor_count: CountRange { min: 1, max: 1 },
            scale_range: Interval::new(1.0, 100.0),
            ratio_range: Interval::new(0.25, 4.0),
        }],
    )
    .unwrap()
}

/// Eight single-anchor configurations. The true best (index drawn per seed)
/// has the highest asymptote and the slowest convergence; the rest saturate
/// within a pull or two at lower levels.
fn early_stop_fixture(s: u64) -> (Vec<AnchorConfiguration>, usize, SurrogateObjective) {
    const K: usize = 8;
    let mut rng = seed::rng(seed::derive(0xACC4, &[s]));
    let best = rng.random_range(0..K);
    let pool: Vec<_> = (0..K)
        .map(|i| AnchorConfiguration::new(vec![vec![ScaleRatio { scale: 10.0 + 5.0 * i as f64, ratio: 1.0 }]]))
        .collect();
    let table: Vec<_> = pool
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (a, tau) = if i == best {
                (rng.random_range(0.85..0.95), rng.random_range(1.2..2.0))
            } else {
                (rng.random_range(0.5..0.75), rng.random_range(0.2..0.8))
            };
            (c.clone(), a, tau)
        })
        .collect();
    let obj = SurrogateObjective::from_table("early-stop", &table, 0.02).unwrap();
    (pool, best, obj)
}

fn early_stop_advantage() -> Outcome {
    const K: usize = 8;
    const N: usize = 8;
    let space = single_anchor_space();
    let (mut smc_hits, mut halving_hits) = (0, 0);
    for s in 0..30u64 {
        let (pool, best, obj) = early_stop_fixture(s);
        let cfg = EngineConfig { pool_size: K, budgets_per_generation: N, generations: 1, carryover_count: 0, seed: s, ..EngineConfig::default() };
        let res = SearchEngine::new(&space, &obj, cfg).unwrap().with_initial_pool(pool.clone()).unwrap().run().unwrap();
        smc_hits += usize::from(res.best_config == pool[best]);

        let halving = halving_pool(K, K * N, 2, HalvingRank::Latest, |arm, t| {
            obj.evaluate(&pool[arm], t, seed::derive(s, &[arm as u64])).unwrap()
        })
        .unwrap();
        let top = |r: &Vec<f64>| r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let observed_best = (0..K).fold(0, |b, a| if top(&halving.rewards[a]) > top(&halving.rewards[b]) { a } else { b });
        halving_hits += usize::from(observed_best == best);
    }
    outcome(smc_hits > halving_hits, format!("true best recovered: smc {smc_hits}/30, halving {halving_hits}/30"))
}

fn engine_vs_random() -> Outcome {
    let boxes = common::detection_boxes(500, 1);
    let space = common::five_level_space(&boxes);
    let obj = CoverageObjective::new(boxes, &space, "synthetic-500").unwrap();
    let mut wins = 0;
    let mut margins = Vec::new();
    for s in 0..20u64 {
        let cfg = EngineConfig { pool_size: 16, budgets_per_generation: 64, generations: 4, seed: s, ..EngineConfig::default() };
        let budget = cfg.total_budget();
        let engine = SearchEngine::new(&space, &obj, cfg).unwrap().run().unwrap();
        let random = random_search_policy(&space, &obj, budget, s).unwrap();
        wins += usize::from(engine.best_reward > random.best_reward);
        margins.push(engine.best_reward - random.best_reward);
    }
    let mean_margin = margins.iter().sum::<f64>() / margins.len() as f64;
    outcome(wins >= 16, format!("engine ahead in {wins}/20 seeds, mean margin {mean_margin:+.4}"))
}

const GOOD: (f64, f64) = (5.0, 0.5);
const BAD: (f64, f64) = (50.0, 2.0);

/// Twenty low-loss observations scattered around `GOOD` and twenty high-loss
/// ones around `BAD`, in log space.
fn two_clusters() -> Vec<Observation> {
    let mut rng = seed::rng(0xACC6);
    let jitter: Normal<f64> = Normal::new(0.0, 0.08).unwrap();
    let mut obs = Vec::new();
    for i in 0..20 {
        for (c, base) in [(GOOD, 0.1), (BAD, 1.0)] {
            let x = vec![1.0, c.0.ln() + jitter.sample(&mut rng), c.1.ln() + jitter.sample(&mut rng)];
            obs.push(Observation { x, y: base + 0.01 * i as f64 });
        }
    }
    obs
}

fn tpe_behavior() -> Outcome {
    let space = single_anchor_space();
    let obs = two_clusters();
    let model = DensityModel::fit(&obs, &space, 0.15, None).unwrap().unwrap();
    let hits = (0..100)
        .filter(|&s| {
            let x = encode(&propose(Some(&model), &space, 64, s).unwrap(), &space).unwrap();
            ((x[1] - GOOD.0.ln()).powi(2) + (x[2] - GOOD.1.ln()).powi(2)).sqrt() < 0.6
        })
        .count();

    // Midpoint quadrature over the log coordinates; the count dimension has one category.
    let (n, (x0, x1), (y0, y1)) = (400, (-2.0, 6.5), (-4.0, 3.5));
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let mass = |kde: &aabo_core::density::Kde| {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += kde.pdf(&[1.0, x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy]);
            }
        }
        total * dx * dy
    };
    let block = &model.blocks[0];
    let masses = [mass(&block.good), mass(&block.bad)];
    assert_eq!(dim_kinds(&space).len(), 3);
    let normalized = masses.iter().all(|m| (0.98..=1.02).contains(m));
    outcome(
        hits >= 90 && normalized,
        format!("{hits}/100 proposals in the low-loss cluster, masses good {:.4} bad {:.4}", masses[0], masses[1]),
    )
}

const APPENDIX_CONFIG: &str = include_str!("fixtures/appendix_config.json");

/// One search region wide enough for every level of the appendix table.
fn appendix_space() -> SearchSpace {
    let levels = (0..5)
        .map(|l| LevelSpace {
            level: l,
            stride: 4 << l,
            anchor_count: CountRange { min: 1, max: 9 },
            scale_range: Interval::new(3.0, 16.0),
            ratio_range: Interval::new(0.2, 6.0),
        })
        .collect();
    SearchSpace::new(GlobalLimits::new(1333.0, 1333.0).unwrap(), 32.0, levels).unwrap()
}

fn appendix_fixture() -> Outcome {
    let config = match AnchorConfiguration::from_json(APPENDIX_CONFIG) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("parse: {e}")),
    };
    let counts: Vec<usize> = config.levels.iter().map(Vec::len).collect();
    let first: Vec<(f64, f64)> = config.levels[0].iter().map(|p| (p.scale, p.ratio)).collect();
    let expected_first = [(5.2, 6.0), (6.1, 0.3), (3.4, 0.5), (4.9, 1.6), (5.8, 1.7), (4.8, 2.6), (14.6, 0.5), (7.4, 0.5), (10.3, 0.6)];
    let space = appendix_space();
    let valid = config.validate(&space);
    let space_round_trip = SearchSpace::from_json(&space.to_json()).map(|s| s.to_json() == space.to_json()).unwrap_or(false);
    let pass = counts == [9, 6, 7, 6, 5]
        && first == expected_first
        && valid.is_ok()
        && config.to_json() == APPENDIX_CONFIG
        && space_round_trip;
    outcome(pass, format!("counts {counts:?}, validation {valid:?}, byte-identical round trip {}", config.to_json() == APPENDIX_CONFIG))
}

fn determinism_and_resume() -> Outcome {
    let boxes = common::detection_boxes(200, 8);
    let space = common::five_level_space(&boxes);
    let obj = CoverageObjective::new(boxes, &space, "synthetic-200").unwrap();
    let cfg = EngineConfig { pool_size: 4, budgets_per_generation: 6, generations: 3, n_candidates: 16, seed: 21, ..EngineConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"), dir.path().join("c.jsonl"));

    let engine = SearchEngine::new(&space, &obj, cfg).unwrap();
    let full = engine.run_logged(&a).unwrap();
    let again = engine.run_logged(&b).unwrap();
    let same_hash = determinism_hash(&a).unwrap() == determinism_hash(&b).unwrap() && full == again;

    // Kill in the middle of the second generation, mid-line.
    let text = std::fs::read_to_string(&a).unwrap();
    let lines = read_log(&a).unwrap().entries.len();
    let keep: usize = text.lines().take(lines / 2).map(|l| l.len() + 1).sum();
    std::fs::write(&c, &text.as_bytes()[..keep + 10]).unwrap();
    let resumed = engine.resume(&c).unwrap();
    let resume_ok = resumed == full && resumed.new_evaluations > 0 && determinism_hash(&c).unwrap() == determinism_hash(&a).unwrap();
    outcome(
        same_hash && resume_ok,
        format!(
            "repeat run hash equal {same_hash}; resume from line {} of {lines} equal {resume_ok} ({} new evaluations)",
            lines / 2,
            resumed.new_evaluations
        ),
    )
}
