//! Cross-module invariants, checked over random inputs.

mod common;

use aabo_core::density::{encode, propose, DensityModel, Observation};
use aabo_core::objectives::bandit::{regret_table, ArmSpec, BanditPolicy, BanditSpec};
use aabo_core::scheduler::{threshold, SubsampleScheduler};
use aabo_core::space::{box_to_scale_ratio, build_space, kmeans, sample_configuration, SpaceParams};
use aabo_core::{seed, BoxRecord, GlobalLimits};
use proptest::prelude::*;
use rand::Rng;

fn random_boxes(n: usize, seed: u64) -> Vec<BoxRecord> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|i| {
            let s = rng.random_range(3f64.ln()..600f64.ln()).exp();
            let r = rng.random_range(0.2f64.ln()..5f64.ln()).exp();
            BoxRecord { width: s / r.sqrt(), height: s * r.sqrt(), image_id: i as u64 }
        })
        .collect()
}

#[test]
fn box_round_trip() {
    let mut rng = seed::rng(1);
    for _ in 0..10_000 {
        let w = rng.random_range(0.5..2000.0);
        let h = rng.random_range(0.5..2000.0);
        let p = box_to_scale_ratio(&BoxRecord { width: w, height: h, image_id: 0 }).unwrap();
        assert!((p.width() - w).abs() <= 1e-9 * w, "{w} -> {}", p.width());
        assert!((p.height() - h).abs() <= 1e-9 * h, "{h} -> {}", p.height());
    }
}

/// Every round of one SMC run, with per-arm pull counts at planning time.
fn rounds_with_counts(k: usize, horizon: usize, seed: u64) -> Vec<(usize, Option<usize>, usize, Vec<usize>, Vec<usize>)> {
    let mut rng = seed::rng(seed);
    let mus: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut sched = SubsampleScheduler::new(k, horizon, seed).unwrap();
    let mut out = Vec::new();
    loop {
        let counts: Vec<usize> = sched.state().arms.iter().map(|a| a.pulls()).collect();
        let Some(round) = sched.next_round() else { break };
        out.push((round.round, round.leader, round.total_before, counts, round.pulls.clone()));
        let rewards: Vec<f64> = round.pulls.iter().map(|&a| mus[a] + rng.random_range(-1.5..1.5)).collect();
        sched.complete_round(&rewards).unwrap();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn built_spaces_shrink_across_levels(n in 1usize..300, levels in 1usize..6, s in any::<u64>()) {
        let boxes = random_boxes(n, s);
        let space = build_space(&boxes, levels, GlobalLimits::new(1333.0, 800.0).unwrap(), &SpaceParams::default()).unwrap();
        for w in space.levels.windows(2) {
            prop_assert!(w[1].anchor_count.max <= w[0].anchor_count.max);
            prop_assert!(w[1].scale_range.log_width() <= w[0].scale_range.log_width() + 1e-12);
            prop_assert!(w[1].ratio_range.log_width() <= w[0].ratio_range.log_width() + 1e-12);
        }
    }

    #[test]
    fn samples_validate(n in 1usize..200, levels in 1usize..6, s in any::<u64>()) {
        let space = build_space(&random_boxes(n, s), levels, GlobalLimits::new(1333.0, 800.0).unwrap(), &SpaceParams::default()).unwrap();
        for i in 0..8 {
            sample_configuration(&space, s ^ i).unwrap().validate(&space).unwrap();
        }
    }

    #[test]
    fn lloyd_iterations_never_increase_wss(n in 2usize..200, k in 1usize..10, s in any::<u64>()) {
        let points: Vec<_> = random_boxes(n, s).iter().map(|b| box_to_scale_ratio(b).unwrap()).collect();
        let k = k.min(n);
        if let Ok(r) = kmeans(&points, k, s) {
            for w in r.wss_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.wss_history);
            }
        }
    }

    #[test]
    fn round_accounting(k in prop::sample::select(vec![2usize, 5, 10]), extra in 0usize..300, s in any::<u64>()) {
        for (r, leader, n, counts, pulls) in rounds_with_counts(k, k + extra, s) {
            if r == 1 {
                prop_assert_eq!(pulls.len(), k);
                continue;
            }
            prop_assert!(k + r - 2 <= n && n <= k + (k - 1) * (r - 2), "r={} n={}", r, n);
            prop_assert!(!pulls.is_empty() && pulls.len() < k);
            let leader = leader.unwrap();
            prop_assert_eq!(counts[leader], *counts.iter().max().unwrap());
            if pulls == [leader] {
                continue;
            }
            prop_assert!(!pulls.contains(&leader));
        }
    }

    /// An arm behind the leader with fewer than `c_n` budgets is never
    /// skipped in a round the horizon does not cut short.
    #[test]
    fn no_early_discard(k in 2usize..12, extra in 0usize..300, s in any::<u64>()) {
        for (r, leader, n, counts, pulls) in rounds_with_counts(k, k + extra, s) {
            if r == 1 {
                continue;
            }
            let leader = leader.unwrap();
            let starved: Vec<usize> = (0..k)
                .filter(|&a| a != leader && counts[a] < counts[leader] && (counts[a] as f64) < threshold(n))
                .collect();
            // With fewer than k-1 units left the round may be truncated, and
            // arms qualifying on their means compete for the same slots.
            if k + extra - n >= k - 1 {
                for a in starved {
                    prop_assert!(pulls.contains(&a), "round {} skipped arm {} with {} pulls", r, a, counts[a]);
                }
            }
        }
    }

    #[test]
    fn proposals_validate_and_repeat(s in any::<u64>()) {
        let boxes = common::detection_boxes(150, s);
        let space = common::five_level_space(&boxes);
        let obs: Vec<Observation> = (0..24)
            .map(|i| {
                let c = sample_configuration(&space, s.wrapping_add(i)).unwrap();
                Observation { x: encode(&c, &space).unwrap(), y: -(c.num_anchors() as f64) }
            })
            .collect();
        let model = DensityModel::fit(&obs, &space, 0.15, Some(8)).unwrap().unwrap();
        let a = propose(Some(&model), &space, 16, s).unwrap();
        a.validate(&space).unwrap();
        prop_assert_eq!(a, propose(Some(&model), &space, 16, s).unwrap());
    }
}

#[test]
fn best_arm_share_grows_with_horizon() {
    let arms = (0..10).map(|i| ArmSpec::Gaussian { mu: 0.3 * i as f64, sigma: 1.0 }).collect();
    let spec = BanditSpec::new(arms).unwrap();
    let shares: Vec<f64> = [500, 2000, 8000]
        .iter()
        .map(|&n| *regret_table(&spec, BanditPolicy::Smc, n, 50, 9).unwrap().best_arm_pull_frac.last().unwrap())
        .collect();
    assert!(shares[0] < shares[1] && shares[1] < shares[2], "{shares:?}");
}
