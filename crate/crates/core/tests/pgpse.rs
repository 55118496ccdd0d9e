mod common;

use parex::mdp::{make_room, TabularMdp, Variant};
use parex::pgpse::{pgpse_gradient_estimate, sample_batch_item, train_pgpse, train_single_baseline, PgpseConfig};
use parex::policy::ParallelPolicy;

#[test]
fn exact_gradient_matches_finite_differences() {
    for case in common::gradient_cases(3, 11) {
        let exact = common::exact_gradient(&case.mdp, &case.thetas, 1);
        let fd = common::finite_difference_gradient(&case.mdp, &case.thetas, 1, 1e-5);
        let err = common::relative_error(&exact, &fd, 1e-6);
        assert!(err < 1e-4, "{}: relative error {err:e}", case.label);
    }
}

#[test]
fn pooled_trajectories_gradient_matches_finite_differences() {
    // K = 2 episodes per agent pooled into one distribution.
    let mut rng = common::test_rng(5);
    for m in 1..=2 {
        let mdp = common::random_mdp(&mut rng, 2, 2, 2, 2, false);
        let thetas: Vec<Vec<f64>> = (0..m).map(|i| vec![0.3 * i as f64, -0.4, 0.7, 0.1]).collect();
        let exact = common::exact_gradient(&mdp, &thetas, 2);
        let fd = common::finite_difference_gradient(&mdp, &thetas, 2, 1e-5);
        assert!(common::relative_error(&exact, &fd, 1e-6) < 1e-4);
    }
}

#[test]
fn monte_carlo_mean_is_within_three_standard_errors() {
    let case = common::nontrivial_gradient_case();
    let exact = common::exact_gradient(&case.mdp, &case.thetas, 1);
    assert!(exact.iter().flatten().any(|g| g.abs() > 1e-2));
    let (mean, se) = common::monte_carlo_gradient(&case.mdp, &case.thetas, 200_000, 3);
    let z = common::worst_z(&mean, &se, &exact);
    assert!(z < 3.0, "worst z {z}");
}

#[test]
fn single_step_single_agent_gradient_vanishes() {
    // With one counted state per trajectory the entropy is always zero.
    let mut rng = common::test_rng(2);
    let mdp = common::random_mdp(&mut rng, 2, 2, 1, 2, false);
    let thetas = vec![vec![0.5, -0.5, 0.2, 0.0]];
    assert!(common::exact_gradient(&mdp, &thetas, 1).iter().flatten().all(|&g| g == 0.0));
    let (mean, se) = common::monte_carlo_gradient(&mdp, &thetas, 10_000, 1);
    assert!(mean.iter().flatten().chain(se.iter().flatten()).all(|&x| x == 0.0));
}

#[test]
fn batch_estimate_averages_item_samples() {
    let case = common::nontrivial_gradient_case();
    let policies = common::parallel_policy(&case.mdp, &case.thetas);
    let cfg = PgpseConfig { num_agents: 2, batch_size: 50, seed: 8, ..PgpseConfig::default() };
    let batch = pgpse_gradient_estimate(&policies, &case.mdp, &cfg, 4).unwrap();
    let mut manual = vec![vec![0.0; 6]; 2];
    for item in 0..50 {
        let it = sample_batch_item(&policies, &case.mdp, 1, false, 8, 4, item).unwrap();
        for (acc, g) in manual.iter_mut().zip(it.gradient_sample()) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
    for (b, m) in batch.iter().flatten().zip(manual.iter().flatten()) {
        assert!((b - m / 50.0).abs() < 1e-14);
    }
}

#[test]
fn trajectory_averaging_scales_by_k() {
    let case = common::nontrivial_gradient_case();
    let policies = common::parallel_policy(&case.mdp, &case.thetas);
    let base = PgpseConfig { num_agents: 2, trajectories_per_agent: 3, batch_size: 20, ..PgpseConfig::default() };
    let averaged = pgpse_gradient_estimate(&policies, &case.mdp, &base, 0).unwrap();
    let summed = pgpse_gradient_estimate(
        &policies,
        &case.mdp,
        &PgpseConfig { average_over_trajectories: false, ..base },
        0,
    )
    .unwrap();
    for (a, s) in averaged.iter().flatten().zip(summed.iter().flatten()) {
        assert!((a * 3.0 - s).abs() < 1e-12);
    }
}

#[test]
fn swapping_agents_permutes_gradients() {
    // Per-agent streams are keyed by agent index, so swap the policies and
    // compare the exact expectations, which carry no sampling noise.
    let case = common::nontrivial_gradient_case();
    let swapped: Vec<Vec<f64>> = case.thetas.iter().rev().cloned().collect();
    let g = common::exact_gradient(&case.mdp, &case.thetas, 1);
    let h = common::exact_gradient(&case.mdp, &swapped, 1);
    // Summation order differs between the two enumerations.
    for (x, y) in g[0].iter().chain(&g[1]).zip(h[1].iter().chain(&h[0])) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

fn train_in_pool(threads: usize, mdp: &TabularMdp, cfg: &PgpseConfig) -> (ParallelPolicy, Vec<String>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let (p, m) = train_pgpse(mdp, cfg).unwrap();
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        (p, String::from_utf8(csv).unwrap().lines().map(str::to_string).collect())
    })
}

#[test]
fn training_is_identical_across_worker_counts() {
    let mdp = make_room(Variant::Stoc, 0.1).unwrap();
    let cfg = PgpseConfig { episodes: 30, num_agents: 3, trajectories_per_agent: 2, seed: 42, ..PgpseConfig::default() };
    let (p1, m1) = train_in_pool(1, &mdp, &cfg);
    let (p4, m4) = train_in_pool(4, &mdp, &cfg);
    assert_eq!(m1, m4);
    for (a, b) in p1.agents().iter().zip(p4.agents()) {
        assert_eq!(a.theta(), b.theta());
    }
}

#[test]
fn single_baseline_with_one_trial_is_one_agent_training() {
    let mdp = make_room(Variant::Det, 0.0).unwrap();
    let cfg = PgpseConfig { episodes: 20, num_agents: 1, seed: 3, ..PgpseConfig::default() };
    let (p, m) = train_pgpse(&mdp, &cfg).unwrap();
    let (q, n) = train_single_baseline(&mdp, &cfg, 1).unwrap();
    assert_eq!(p.agents()[0].theta(), q.theta());
    assert_eq!(m.records, n.records);
}

#[test]
fn zero_step_size_leaves_policies_uniform() {
    let mdp = make_room(Variant::Det, 0.0).unwrap();
    let cfg = PgpseConfig { episodes: 20, learning_rate: 0.0, ..PgpseConfig::default() };
    let (p, m) = train_pgpse(&mdp, &cfg).unwrap();
    assert!(p.agents().iter().all(|a| a.theta().iter().all(|&x| x == 0.0)));
    // No learning: the curve fluctuates around a constant.
    let first: f64 = m.records[..10].iter().map(|r| r.norm_entropy).sum::<f64>() / 10.0;
    let last: f64 = m.records[10..].iter().map(|r| r.norm_entropy).sum::<f64>() / 10.0;
    assert!((first - last).abs() < 0.05);
}

#[test]
fn room_entropy_improves_over_full_training() {
    let mdp = make_room(Variant::Det, 0.0).unwrap();
    let cfg = PgpseConfig { num_agents: 2, seed: 0, ..PgpseConfig::default() };
    let (_, metrics) = train_pgpse(&mdp, &cfg).unwrap();
    let smooth = |i: usize| metrics.records[i..i + 100].iter().map(|r| r.norm_entropy).sum::<f64>() / 100.0;
    let n = metrics.records.len();
    assert_eq!(n, 10_000);
    let start = metrics.records[0].norm_entropy;
    let end = smooth(n - 100);
    assert!(end - start >= 0.2, "start {start}, end {end}");
    // Smoothed curve rises between well-separated windows.
    let checkpoints: Vec<f64> = (0..n / 1000).map(|k| smooth(k * 1000)).collect();
    assert!(checkpoints.windows(2).all(|w| w[1] >= w[0] - 0.01), "{checkpoints:?}");
}
