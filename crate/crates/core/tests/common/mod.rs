//! Brute-force reference computations shared by the integration tests and
//! the acceptance suite. Nothing here calls into the code under test except
//! to read MDP transition tables.

#![allow(dead_code)]

use parex::mdp::TabularMdp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random MDP. Each `(s, a)` row spreads mass over at most `fanout` distinct
/// successors; the initial distribution is a point mass on state 0 or has full
/// support.
pub fn random_mdp(rng: &mut ChaCha8Rng, s: usize, a: usize, horizon: usize, fanout: usize, point_initial: bool) -> TabularMdp {
    let mut kernel = vec![0.0; s * a * s];
    for row in kernel.chunks_mut(s) {
        let k = fanout.clamp(1, s);
        let mut picked = Vec::with_capacity(k);
        while picked.len() < k {
            let c = rng.random_range(0..s);
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        let w: Vec<f64> = picked.iter().map(|_| 0.1 + rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        for (&c, x) in picked.iter().zip(w) {
            row[c] = x / total;
        }
    }
    let initial = if point_initial {
        let mut v = vec![0.0; s];
        v[0] = 1.0;
        v
    } else {
        let w: Vec<f64> = (0..s).map(|_| 0.1 + rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    };
    TabularMdp::from_dense(s, a, |x, y, z| kernel[(x * a + y) * s + z], initial, horizon).unwrap()
}

pub fn softmax_row(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// A complete episode `s_0 a_0 ... s_T` with its probability.
#[derive(Debug, Clone)]
pub struct Path {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub prob: f64,
}

/// All positive-probability episodes of the softmax policy with logits
/// `theta` (row-major `S x A`).
pub fn enumerate_paths(mdp: &TabularMdp, theta: &[f64]) -> Vec<Path> {
    let (ns, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let pi: Vec<Vec<f64>> = (0..ns).map(|s| softmax_row(&theta[s * na..(s + 1) * na])).collect();
    let mut out = Vec::new();
    fn extend(mdp: &TabularMdp, pi: &[Vec<f64>], horizon: usize, path: &mut Path, out: &mut Vec<Path>) {
        if path.actions.len() == horizon {
            out.push(path.clone());
            return;
        }
        let s = *path.states.last().unwrap();
        let prob = path.prob;
        for (a, &pa) in pi[s].iter().enumerate() {
            for s2 in 0..mdp.num_states() {
                let p = mdp.prob(s, a, s2);
                if p == 0.0 || pa == 0.0 {
                    continue;
                }
                path.states.push(s2);
                path.actions.push(a);
                path.prob = prob * pa * p;
                extend(mdp, pi, horizon, path, out);
                path.states.pop();
                path.actions.pop();
            }
        }
        path.prob = prob;
    }
    for (s0, &mu) in mdp.initial_dist().iter().enumerate() {
        if mu > 0.0 {
            let mut path = Path { states: vec![s0], actions: vec![], prob: mu };
            extend(mdp, &pi, horizon, &mut path, &mut out);
        }
    }
    out
}

fn plug_in_entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Visits `(joint probability, H(pooled d_p), slot paths)` for every joint
/// outcome of `m` agents with `k` episodes each. Terminal states are not
/// counted.
fn for_each_joint<F: FnMut(f64, f64, &[&Path])>(mdp: &TabularMdp, thetas: &[Vec<f64>], k: usize, mut f: F) {
    let per_agent: Vec<Vec<Path>> = thetas.iter().map(|t| enumerate_paths(mdp, t)).collect();
    let slots: Vec<usize> = (0..thetas.len()).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let mut idx = vec![0usize; slots.len()];
    let mut counts = vec![0u64; mdp.num_states()];
    let horizon = mdp.horizon();
    loop {
        let chosen: Vec<&Path> = slots.iter().zip(&idx).map(|(&i, &j)| &per_agent[i][j]).collect();
        counts.iter_mut().for_each(|c| *c = 0);
        let mut prob = 1.0;
        for p in &chosen {
            prob *= p.prob;
            for &s in &p.states[..horizon] {
                counts[s] += 1;
            }
        }
        f(prob, plug_in_entropy(&counts), &chosen);
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return;
            }
            idx[pos] += 1;
            if idx[pos] < per_agent[slots[pos]].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// `J_p = E[H(d_p)]` by exhaustive enumeration.
pub fn exact_objective(mdp: &TabularMdp, thetas: &[Vec<f64>], k: usize) -> f64 {
    let mut j = 0.0;
    for_each_joint(mdp, thetas, k, |p, h, _| j += p * h);
    j
}

/// `grad_i J_p = E[score_i * H(d_p)]` by exhaustive enumeration, where
/// `score_i` sums over all `k` of agent `i`'s episodes.
pub fn exact_gradient(mdp: &TabularMdp, thetas: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let pi: Vec<Vec<Vec<f64>>> = thetas
        .iter()
        .map(|t| (0..ns).map(|s| softmax_row(&t[s * na..(s + 1) * na])).collect())
        .collect();
    let mut grads = vec![vec![0.0; ns * na]; thetas.len()];
    for_each_joint(mdp, thetas, k, |p, h, chosen| {
        for (slot, path) in chosen.iter().enumerate() {
            let i = slot / k;
            for (t, &a) in path.actions.iter().enumerate() {
                let s = path.states[t];
                for b in 0..na {
                    let indicator = if a == b { 1.0 } else { 0.0 };
                    grads[i][s * na + b] += p * h * (indicator - pi[i][s][b]);
                }
            }
        }
    });
    grads
}

/// Central differences of `exact_objective` in every logit.
pub fn finite_difference_gradient(mdp: &TabularMdp, thetas: &[Vec<f64>], k: usize, h: f64) -> Vec<Vec<f64>> {
    let mut grads = Vec::with_capacity(thetas.len());
    for i in 0..thetas.len() {
        let mut g = vec![0.0; thetas[i].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let mut plus = thetas.to_vec();
            let mut minus = thetas.to_vec();
            plus[i][j] += h;
            minus[i][j] -= h;
            *gj = (exact_objective(mdp, &plus, k) - exact_objective(mdp, &minus, k)) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// `max |a - b| / max(max |a|, floor)` over all entries.
pub fn relative_error(a: &[Vec<f64>], b: &[Vec<f64>], floor: f64) -> f64 {
    let scale = a.iter().flatten().fold(floor, |m, x| m.max(x.abs()));
    let diff = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

/// Best value of `E[sum_{t<T} r(s_t)]` over all deterministic time-indexed
/// policies, by enumerating every decision rule on the states that carry
/// mass at each step. Actions with identical successor rows are
/// interchangeable and enumerated once. Returns the value and the number of
/// complete policies evaluated.
pub fn exhaustive_plan_value(mdp: &TabularMdp, reward: &[f64]) -> (f64, u64) {
    let ns = mdp.num_states();
    let horizon = mdp.horizon();
    // Distinct actions per state.
    let choices: Vec<Vec<usize>> = (0..ns)
        .map(|s| {
            let mut reps: Vec<usize> = Vec::new();
            for a in 0..mdp.num_actions() {
                if !reps.iter().any(|&b| mdp.successors(s, b) == mdp.successors(s, a)) {
                    reps.push(a);
                }
            }
            reps
        })
        .collect();
    // Expected reward one step after taking `a` in `s`.
    let next_reward: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| mdp.successors(s, a).iter().map(|&(s2, p)| p * reward[s2]).sum())
                .collect()
        })
        .collect();
    let ctx = Search { mdp, reward, choices: &choices, next_reward: &next_reward, horizon };
    let mut best = f64::NEG_INFINITY;
    let mut leaves = 0u64;
    let mut levels: Vec<Level> = (0..horizon)
        .map(|_| Level {
            next: vec![0.0; ns],
            support: Vec::with_capacity(ns),
            pick: Vec::with_capacity(ns),
            terms: Vec::with_capacity(ns * mdp.num_actions()),
            offsets: Vec::with_capacity(ns + 1),
        })
        .collect();
    ctx.visit(0, mdp.initial_dist(), &mut levels, 0.0, &mut best, &mut leaves);
    (best, leaves)
}

struct Search<'a> {
    mdp: &'a TabularMdp,
    reward: &'a [f64],
    choices: &'a [Vec<usize>],
    next_reward: &'a [Vec<f64>],
    horizon: usize,
}

/// Per-step workspace, reused across the whole search.
struct Level {
    next: Vec<f64>,
    support: Vec<usize>,
    pick: Vec<usize>,
    terms: Vec<f64>,
    offsets: Vec<usize>,
}

impl Search<'_> {
    fn visit(&self, t: usize, mu: &[f64], levels: &mut [Level], acc: f64, best: &mut f64, leaves: &mut u64) {
        let acc = acc + mu.iter().zip(self.reward).map(|(m, r)| m * r).sum::<f64>();
        // The action at the last step never affects a counted state.
        if t + 1 == self.horizon {
            *leaves += 1;
            *best = best.max(acc);
            return;
        }
        let (level, deeper) = levels.split_first_mut().expect("one workspace per step");
        level.support.clear();
        level.support.extend((0..mu.len()).filter(|&s| mu[s] > 0.0));
        level.pick.clear();
        level.pick.resize(level.support.len(), 0);

        if t + 2 == self.horizon {
            // Last decision: every complete policy is scored from its terms.
            level.terms.clear();
            level.offsets.clear();
            for &s in &level.support {
                level.offsets.push(level.terms.len());
                level.terms.extend(self.choices[s].iter().map(|&a| mu[s] * self.next_reward[s][a]));
            }
            loop {
                let mut value = acc;
                for (&off, &c) in level.offsets.iter().zip(&level.pick) {
                    value += level.terms[off + c];
                }
                *leaves += 1;
                if value > *best {
                    *best = value;
                }
                if !advance(&mut level.pick, &level.support, self.choices) {
                    return;
                }
            }
        }
        loop {
            level.next.iter_mut().for_each(|x| *x = 0.0);
            for (&s, &c) in level.support.iter().zip(&level.pick) {
                for &(s2, p) in self.mdp.successors(s, self.choices[s][c]) {
                    level.next[s2] += mu[s] * p;
                }
            }
            self.visit(t + 1, &level.next, deeper, acc, best, leaves);
            if !advance(&mut level.pick, &level.support, self.choices) {
                return;
            }
        }
    }
}

/// Odometer step over the choice lists; false once every combination is done.
fn advance(pick: &mut [usize], support: &[usize], choices: &[Vec<usize>]) -> bool {
    for (p, &s) in pick.iter_mut().zip(support) {
        *p += 1;
        if *p < choices[s].len() {
            return true;
        }
        *p = 0;
    }
    false
}

/// Random `(mdp, reward)` instances for every shape with `S * A * T <= limit`:
/// a sparse one (two successors per row, point-mass start) for every shape,
/// plus a dense one with full-support start where the search stays small.
pub fn planner_cases(limit: usize, seed: u64) -> Vec<(String, TabularMdp, Vec<f64>)> {
    let mut rng = test_rng(seed);
    let mut cases = Vec::new();
    for s in 1..=limit {
        for a in 1..=limit / s {
            for t in 1..=limit / (s * a) {
                let mut push = |rng: &mut ChaCha8Rng, fanout: usize, point: bool, tag: &str| {
                    let mdp = random_mdp(rng, s, a, t, fanout, point);
                    let reward: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
                    cases.push((format!("S={s} A={a} T={t} {tag}"), mdp, reward));
                };
                push(&mut rng, 2, true, "sparse");
                let dense_leaves = (a as f64).powi((s * t.saturating_sub(1)) as i32);
                if dense_leaves <= (1u64 << 22) as f64 {
                    push(&mut rng, s, false, "dense");
                }
            }
        }
    }
    cases
}

pub struct GradientCase {
    pub label: String,
    pub mdp: TabularMdp,
    pub thetas: Vec<Vec<f64>>,
}

/// Random instances over `S <= 3`, `A <= 2`, `T <= 2`, `m <= 2`, `draws` per shape.
pub fn gradient_cases(draws: usize, seed: u64) -> Vec<GradientCase> {
    let mut rng = test_rng(seed);
    let mut cases = Vec::new();
    for s in 1..=3 {
        for a in 1..=2 {
            for t in 1..=2 {
                for m in 1..=2 {
                    for d in 0..draws {
                        let mdp = random_mdp(&mut rng, s, a, t, s, d % 2 == 0);
                        let thetas = (0..m)
                            .map(|_| (0..s * a).map(|_| rng.random_range(-1.5..1.5)).collect())
                            .collect();
                        cases.push(GradientCase {
                            label: format!("S={s} A={a} T={t} m={m} draw={d}"),
                            mdp,
                            thetas,
                        });
                    }
                }
            }
        }
    }
    cases
}

pub fn parallel_policy(mdp: &TabularMdp, thetas: &[Vec<f64>]) -> parex::policy::ParallelPolicy {
    let agents = thetas
        .iter()
        .map(|t| parex::policy::TabularPolicy::from_theta(mdp.num_states(), mdp.num_actions(), t.clone()).unwrap())
        .collect();
    parex::policy::ParallelPolicy::new(agents).unwrap()
}

/// Per-entry mean and standard error of the single-item PGPSE gradient sample
/// over `samples` batch items drawn with `K = 1`.
pub fn monte_carlo_gradient(mdp: &TabularMdp, thetas: &[Vec<f64>], samples: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let policies = parallel_policy(mdp, thetas);
    let len = mdp.num_states() * mdp.num_actions();
    let mut sum = vec![vec![0.0; len]; thetas.len()];
    let mut sq = vec![vec![0.0; len]; thetas.len()];
    for item in 0..samples {
        let batch = parex::pgpse::sample_batch_item(&policies, mdp, 1, false, seed, 0, item).unwrap();
        for (i, g) in batch.gradient_sample().iter().enumerate() {
            for (j, &x) in g.iter().enumerate() {
                sum[i][j] += x;
                sq[i][j] += x * x;
            }
        }
    }
    let n = samples as f64;
    let mean: Vec<Vec<f64>> = sum.iter().map(|r| r.iter().map(|x| x / n).collect()).collect();
    let se = sq
        .iter()
        .zip(&mean)
        .map(|(r, m)| {
            r.iter()
                .zip(m)
                .map(|(s2, mu)| ((s2 / n - mu * mu).max(0.0) * n / (n - 1.0) / n).sqrt())
                .collect()
        })
        .collect();
    (mean, se)
}

/// Largest `|mean - exact| / se`; entries with zero spread must match to 1e-12.
pub fn worst_z(mean: &[Vec<f64>], se: &[Vec<f64>], exact: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for ((m, s), e) in mean.iter().flatten().zip(se.iter().flatten()).zip(exact.iter().flatten()) {
        let diff = (m - e).abs();
        let z = if *s > 0.0 {
            diff / s
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    worst
}

/// A 3-state, 2-action, `T = 2` instance where both agents' gradients are
/// far from zero.
pub fn nontrivial_gradient_case() -> GradientCase {
    let kernel = [
        [[0.7, 0.3, 0.0], [0.1, 0.2, 0.7]],
        [[0.0, 0.6, 0.4], [0.5, 0.0, 0.5]],
        [[0.3, 0.3, 0.4], [0.0, 0.1, 0.9]],
    ];
    let mdp = TabularMdp::from_dense(3, 2, |s, a, n| kernel[s][a][n], vec![0.6, 0.4, 0.0], 2).unwrap();
    GradientCase {
        label: "S=3 A=2 T=2 m=2 fixed".into(),
        mdp,
        thetas: vec![vec![0.4, -0.3, 0.0, 0.8, -0.5, 0.2], vec![-0.6, 0.1, 0.3, -0.2, 0.9, 0.0]],
    }
}

/// `n` states, `n` actions, action `a` moves to state `a` deterministically,
/// start in state 0.
pub fn fully_connected_mdp(n: usize, horizon: usize) -> TabularMdp {
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    TabularMdp::from_dense(n, n, |_, a, s2| if a == s2 { 1.0 } else { 0.0 }, initial, horizon).unwrap()
}

/// Worst planner gap over `cases`: `(|value - exhaustive|, |value - realized|)`
/// maxima, plus total leaves visited by the exhaustive search.
pub fn planner_gaps(cases: &[(String, TabularMdp, Vec<f64>)]) -> (f64, f64, u64, String) {
    let (mut worst, mut worst_realized, mut leaves, mut label) = (0.0f64, 0.0f64, 0u64, String::new());
    for (name, mdp, reward) in cases {
        let (plan, value) = parex::frank_wolfe::approx_plan(mdp, reward).unwrap();
        let (best, n) = exhaustive_plan_value(mdp, reward);
        let realized = parex::frank_wolfe::policy_value(mdp, &plan, reward).unwrap();
        let scale = 1.0 + best.abs();
        let gap = (value - best).abs() / scale;
        if gap > worst {
            worst = gap;
            label = name.clone();
        }
        worst_realized = worst_realized.max((realized - best).abs() / scale);
        leaves += n;
    }
    (worst, worst_realized, leaves, label)
}

/// Weights after `t` pushes with step `eta` onto a single component:
/// `((1-eta)^t, eta (1-eta)^(t-1), ..., eta)`.
pub fn closed_form_weights(t: usize, eta: f64) -> Vec<f64> {
    let mut w = vec![(1.0 - eta).powi(t as i32)];
    w.extend((1..=t).map(|k| eta * (1.0 - eta).powi((t - k) as i32)));
    w
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize, sparsity: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < sparsity { 0.0 } else { rng.random::<f64>().powi(3) })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Largest `|avg_entropy + avg_kl - H(mixture)|` over `count` random mixtures
/// of 2..8 components on 2..50 states, some with sparse supports.
pub fn worst_decomposition_error(count: usize, seed: u64) -> f64 {
    use parex::dist::{entropy, mixture, mixture_entropy_decomposition, MixtureWeights, StateDistribution};
    let mut rng = test_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = rng.random_range(2..=50);
        let m = rng.random_range(2..=8);
        let sparsity = rng.random_range(0.0..0.7);
        let comps: Vec<StateDistribution> =
            (0..m).map(|_| StateDistribution::new(random_simplex(&mut rng, n, sparsity)).unwrap()).collect();
        let weights = MixtureWeights::new(random_simplex(&mut rng, m, 0.0)).unwrap();
        let (h, kl) = mixture_entropy_decomposition(&comps, &weights).unwrap();
        let total = entropy(&mixture(&comps, &weights).unwrap());
        worst = worst.max((h + kl - total).abs());
    }
    worst
}

/// `(avg_entropy, avg_kl)` for `m` disjoint point masses with equal weights.
pub fn disjoint_point_masses(m: usize) -> (f64, f64) {
    use parex::dist::{mixture_entropy_decomposition, MixtureWeights, StateDistribution};
    let comps: Vec<StateDistribution> = (0..m).map(|i| StateDistribution::point_mass(m, i)).collect();
    mixture_entropy_decomposition(&comps, &MixtureWeights::uniform(m)).unwrap()
}

/// Every file under `root` except the manifest (which records wall-clock
/// time), keyed by relative path.
pub fn output_tree(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != parex::harness::run::MANIFEST_FILE {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Runs `text` (plus `overrides`) once per worker count into fresh
/// directories and reports whether every output tree is byte-identical.
pub fn identical_across_workers(text: &str, overrides: &[&str], workers: &[usize]) -> (bool, usize) {
    let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let trees: Vec<_> = workers
        .iter()
        .map(|&w| {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = parex::harness::ExperimentConfig::from_str_with_base(text, &base).unwrap();
            for o in overrides {
                cfg.apply_override(o).unwrap();
            }
            cfg.output = dir.path().join("run");
            cfg.workers = w;
            parex::harness::run(&cfg).unwrap();
            output_tree(&cfg.output)
        })
        .collect();
    let files = trees[0].len();
    (trees.windows(2).all(|w| w[0] == w[1]) && files > 0, files)
}
