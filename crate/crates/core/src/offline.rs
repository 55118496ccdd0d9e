//! Offline evaluation of exploration data: dataset collection, sparse goal
//! relabeling, replay-buffer Q-learning and per-goal success rates.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::dist::{visit_counts, StateDistribution};
use crate::error::{Error, Result};
use crate::mdp::{rollout, TabularMdp, Trajectory};
use crate::policy::ParallelPolicy;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DatasetKind {
    Parallel,
    Single,
    Random,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Parallel, DatasetKind::Single, DatasetKind::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Parallel => "parallel",
            DatasetKind::Single => "single",
            DatasetKind::Random => "random",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown dataset kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub kind: DatasetKind,
    pub seed: u64,
    pub env: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRecord {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub records: Vec<TransitionRecord>,
    pub provenance: Provenance,
    /// Goal used by the last relabeling, if any.
    pub goal: Option<usize>,
}

impl TransitionDataset {
    pub fn from_trajectories(trajectories: &[Trajectory], provenance: Provenance) -> Self {
        let records = trajectories
            .iter()
            .flat_map(|t| t.transitions())
            .map(|(s, a, s_next)| TransitionRecord { s, a, s_next, r: None })
            .collect();
        Self {
            records,
            provenance,
            goal: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distribution of the `s` column, i.e. `s_0..s_{T-1}` of every trajectory.
    pub fn state_distribution(&self, num_states: usize) -> Result<StateDistribution> {
        let mut counts = vec![0u64; num_states];
        for r in &self.records {
            if r.s >= num_states {
                return Err(Error::DimensionMismatch {
                    expected: num_states,
                    actual: r.s + 1,
                    context: "dataset state index",
                });
            }
            counts[r.s] += 1;
        }
        StateDistribution::from_counts(&counts)
    }

    /// Writes `s,a,s_next` rows, plus `r` once relabeled.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let labeled = self.records.iter().all(|r| r.r.is_some()) && !self.records.is_empty();
        let mut w = csv::Writer::from_writer(writer);
        if labeled {
            w.write_record(["s", "a", "s_next", "r"])?;
        } else {
            w.write_record(["s", "a", "s_next"])?;
        }
        for r in &self.records {
            let mut row = vec![r.s.to_string(), r.a.to_string(), r.s_next.to_string()];
            if labeled {
                row.push(format!("{}", r.r.unwrap_or(0.0)));
            }
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Sidecar `key = value` metadata.
    pub fn metadata(&self) -> String {
        let mut out = format!(
            "kind = {}\nseed = {}\nenv = {}\nrecords = {}\n",
            self.provenance.kind,
            self.provenance.seed,
            self.provenance.env,
            self.records.len()
        );
        if let Some(g) = self.goal {
            out.push_str(&format!("goal = {g}\n"));
        }
        out
    }

    pub fn read_csv<R: Read>(reader: R, provenance: Provenance) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let labeled = match headers.iter().collect::<Vec<_>>().as_slice() {
            ["s", "a", "s_next"] => false,
            ["s", "a", "s_next", "r"] => true,
            other => return Err(Error::domain(format!("unexpected dataset header `{}`", other.join(",")))),
        };
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<usize> {
                rec[i].trim().parse().map_err(|_| Error::domain(format!("bad index `{}`", &rec[i])))
            };
            let r = if labeled {
                Some(rec[3].trim().parse::<f64>().map_err(|_| Error::domain(format!("bad reward `{}`", &rec[3])))?)
            } else {
                None
            };
            records.push(TransitionRecord { s: field(0)?, a: field(1)?, s_next: field(2)?, r });
        }
        Ok(Self { records, provenance, goal: None })
    }
}

/// Samples `trajectories_per_agent` episodes from every agent. Agent `i`'s
/// `j`-th episode uses the stream `(seed, i, j)`.
pub fn collect_trajectories(
    policies: &ParallelPolicy,
    mdp: &TabularMdp,
    trajectories_per_agent: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(policies.num_agents() * trajectories_per_agent);
    for (i, policy) in policies.agents().iter().enumerate() {
        for j in 0..trajectories_per_agent {
            let mut rng = rng::stream(seed, &[tag::COLLECT, i as u64, j as u64]);
            out.push(rollout(mdp, policy, i, &mut rng)?);
        }
    }
    Ok(out)
}

/// `m * trajectories_per_agent * T` unlabeled transitions.
pub fn collect_dataset(
    policies: &ParallelPolicy,
    mdp: &TabularMdp,
    trajectories_per_agent: usize,
    provenance: Provenance,
) -> Result<TransitionDataset> {
    let trajectories = collect_trajectories(policies, mdp, trajectories_per_agent, provenance.seed)?;
    Ok(TransitionDataset::from_trajectories(&trajectories, provenance))
}

/// Reward 1 on transitions entering `goal`, 0 otherwise.
pub fn relabel(ds: &TransitionDataset, goal: usize) -> TransitionDataset {
    TransitionDataset {
        records: ds
            .records
            .iter()
            .map(|r| TransitionRecord {
                r: Some(if r.s_next == goal { 1.0 } else { 0.0 }),
                ..*r
            })
            .collect(),
        provenance: ds.provenance.clone(),
        goal: Some(goal),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub q: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            q: vec![0.0; num_states * num_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, lowest index on ties.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        let best = self.max(s);
        row.iter().position(|&x| x == best).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineConfig {
    /// Passes over the buffer.
    pub episodes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub eval_episodes: usize,
    /// `None` uses `2 * (rows + cols)` of the grid.
    pub max_steps: Option<usize>,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            batch_size: 20,
            learning_rate: 0.1,
            discount: 0.99,
            eval_episodes: 100,
            max_steps: None,
        }
    }
}

impl OfflineConfig {
    pub fn max_steps_for(&self, mdp: &TabularMdp) -> usize {
        self.max_steps.unwrap_or_else(|| match mdp.grid() {
            Some(g) => 2 * (g.rows + g.cols),
            None => 2 * mdp.num_states(),
        })
    }
}

/// Replay-buffer Q-learning. Each episode draws `ceil(|ds| / batch)`
/// mini-batches uniformly with replacement; transitions into the relabeled
/// goal are terminal and do not bootstrap.
pub fn offline_q_learning(
    ds: &TransitionDataset,
    num_states: usize,
    num_actions: usize,
    cfg: &OfflineConfig,
    seed: u64,
) -> Result<QTable> {
    if ds.is_empty() {
        return Err(Error::domain("empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("q_batch", "must be positive"));
    }
    if ds
        .records
        .iter()
        .any(|r| r.s >= num_states || r.s_next >= num_states || r.a >= num_actions)
    {
        return Err(Error::domain("dataset index out of range"));
    }
    let mut table = QTable::zeros(num_states, num_actions);
    let mut rng = rng::stream(seed, &[tag::Q_LEARNING]);
    let batches = ds.len().div_ceil(cfg.batch_size);
    for _ in 0..cfg.episodes {
        for _ in 0..batches {
            for _ in 0..cfg.batch_size {
                let rec = ds.records[rng.random_range(0..ds.len())];
                let reward = rec.r.unwrap_or(0.0);
                let bootstrap = if ds.goal == Some(rec.s_next) { 0.0 } else { table.max(rec.s_next) };
                let idx = rec.s * num_actions + rec.a;
                table.q[idx] += cfg.learning_rate * (reward + cfg.discount * bootstrap - table.q[idx]);
            }
        }
    }
    Ok(table)
}

/// Fraction of greedy episodes from the start distribution that occupy
/// `goal` within `max_steps` moves.
pub fn success_rate(
    q: &QTable,
    mdp: &TabularMdp,
    goal: usize,
    eval_episodes: usize,
    max_steps: usize,
    seed: u64,
) -> f64 {
    let episodes = if mdp.is_deterministic() { 1 } else { eval_episodes.max(1) };
    let successes = (0..episodes)
        .filter(|&ep| {
            let mut rng = rng::stream(seed, &[tag::EVALUATION, ep as u64]);
            let mut s = mdp.sample_initial(&mut rng);
            for _ in 0..max_steps {
                if s == goal {
                    return true;
                }
                s = mdp.sample_next(s, q.greedy(s), &mut rng);
            }
            s == goal
        })
        .count();
    successes as f64 / episodes as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalResult {
    pub goal_state: usize,
    pub success_rate: f64,
}

/// Relabel, train and evaluate for every reachable goal; sorted by
/// descending success rate (ties by state index).
pub fn goal_sweep(ds: &TransitionDataset, mdp: &TabularMdp, cfg: &OfflineConfig, seed: u64) -> Result<Vec<GoalResult>> {
    let max_steps = cfg.max_steps_for(mdp);
    let mut results: Vec<GoalResult> = mdp
        .reachable_states()
        .into_par_iter()
        .map(|goal| {
            let goal_seed = rng::derive_seed(seed, &[goal as u64]);
            let labeled = relabel(ds, goal);
            let q = offline_q_learning(&labeled, mdp.num_states(), mdp.num_actions(), cfg, goal_seed)?;
            Ok(GoalResult {
                goal_state: goal,
                success_rate: success_rate(&q, mdp, goal, cfg.eval_episodes, max_steps, goal_seed),
            })
        })
        .collect::<Result<_>>()?;
    results.sort_by(|a, b| {
        b.success_rate
            .total_cmp(&a.success_rate)
            .then(a.goal_state.cmp(&b.goal_state))
    });
    Ok(results)
}

pub fn count_at_least(results: &[GoalResult], threshold: f64) -> usize {
    results.iter().filter(|r| r.success_rate >= threshold).count()
}

pub fn write_success_csv<W: Write>(rows: &[(DatasetKind, Vec<GoalResult>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["goal_state", "success_rate", "dataset_kind"])?;
    for (kind, results) in rows {
        for r in results {
            w.write_record([r.goal_state.to_string(), format!("{:.17e}", r.success_rate), kind.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Pooled state distribution of trajectories, as used for dataset entropy.
pub fn trajectories_distribution(trajectories: &[Trajectory], num_states: usize) -> Result<StateDistribution> {
    StateDistribution::from_counts(&visit_counts(trajectories, num_states, false)?)
}
