//! Centralized policy-gradient ascent on the parallel state entropy.
//!
//! Each update draws `B` batch items. In one item every agent rolls `K`
//! trajectories, the pooled empirical distribution `d_p` of all `m * K`
//! trajectories is formed, and agent `i` accumulates its score times the
//! shared `H(d_p)`. The agent's score is the mean over its `K` trajectories
//! (or their sum, with `average_over_trajectories` off). The sum over items is
//! divided by `B` before the step `theta_i += alpha * lambda^e * grad_i`.

use std::time::Instant;

use rayon::prelude::*;

use crate::dist::{entropy_of_counts, visit_counts};
use crate::error::{Error, Result};
use crate::mdp::{rollout, TabularMdp, Trajectory};
use crate::policy::{accumulate_score, ParallelPolicy, TabularPolicy};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct PgpseConfig {
    /// Number of updates `N`.
    pub episodes: usize,
    /// Trajectories per agent per batch item, `K`.
    pub trajectories_per_agent: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-update multiplicative learning-rate decay.
    pub decay: f64,
    pub num_agents: usize,
    pub seed: u64,
    /// Count `s_T` in the empirical distribution.
    pub include_terminal: bool,
    /// Subtract the batch-mean entropy from each item's weight.
    pub entropy_baseline: bool,
    /// Divide each agent's summed score by `K`. With `K = 1` this is a no-op.
    pub average_over_trajectories: bool,
}

impl Default for PgpseConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            trajectories_per_agent: 1,
            batch_size: 40,
            learning_rate: 0.1,
            decay: 0.999,
            num_agents: 2,
            seed: 0,
            include_terminal: false,
            entropy_baseline: false,
            average_over_trajectories: true,
        }
    }
}

impl PgpseConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episodes", self.episodes),
            ("K", self.trajectories_per_agent),
            ("B", self.batch_size),
            ("m", self.num_agents),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("alpha", "must be a non-negative finite number"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("lambda", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Environment interactions consumed by one update, `B * m * K * T`.
    pub fn steps_per_update(&self, horizon: usize) -> u64 {
        (self.batch_size * self.num_agents * self.trajectories_per_agent * horizon) as u64
    }

    fn score_scale(&self) -> f64 {
        if self.average_over_trajectories {
            1.0 / self.trajectories_per_agent as f64
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub update: usize,
    /// Cumulative environment steps after this update.
    pub env_steps: u64,
    /// Batch mean of the normalized entropy of the pooled distribution.
    pub norm_entropy: f64,
    /// Batch mean of the pooled support size.
    pub support: f64,
    /// Batch mean of each agent's own normalized entropy.
    pub agent_entropy: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingMetrics {
    pub records: Vec<UpdateRecord>,
    /// Seconds since training started, one entry per record. Not part of the
    /// deterministic output.
    pub wall_clock: Vec<f64>,
}

impl TrainingMetrics {
    pub const CSV_HEADER: [&'static str; 6] =
        ["update", "env_steps", "norm_entropy", "support", "agent_id", "agent_entropy"];

    /// One row per (update, agent).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            for (agent, h) in r.agent_entropy.iter().enumerate() {
                w.write_record([
                    r.update.to_string(),
                    r.env_steps.to_string(),
                    format!("{:.17e}", r.norm_entropy),
                    format!("{:.17e}", r.support),
                    agent.to_string(),
                    format!("{h:.17e}"),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Mean of `(norm_entropy, support)` over the last `window` records.
    pub fn final_values(&self, window: usize) -> (f64, f64) {
        let n = self.records.len();
        let tail = &self.records[n.saturating_sub(window.max(1))..];
        if tail.is_empty() {
            return (0.0, 0.0);
        }
        let k = tail.len() as f64;
        (
            tail.iter().map(|r| r.norm_entropy).sum::<f64>() / k,
            tail.iter().map(|r| r.support).sum::<f64>() / k,
        )
    }
}

/// Everything one batch item contributes to an update.
#[derive(Debug, Clone)]
pub struct BatchItem {
    /// `trajectories[i]` holds agent `i`'s `K` trajectories.
    pub trajectories: Vec<Vec<Trajectory>>,
    /// Entropy of the pooled empirical distribution (nats).
    pub joint_entropy: f64,
    pub joint_support: usize,
    /// Entropy of each agent's own empirical distribution (nats).
    pub agent_entropy: Vec<f64>,
    /// Summed score of each agent's `K` trajectories.
    pub scores: Vec<Vec<f64>>,
}

impl BatchItem {
    /// `score_i * H(d_p)` for every agent: the single-item gradient sample.
    pub fn gradient_sample(&self) -> Vec<Vec<f64>> {
        self.scores
            .iter()
            .map(|s| s.iter().map(|g| g * self.joint_entropy).collect())
            .collect()
    }
}

/// Draws one batch item. Agent `i`'s `k`-th rollout uses the stream
/// `(seed, episode, item, i, k)`.
pub fn sample_batch_item(
    policies: &ParallelPolicy,
    mdp: &TabularMdp,
    trajectories_per_agent: usize,
    include_terminal: bool,
    seed: u64,
    episode: usize,
    item: usize,
) -> Result<BatchItem> {
    let n = mdp.num_states();
    let mut trajectories = Vec::with_capacity(policies.num_agents());
    let mut scores = Vec::with_capacity(policies.num_agents());
    let mut agent_entropy = Vec::with_capacity(policies.num_agents());
    for (i, policy) in policies.agents().iter().enumerate() {
        let mut own = Vec::with_capacity(trajectories_per_agent);
        let mut score = vec![0.0; policy.theta().len()];
        for k in 0..trajectories_per_agent {
            let mut rng = rng::stream(seed, &[tag::PGPSE, episode as u64, item as u64, i as u64, k as u64]);
            let traj = rollout(mdp, policy, i, &mut rng)?;
            accumulate_score(policy, &traj, 1.0, &mut score);
            own.push(traj);
        }
        agent_entropy.push(entropy_of_counts(&visit_counts(&own, n, include_terminal)?));
        scores.push(score);
        trajectories.push(own);
    }
    let joint = visit_counts(trajectories.iter().flatten(), n, include_terminal)?;
    Ok(BatchItem {
        joint_entropy: entropy_of_counts(&joint),
        joint_support: joint.iter().filter(|&&c| c > 0).count(),
        agent_entropy,
        scores,
        trajectories,
    })
}

fn sample_batch(policies: &ParallelPolicy, mdp: &TabularMdp, cfg: &PgpseConfig, episode: usize) -> Result<Vec<BatchItem>> {
    (0..cfg.batch_size)
        .into_par_iter()
        .map(|b| {
            sample_batch_item(
                policies,
                mdp,
                cfg.trajectories_per_agent,
                cfg.include_terminal,
                cfg.seed,
                episode,
                b,
            )
        })
        .collect()
}

/// Sums item contributions in batch order, then divides by `B` and applies
/// the per-agent score scale.
fn reduce_gradient(items: &[BatchItem], num_agents: usize, table_len: usize, cfg: &PgpseConfig) -> Vec<Vec<f64>> {
    let offset = if cfg.entropy_baseline {
        items.iter().map(|it| it.joint_entropy).sum::<f64>() / items.len() as f64
    } else {
        0.0
    };
    let mut grads = vec![vec![0.0; table_len]; num_agents];
    for item in items {
        let weight = item.joint_entropy - offset;
        for (g, s) in grads.iter_mut().zip(&item.scores) {
            for (acc, x) in g.iter_mut().zip(s) {
                *acc += x * weight;
            }
        }
    }
    let b = items.len() as f64;
    let scale = cfg.score_scale();
    for g in &mut grads {
        for x in g.iter_mut() {
            *x = *x / b * scale;
        }
    }
    grads
}

/// Monte-Carlo estimate of the gradient of the parallel finite-trials
/// objective for each agent, using the update-`episode` streams of `cfg.seed`.
pub fn pgpse_gradient_estimate(
    policies: &ParallelPolicy,
    mdp: &TabularMdp,
    cfg: &PgpseConfig,
    episode: usize,
) -> Result<Vec<Vec<f64>>> {
    check_dims(policies, mdp)?;
    let items = sample_batch(policies, mdp, cfg, episode)?;
    Ok(reduce_gradient(
        &items,
        policies.num_agents(),
        mdp.num_states() * mdp.num_actions(),
        cfg,
    ))
}

fn check_dims(policies: &ParallelPolicy, mdp: &TabularMdp) -> Result<()> {
    if policies.num_states() != mdp.num_states() || policies.num_actions() != mdp.num_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.num_states() * mdp.num_actions(),
            actual: policies.num_states() * policies.num_actions(),
            context: "policy table vs MDP",
        });
    }
    Ok(())
}

fn normalizer(mdp: &TabularMdp) -> f64 {
    let r = mdp.num_reachable();
    if r < 2 {
        0.0
    } else {
        1.0 / (r as f64).ln()
    }
}

/// Trains `m` zero-initialized softmax policies.
pub fn train_pgpse(mdp: &TabularMdp, cfg: &PgpseConfig) -> Result<(ParallelPolicy, TrainingMetrics)> {
    let init = ParallelPolicy::zeros(cfg.num_agents, mdp.num_states(), mdp.num_actions());
    train_pgpse_from(mdp, cfg, init)
}

pub fn train_pgpse_from(
    mdp: &TabularMdp,
    cfg: &PgpseConfig,
    mut policies: ParallelPolicy,
) -> Result<(ParallelPolicy, TrainingMetrics)> {
    cfg.validate()?;
    check_dims(&policies, mdp)?;
    if policies.num_agents() != cfg.num_agents {
        return Err(Error::config("m", format!(
            "config asks for {} agents, initial policy has {}",
            cfg.num_agents,
            policies.num_agents()
        )));
    }
    let scale = normalizer(mdp);
    let steps = cfg.steps_per_update(mdp.horizon());
    let table_len = mdp.num_states() * mdp.num_actions();
    let started = Instant::now();
    let mut metrics = TrainingMetrics::default();
    for episode in 0..cfg.episodes {
        let items = sample_batch(&policies, mdp, cfg, episode)?;
        let grads = reduce_gradient(&items, cfg.num_agents, table_len, cfg);

        let b = items.len() as f64;
        let mut agent_entropy = vec![0.0; cfg.num_agents];
        for item in &items {
            for (acc, h) in agent_entropy.iter_mut().zip(&item.agent_entropy) {
                *acc += h * scale;
            }
        }
        agent_entropy.iter_mut().for_each(|h| *h /= b);
        metrics.records.push(UpdateRecord {
            update: episode,
            env_steps: steps * (episode as u64 + 1),
            norm_entropy: items.iter().map(|it| it.joint_entropy * scale).sum::<f64>() / b,
            support: items.iter().map(|it| it.joint_support as f64).sum::<f64>() / b,
            agent_entropy,
        });
        metrics.wall_clock.push(started.elapsed().as_secs_f64());

        let step_size = cfg.learning_rate * cfg.decay.powi(episode as i32);
        for (policy, grad) in policies.agents_mut().iter_mut().zip(&grads) {
            policy.ascend(grad, step_size);
        }
    }
    Ok((policies, metrics))
}

/// One agent optimizing the finite-trials entropy of its own `k_prime`
/// pooled trajectories.
pub fn train_single_baseline(
    mdp: &TabularMdp,
    cfg: &PgpseConfig,
    k_prime: usize,
) -> Result<(TabularPolicy, TrainingMetrics)> {
    let single = PgpseConfig {
        num_agents: 1,
        trajectories_per_agent: k_prime,
        ..cfg.clone()
    };
    let (policies, metrics) = train_pgpse(mdp, &single)?;
    let agent = policies.into_agents().remove(0);
    Ok((agent, metrics))
}
