//! Softmax tabular policies.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::mdp::{Policy, Trajectory};

/// Per-state softmax over a row of logits. Tables are row-major,
/// entry `(s, a)` at `s * num_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    theta: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits, i.e. the uniform policy.
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            theta: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_theta(num_states: usize, num_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch {
                expected: num_states * num_actions,
                actual: theta.len(),
                context: "logit table",
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("logit table has non-finite entries"));
        }
        Ok(Self {
            num_states,
            num_actions,
            theta,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_row(&self, s: usize) -> &[f64] {
        &self.theta[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn theta_row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.theta[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn action_probs(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        softmax_into(self.theta_row(s), &mut out);
        out
    }

    /// `theta += step * grad`.
    pub fn ascend(&mut self, grad: &[f64], step: f64) {
        debug_assert_eq!(grad.len(), self.theta.len());
        for (t, g) in self.theta.iter_mut().zip(grad) {
            *t += step * g;
        }
    }

    /// Writes `state,action,theta` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state", "action", "theta"])?;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                w.write_record([
                    s.to_string(),
                    a.to_string(),
                    format!("{:.17e}", self.theta[s * self.num_actions + a]),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let parse_idx = |i: usize| -> Result<usize> {
                record[i]
                    .trim()
                    .parse()
                    .map_err(|_| Error::domain(format!("bad index `{}`", &record[i])))
            };
            let theta: f64 = record[2]
                .trim()
                .parse()
                .map_err(|_| Error::domain(format!("bad logit `{}`", &record[2])))?;
            entries.push((parse_idx(0)?, parse_idx(1)?, theta));
        }
        let num_states = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let num_actions = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if entries.len() != num_states * num_actions {
            return Err(Error::domain("logit table is not a full state x action grid"));
        }
        let mut theta = vec![0.0; num_states * num_actions];
        for (s, a, v) in entries {
            theta[s * num_actions + a] = v;
        }
        Self::from_theta(num_states, num_actions, theta)
    }
}

impl Policy for TabularPolicy {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs_into(&self, _t: usize, s: usize, out: &mut [f64]) {
        softmax_into(self.theta_row(s), out);
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Adds `scale * sum_t grad log pi(a_t | s_t)` into `acc`.
pub fn accumulate_score(policy: &TabularPolicy, traj: &Trajectory, scale: f64, acc: &mut [f64]) {
    let na = policy.num_actions;
    let mut probs = vec![0.0; na];
    for (&s, &a) in traj.states.iter().zip(&traj.actions) {
        softmax_into(policy.theta_row(s), &mut probs);
        let row = &mut acc[s * na..(s + 1) * na];
        for (b, (g, p)) in row.iter_mut().zip(&probs).enumerate() {
            let indicator = if b == a { 1.0 } else { 0.0 };
            *g += scale * (indicator - p);
        }
    }
}

/// Score function of a trajectory: `sum_t grad_theta log pi(a_t | s_t)`.
pub fn score(policy: &TabularPolicy, traj: &Trajectory) -> Vec<f64> {
    let mut grad = vec![0.0; policy.theta.len()];
    accumulate_score(policy, traj, 1.0, &mut grad);
    grad
}

/// One softmax table per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelPolicy {
    agents: Vec<TabularPolicy>,
}

impl ParallelPolicy {
    pub fn new(agents: Vec<TabularPolicy>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::domain("a parallel policy needs at least one agent"))?;
        let dims = (first.num_states, first.num_actions);
        if agents.iter().any(|p| (p.num_states, p.num_actions) != dims) {
            return Err(Error::domain("agents disagree on state/action dimensions"));
        }
        Ok(Self { agents })
    }

    pub fn zeros(num_agents: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            agents: vec![TabularPolicy::zeros(num_states, num_actions); num_agents.max(1)],
        }
    }

    pub fn agents(&self) -> &[TabularPolicy] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [TabularPolicy] {
        &mut self.agents
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_states(&self) -> usize {
        self.agents[0].num_states
    }

    pub fn num_actions(&self) -> usize {
        self.agents[0].num_actions
    }

    pub fn into_agents(self) -> Vec<TabularPolicy> {
        self.agents
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(states: &[usize], actions: &[usize]) -> Trajectory {
        Trajectory {
            states: states.to_vec(),
            actions: actions.to_vec(),
            agent_id: 0,
        }
    }

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let p = TabularPolicy::zeros(3, 4);
        assert_eq!(p.action_probs(1), vec![0.25; 4]);
    }

    #[test]
    fn single_positive_logit() {
        let p = TabularPolicy::from_theta(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        let probs = p.action_probs(0);
        assert!((probs[0] - e / (e + 3.0)).abs() < 1e-15);
        assert!((probs[0] - 0.4754).abs() < 5e-5);
        for &q in &probs[1..] {
            assert!((q - 1.0 / (e + 3.0)).abs() < 1e-15);
            assert!((q - 0.1749).abs() < 5e-5);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = TabularPolicy::from_theta(1, 4, vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let b = TabularPolicy::from_theta(1, 4, vec![10.3, 8.8, 12.0, 10.0]).unwrap();
        for (x, y) in a.action_probs(0).iter().zip(b.action_probs(0)) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn score_of_uniform_single_step() {
        let p = TabularPolicy::zeros(3, 4);
        let g = score(&p, &traj(&[1, 2], &[0]));
        assert_eq!(&g[4..8], &[0.75, -0.25, -0.25, -0.25]);
        assert!(g[..4].iter().chain(&g[8..]).all(|&x| x == 0.0));
    }

    #[test]
    fn score_of_saturated_policy_vanishes() {
        let p = TabularPolicy::from_theta(2, 2, vec![50.0, -50.0, -50.0, 50.0]).unwrap();
        let g = score(&p, &traj(&[0, 1, 0], &[0, 1]));
        assert!(g.iter().all(|x| x.abs() < 1e-30));
    }

    #[test]
    fn score_is_additive_over_revisits() {
        let p = TabularPolicy::from_theta(2, 2, vec![0.4, -0.1, 0.0, 1.0]).unwrap();
        let once = score(&p, &traj(&[0, 0], &[1]));
        let twice = score(&p, &traj(&[0, 0, 0], &[1, 1]));
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(TabularPolicy::from_theta(2, 2, vec![0.0; 3]).is_err());
        assert!(TabularPolicy::from_theta(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(ParallelPolicy::new(vec![]).is_err());
        assert!(ParallelPolicy::new(vec![TabularPolicy::zeros(2, 2), TabularPolicy::zeros(3, 2)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = TabularPolicy::from_theta(2, 3, vec![0.1, -2.5, 3.0, 0.0, 1e-9, 7.25]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("state,action,theta\n"));
        assert_eq!(TabularPolicy::read_csv(&buf[..]).unwrap(), p);
    }
}
