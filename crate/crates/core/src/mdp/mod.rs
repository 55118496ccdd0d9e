//! Finite-horizon tabular MDPs, gridworld layouts and seeded rollouts.

mod grid;

pub use grid::{
    make_maze, make_room, state_index, Action, EnvId, GridSpec, Variant, DEFAULT_SLIP_PROB,
    MAZE_HORIZON, MAZE_MAP, ROOM_HORIZON, ROOM_MAP,
};

use rand::Rng;

use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-12;

/// Anything that can choose actions in a tabular MDP. `t` is the step index
/// within the episode; stationary policies ignore it.
pub trait Policy {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Writes the action distribution for state `s` at step `t` into `out`.
    fn action_probs_into(&self, t: usize, s: usize, out: &mut [f64]);

    fn sample_action<R: Rng + ?Sized>(&self, t: usize, s: usize, rng: &mut R) -> usize {
        let mut probs = vec![0.0; self.num_actions()];
        self.action_probs_into(t, s, &mut probs);
        sample_categorical(&probs, rng)
    }
}

/// Inverse-CDF draw from a probability vector. Rounding slack at the top end
/// falls on the last index with positive mass.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// Sparse successor lists indexed by `s * num_actions + a`.
    transitions: Vec<Vec<(usize, f64)>>,
    initial_dist: Vec<f64>,
    horizon: usize,
    reachable: Vec<bool>,
    grid: Option<GridSpec>,
}

impl TabularMdp {
    /// Builds and validates an MDP. `reachable` defaults to every state.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        initial_dist: Vec<f64>,
        horizon: usize,
        reachable: Option<Vec<bool>>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::domain("states, actions and horizon must be positive"));
        }
        if transitions.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch {
                expected: num_states * num_actions,
                actual: transitions.len(),
                context: "transition rows",
            });
        }
        if initial_dist.len() != num_states {
            return Err(Error::DimensionMismatch {
                expected: num_states,
                actual: initial_dist.len(),
                context: "initial distribution",
            });
        }
        let reachable = reachable.unwrap_or_else(|| vec![true; num_states]);
        if reachable.len() != num_states {
            return Err(Error::DimensionMismatch {
                expected: num_states,
                actual: reachable.len(),
                context: "reachable mask",
            });
        }
        for (idx, row) in transitions.iter().enumerate() {
            let (s, a) = (idx / num_actions, idx % num_actions);
            let mut total = 0.0;
            for &(next, p) in row {
                if next >= num_states || !(0.0..=1.0).contains(&p) {
                    return Err(Error::domain(format!(
                        "transition ({s},{a}) -> {next} has invalid entry {p}"
                    )));
                }
                if reachable[s] && p > 0.0 && !reachable[next] {
                    return Err(Error::domain(format!(
                        "transition ({s},{a}) leaves the reachable set into {next}"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::domain(format!(
                    "transition row ({s},{a}) sums to {total}"
                )));
            }
        }
        let init_total: f64 = initial_dist.iter().sum();
        if (init_total - 1.0).abs() > ROW_TOLERANCE || initial_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::domain("initial distribution is not a probability vector"));
        }
        if initial_dist
            .iter()
            .zip(&reachable)
            .any(|(&p, &r)| p > 0.0 && !r)
        {
            return Err(Error::domain("initial distribution puts mass on unreachable states"));
        }
        Ok(Self {
            num_states,
            num_actions,
            transitions,
            initial_dist,
            horizon,
            reachable,
            grid: None,
        })
    }

    /// Builds an MDP from a dense kernel `p(s, a, s')`.
    pub fn from_dense<F>(
        num_states: usize,
        num_actions: usize,
        kernel: F,
        initial_dist: Vec<f64>,
        horizon: usize,
    ) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> f64,
    {
        let transitions = (0..num_states * num_actions)
            .map(|idx| {
                let (s, a) = (idx / num_actions, idx % num_actions);
                (0..num_states)
                    .map(|next| (next, kernel(s, a, next)))
                    .filter(|&(_, p)| p > 0.0)
                    .collect()
            })
            .collect();
        Self::new(num_states, num_actions, transitions, initial_dist, horizon, None)
    }

    pub(crate) fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = Some(grid);
        self
    }

    /// Same dynamics with a different episode length.
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::domain("horizon must be positive"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.num_actions + a]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.successors(s, a)
            .iter()
            .filter(|&&(n, _)| n == next)
            .map(|&(_, p)| p)
            .sum()
    }

    pub fn is_reachable(&self, s: usize) -> bool {
        self.reachable[s]
    }

    pub fn reachable_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.reachable[s]).collect()
    }

    pub fn num_reachable(&self) -> usize {
        self.reachable.iter().filter(|&&r| r).count()
    }

    /// States visited by a breadth-first search over positive-probability
    /// transitions from the support of the initial distribution.
    pub fn bfs_from_start(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_states];
        let mut queue: std::collections::VecDeque<usize> = (0..self.num_states)
            .filter(|&s| self.initial_dist[s] > 0.0)
            .collect();
        for &s in &queue {
            seen[s] = true;
        }
        while let Some(s) = queue.pop_front() {
            for a in 0..self.num_actions {
                for &(next, p) in self.successors(s, a) {
                    if p > 0.0 && !seen[next] {
                        seen[next] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        (0..self.num_states).filter(|&s| seen[s]).collect()
    }

    /// Point-mass start and point-mass transitions everywhere.
    pub fn is_deterministic(&self) -> bool {
        self.initial_dist.iter().filter(|&&p| p > 0.0).count() == 1
            && self.transitions.iter().all(|row| row.len() == 1)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial_dist, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let row = self.successors(s, a);
        if row.len() == 1 {
            return row[0].0;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(next, p) in row {
            acc += p;
            if u < acc {
                return next;
            }
        }
        row.last().map(|&(n, _)| n).unwrap_or(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    /// `s_0 .. s_T`
    pub states: Vec<usize>,
    /// `a_0 .. a_{T-1}`
    pub actions: Vec<usize>,
    pub agent_id: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `(s_t, a_t, s_{t+1})` triples.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.actions
            .iter()
            .enumerate()
            .map(move |(t, &a)| (self.states[t], a, self.states[t + 1]))
    }
}

/// Samples one episode of length `mdp.horizon()`.
pub fn rollout<P, R>(mdp: &TabularMdp, policy: &P, agent_id: usize, rng: &mut R) -> Result<Trajectory>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.num_states() * mdp.num_actions(),
            actual: policy.num_states() * policy.num_actions(),
            context: "policy table vs MDP",
        });
    }
    let horizon = mdp.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut probs = vec![0.0; mdp.num_actions()];
    let mut s = mdp.sample_initial(rng);
    states.push(s);
    for t in 0..horizon {
        policy.action_probs_into(t, s, &mut probs);
        let a = sample_categorical(&probs, rng);
        s = mdp.sample_next(s, a, rng);
        actions.push(a);
        states.push(s);
    }
    Ok(Trajectory {
        states,
        actions,
        agent_id,
    })
}
