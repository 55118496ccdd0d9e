//! Parallel Frank-Wolfe over state distributions with exact tabular oracles.
//!
//! The density oracle is a forward dynamic program and the planning oracle is
//! backward finite-horizon value iteration, so both oracle tolerances are 0.
//! Components of the mixture are either softmax tables (the initial policy) or
//! the time-indexed deterministic plans produced by the planner.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::dist::{entropy, MixtureWeights, StateDistribution};
use crate::error::{Error, Result};
use crate::mdp::{rollout, sample_categorical, Policy, TabularMdp, Trajectory};
use crate::policy::TabularPolicy;
use crate::rng::{self, tag};

/// Relative slack under which two action values count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Deterministic non-stationary policy: one action per `(t, s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPlan {
    num_states: usize,
    num_actions: usize,
    /// Row-major `horizon x num_states`.
    actions: Vec<usize>,
}

impl DeterministicPlan {
    pub fn horizon(&self) -> usize {
        self.actions.len() / self.num_states
    }

    pub fn action(&self, t: usize, s: usize) -> usize {
        let t = t.min(self.horizon() - 1);
        self.actions[t * self.num_states + s]
    }

    /// Writes `step,state,action` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "state", "action"])?;
        for t in 0..self.horizon() {
            for s in 0..self.num_states {
                w.write_record([t.to_string(), s.to_string(), self.action(t, s).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

impl Policy for DeterministicPlan {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs_into(&self, t: usize, s: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|p| *p = 0.0);
        out[self.action(t, s)] = 1.0;
    }

    fn sample_action<R: Rng + ?Sized>(&self, t: usize, s: usize, _rng: &mut R) -> usize {
        self.action(t, s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Softmax(TabularPolicy),
    Plan(DeterministicPlan),
}

impl Policy for Component {
    fn num_states(&self) -> usize {
        match self {
            Component::Softmax(p) => p.num_states(),
            Component::Plan(p) => p.num_states(),
        }
    }

    fn num_actions(&self) -> usize {
        match self {
            Component::Softmax(p) => p.num_actions(),
            Component::Plan(p) => p.num_actions(),
        }
    }

    fn action_probs_into(&self, t: usize, s: usize, out: &mut [f64]) {
        match self {
            Component::Softmax(p) => p.action_probs_into(t, s, out),
            Component::Plan(p) => p.action_probs_into(t, s, out),
        }
    }
}

/// Weighted list of component policies `(alpha_t, C_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    components: Vec<Component>,
    weights: MixtureWeights,
}

impl MixturePolicy {
    pub fn new(components: Vec<Component>, weights: MixtureWeights) -> Result<Self> {
        if components.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                actual: weights.len(),
                context: "mixture weights vs components",
            });
        }
        Ok(Self { components, weights })
    }

    pub fn single(component: Component) -> Self {
        Self {
            components: vec![component],
            weights: MixtureWeights::uniform(1),
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> &MixtureWeights {
        &self.weights
    }

    /// Appends `component` with weight `eta`, scaling old weights by `1 - eta`.
    pub fn push(&mut self, component: Component, eta: f64) -> Result<()> {
        let mut w: Vec<f64> = self.weights.as_slice().iter().map(|a| (1.0 - eta) * a).collect();
        w.push(eta);
        self.weights = MixtureWeights::new(w)?;
        self.components.push(component);
        Ok(())
    }

    /// Rolls out one episode after drawing a component with probability alpha.
    pub fn rollout<R: Rng + ?Sized>(&self, mdp: &TabularMdp, agent_id: usize, rng: &mut R) -> Result<Trajectory> {
        let k = sample_categorical(self.weights.as_slice(), rng);
        rollout(mdp, &self.components[k], agent_id, rng)
    }

    /// Writes `component_<k>.csv` files and `weights.csv` into `dir`.
    pub fn write_dir(&self, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::with_capacity(self.components.len() + 1);
        let weights_path = dir.join("weights.csv");
        let mut w = csv::Writer::from_path(&weights_path)?;
        w.write_record(["component", "kind", "weight"])?;
        for (k, (c, a)) in self.components.iter().zip(self.weights.as_slice()).enumerate() {
            let kind = match c {
                Component::Softmax(_) => "softmax",
                Component::Plan(_) => "plan",
            };
            w.write_record([k.to_string(), kind.to_string(), format!("{a:.17e}")])?;
        }
        w.flush().map_err(|e| Error::io(&weights_path, e))?;
        written.push(weights_path);
        for (k, c) in self.components.iter().enumerate() {
            let path = dir.join(format!("component_{k}.csv"));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            match c {
                Component::Softmax(p) => p.write_csv(file)?,
                Component::Plan(p) => p.write_csv(file)?,
            }
            written.push(path);
        }
        Ok(written)
    }
}

fn check_policy_dims<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P) -> Result<()> {
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.num_states() * mdp.num_actions(),
            actual: policy.num_states() * policy.num_actions(),
            context: "policy vs MDP",
        });
    }
    Ok(())
}

/// Forward DP: `(1/T) sum_{t<T} mu_t` for one policy.
pub fn policy_state_distribution<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P) -> Result<Vec<f64>> {
    check_policy_dims(mdp, policy)?;
    let (n, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut occupancy = vec![0.0; n];
    let mut current = mdp.initial_dist().to_vec();
    let mut next = vec![0.0; n];
    let mut probs = vec![0.0; na];
    for t in 0..horizon {
        for (acc, &m) in occupancy.iter_mut().zip(&current) {
            *acc += m;
        }
        if t + 1 == horizon {
            break;
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            if current[s] == 0.0 {
                continue;
            }
            policy.action_probs_into(t, s, &mut probs);
            for (a, &pa) in probs.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for &(s2, p) in mdp.successors(s, a) {
                    next[s2] += current[s] * pa * p;
                }
            }
        }
        std::mem::swap(&mut current, &mut next);
    }
    let scale = 1.0 / horizon as f64;
    occupancy.iter_mut().for_each(|x| *x *= scale);
    Ok(occupancy)
}

/// Exact state distribution of a mixture: the alpha-weighted sum of the
/// component distributions.
pub fn exact_state_distribution(mdp: &TabularMdp, mix: &MixturePolicy) -> Result<StateDistribution> {
    let mut probs = vec![0.0; mdp.num_states()];
    for (c, &w) in mix.components.iter().zip(mix.weights.as_slice()) {
        if w == 0.0 {
            continue;
        }
        let d = policy_state_distribution(mdp, c)?;
        for (acc, x) in probs.iter_mut().zip(d) {
            *acc += w * x;
        }
    }
    StateDistribution::new(probs)
}

/// Gradient of the entropy at `d` smoothed toward uniform:
/// `r(s) = -ln(d(s) (1 - sigma |S|) + sigma) - 1`.
pub fn entropy_gradient_reward(d: &StateDistribution, sigma: f64) -> Result<Vec<f64>> {
    let n = d.num_states() as f64;
    if !(sigma >= 0.0 && sigma * n <= 1.0) {
        return Err(Error::domain(format!("smoothing {sigma} outside [0, 1/|S|]")));
    }
    if sigma == 0.0 && d.probs().iter().any(|&p| p == 0.0) {
        return Err(Error::domain("unsmoothed entropy gradient is unbounded on zero-mass states"));
    }
    Ok(d.probs()
        .iter()
        .map(|&p| -(p * (1.0 - sigma * n) + sigma).ln() - 1.0)
        .collect())
}

/// Backward value iteration maximizing `E[sum_{t<T} r(s_t)]`. Returns the
/// optimal time-indexed plan and its value under the initial distribution.
/// Ties go to the lowest action index.
pub fn approx_plan(mdp: &TabularMdp, reward: &[f64]) -> Result<(DeterministicPlan, f64)> {
    let (n, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    if reward.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: reward.len(),
            context: "reward vector",
        });
    }
    if reward.iter().any(|r| !r.is_finite()) {
        return Err(Error::domain("rewards must be finite"));
    }
    let mut actions = vec![0usize; horizon * n];
    let mut value_next = vec![0.0; n];
    let mut value = vec![0.0; n];
    let mut q = vec![0.0; na];
    for t in (0..horizon).rev() {
        for s in 0..n {
            for (a, qa) in q.iter_mut().enumerate() {
                *qa = mdp.successors(s, a).iter().map(|&(s2, p)| p * value_next[s2]).sum();
            }
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = TIE_TOLERANCE * (1.0 + best.abs());
            let choice = q.iter().position(|&x| x >= best - slack).unwrap_or(0);
            actions[t * n + s] = choice;
            value[s] = reward[s] + q[choice];
        }
        std::mem::swap(&mut value, &mut value_next);
    }
    let total = mdp
        .initial_dist()
        .iter()
        .zip(&value_next)
        .map(|(m, v)| m * v)
        .sum();
    Ok((
        DeterministicPlan {
            num_states: n,
            num_actions: na,
            actions,
        },
        total,
    ))
}

/// Expected `sum_{t<T} r(s_t)` of any policy, via the forward DP.
pub fn policy_value<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P, reward: &[f64]) -> Result<f64> {
    let d = policy_state_distribution(mdp, policy)?;
    Ok(mdp.horizon() as f64 * d.iter().zip(reward).map(|(x, r)| x * r).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPolicy {
    /// Zero logits.
    Uniform,
    /// Always the lowest action index.
    FirstAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwConfig {
    pub num_agents: usize,
    pub iterations: usize,
    pub eta: f64,
    /// Mass mixed into every state before taking the entropy gradient.
    pub sigma: f64,
    /// Target suboptimality and oracle tolerances; informational only since
    /// both oracles are exact.
    pub epsilon: f64,
    pub eps0: f64,
    pub eps1: f64,
    /// Smoothness and gradient-bound constants of the smoothed entropy.
    pub beta: f64,
    pub b_bound: f64,
    /// Scale of the per-agent uniform reward jitter; 0 disables it.
    pub perturb: f64,
    pub initial: InitialPolicy,
    pub seed: u64,
}

impl Default for FwConfig {
    fn default() -> Self {
        let sigma = 1e-3;
        Self {
            num_agents: 1,
            iterations: 200,
            eta: 0.05,
            sigma,
            epsilon: 0.05,
            eps0: 0.0,
            eps1: 0.0,
            beta: 1.0 / sigma,
            b_bound: -(sigma.ln()) + 1.0,
            perturb: 0.0,
            initial: InitialPolicy::Uniform,
            seed: 0,
        }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(Error::config("fw_agents", "must be positive"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::config("eta", "must lie in (0, 1]"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::config("sigma", "must be non-negative"));
        }
        if !(self.perturb >= 0.0) {
            return Err(Error::config("perturb", "must be non-negative"));
        }
        Ok(())
    }

    /// Step size, iteration count and oracle tolerances prescribed by the
    /// convergence-rate guarantee for target `epsilon` on `num_states` states:
    /// `(eta, T, eps0, eps1)`.
    pub fn prescribed(&self, num_states: usize) -> (f64, usize, f64, f64) {
        let s = num_states as f64;
        let n = self.num_agents as f64;
        let eps = self.epsilon;
        let eta = 0.1 * n * eps / (s * self.beta);
        let iterations = (10.0 * self.beta * s / (n * eps) * (10.0 * self.b_bound / eps).ln()).ceil();
        (eta.min(1.0), iterations.max(1.0) as usize, 0.1 * eps / self.beta, 0.1 * eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwIterate {
    pub iter: usize,
    /// Entropy of the mixture's exact state distribution (nats).
    pub entropy: f64,
    /// Mean over agents of the entropy of their weight vectors.
    pub avg_weight_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct FwResult {
    /// One `(alpha, C)` list per agent.
    pub agents: Vec<MixturePolicy>,
    pub curve: Vec<FwIterate>,
}

impl FwResult {
    /// The joint mixture `(1/N) sum_i (alpha_i, C_i)` as one flat list.
    pub fn mixture(&self) -> MixturePolicy {
        let n = self.agents.len() as f64;
        let mut components = Vec::new();
        let mut weights = Vec::new();
        for agent in &self.agents {
            components.extend(agent.components.iter().cloned());
            weights.extend(agent.weights.as_slice().iter().map(|w| w / n));
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        MixturePolicy {
            components,
            weights: MixtureWeights::new(weights).expect("renormalized weights"),
        }
    }

    pub fn final_entropy(&self) -> f64 {
        self.curve.last().map(|c| c.entropy).unwrap_or(0.0)
    }

    /// Writes `iter,entropy,avg_weight_entropy` rows.
    pub fn write_curve_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iter", "entropy", "avg_weight_entropy"])?;
        for c in &self.curve {
            w.write_record([
                c.iter.to_string(),
                format!("{:.17e}", c.entropy),
                format!("{:.17e}", c.avg_weight_entropy),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn weight_entropy(w: &MixtureWeights) -> f64 {
    -w.as_slice()
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| a * a.ln())
        .sum::<f64>()
}

/// Agent state with cached component densities (densities are linear in the
/// weights, so each component's DP runs once).
struct AgentState {
    mixture: MixturePolicy,
    densities: Vec<Vec<f64>>,
}

impl AgentState {
    fn density(&self, n: usize) -> Vec<f64> {
        let mut d = vec![0.0; n];
        for (comp, &w) in self.densities.iter().zip(self.mixture.weights.as_slice()) {
            for (acc, x) in d.iter_mut().zip(comp) {
                *acc += w * x;
            }
        }
        d
    }
}

fn joint_density(agents: &[AgentState], n: usize) -> Result<StateDistribution> {
    let mut d = vec![0.0; n];
    let scale = 1.0 / agents.len() as f64;
    for agent in agents {
        for (acc, x) in d.iter_mut().zip(agent.density(n)) {
            *acc += scale * x;
        }
    }
    let total: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= total);
    StateDistribution::new(d)
}

/// Runs `cfg.iterations` rounds of density -> reward -> plan -> weight update
/// with every agent querying the exact oracles on the shared mixture.
pub fn parallel_frank_wolfe(mdp: &TabularMdp, cfg: &FwConfig) -> Result<FwResult> {
    cfg.validate()?;
    let n = mdp.num_states();
    let initial = match cfg.initial {
        InitialPolicy::Uniform => TabularPolicy::zeros(n, mdp.num_actions()),
        InitialPolicy::FirstAction => {
            let na = mdp.num_actions();
            let theta = (0..n * na).map(|i| if i % na == 0 { 50.0 } else { 0.0 }).collect();
            TabularPolicy::from_theta(n, na, theta)?
        }
    };
    let initial = Component::Softmax(initial);
    let initial_density = policy_state_distribution(mdp, &initial)?;
    let mut agents: Vec<AgentState> = (0..cfg.num_agents)
        .map(|_| AgentState {
            mixture: MixturePolicy::single(initial.clone()),
            densities: vec![initial_density.clone()],
        })
        .collect();

    let record = |iter: usize, agents: &[AgentState]| -> Result<FwIterate> {
        Ok(FwIterate {
            iter,
            entropy: entropy(&joint_density(agents, n)?),
            avg_weight_entropy: agents.iter().map(|a| weight_entropy(&a.mixture.weights)).sum::<f64>()
                / agents.len() as f64,
        })
    };
    let mut curve = vec![record(0, &agents)?];
    for t in 0..cfg.iterations {
        let density = joint_density(&agents, n)?;
        let base_reward = entropy_gradient_reward(&density, cfg.sigma)?;
        let plans: Vec<(Component, Vec<f64>)> = (0..cfg.num_agents)
            .into_par_iter()
            .map(|i| {
                let mut reward = base_reward.clone();
                if cfg.perturb > 0.0 {
                    let mut rng = rng::stream(cfg.seed, &[tag::FRANK_WOLFE, t as u64, i as u64]);
                    for r in reward.iter_mut() {
                        *r += cfg.perturb * (rng.random::<f64>() - 0.5);
                    }
                }
                let (plan, _) = approx_plan(mdp, &reward)?;
                let plan = Component::Plan(plan);
                let d = policy_state_distribution(mdp, &plan)?;
                Ok((plan, d))
            })
            .collect::<Result<_>>()?;
        for (agent, (plan, d)) in agents.iter_mut().zip(plans) {
            agent.mixture.push(plan, cfg.eta)?;
            agent.densities.push(d);
        }
        curve.push(record(t + 1, &agents)?);
    }
    Ok(FwResult {
        agents: agents.into_iter().map(|a| a.mixture).collect(),
        curve,
    })
}

/// Episode-level mixture rollouts; episode `j` draws its component and its
/// transitions from the stream `(seed, j)`.
pub fn sample_mixture_trajectories(
    mdp: &TabularMdp,
    mix: &MixturePolicy,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..episodes)
        .map(|j| {
            let mut rng = rng::stream(seed, &[tag::MIXTURE_ROLLOUT, j as u64]);
            mix.rollout(mdp, 0, &mut rng)
        })
        .collect()
}
