//! Categorical state distributions: empirical, exact and mixtures.
//!
//! All entropies are in nats with the `0 log 0 = 0` convention.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::mdp::Trajectory;

const SUM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    probs: Vec<f64>,
    /// Number of state samples behind an empirical distribution.
    sample_count: Option<usize>,
}

impl StateDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_simplex(&probs, "state distribution")?;
        Ok(Self {
            probs,
            sample_count: None,
        })
    }

    pub fn uniform(num_states: usize) -> Self {
        Self {
            probs: vec![1.0 / num_states as f64; num_states],
            sample_count: None,
        }
    }

    /// Uniform over the listed states, zero elsewhere.
    pub fn uniform_over(num_states: usize, states: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; num_states];
        for &s in states {
            if s >= num_states {
                return Err(Error::domain(format!("state {s} out of range")));
            }
            probs[s] = 1.0 / states.len() as f64;
        }
        Self::new(probs)
    }

    pub fn point_mass(num_states: usize, s: usize) -> Self {
        let mut probs = vec![0.0; num_states];
        probs[s] = 1.0;
        Self {
            probs,
            sample_count: None,
        }
    }

    /// Normalizes a count vector into an empirical distribution.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::domain("no samples"));
        }
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            sample_count: Some(total as usize),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn sample_count(&self) -> Option<usize> {
        self.sample_count
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    pub fn support_size(&self) -> usize {
        support_size(self)
    }

    /// Writes `state_index,prob` rows under a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state_index", "prob"])?;
        for (s, p) in self.probs.iter().enumerate() {
            w.write_record([s.to_string(), format!("{p:.17e}")])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads `state_index,prob` rows. Missing indices are zero; the length is
    /// one past the largest index present.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["state_index", "prob"] {
            return Err(Error::domain(format!(
                "expected header `state_index,prob`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let s: usize = record[0]
                .trim()
                .parse()
                .map_err(|_| Error::domain(format!("bad state index `{}`", &record[0])))?;
            let p: f64 = record[1]
                .trim()
                .parse()
                .map_err(|_| Error::domain(format!("bad probability `{}`", &record[1])))?;
            entries.push((s, p));
        }
        let len = entries.iter().map(|&(s, _)| s + 1).max().unwrap_or(0);
        let mut probs = vec![0.0; len];
        for (s, p) in entries {
            probs[s] = p;
        }
        Self::new(probs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    weights: Vec<f64>,
}

impl MixtureWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        validate_simplex(&weights, "mixture weights")?;
        Ok(Self { weights })
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            weights: vec![1.0 / m as f64; m],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn validate_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::domain(format!("{what} is empty")));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::domain(format!("{what} has invalid entry {x}")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::domain(format!("{what} sums to {total}")));
    }
    Ok(())
}

/// Visit counts over `t = 0..T-1` (plus `s_T` when `include_terminal`).
pub fn visit_counts<'a, I>(trajectories: I, num_states: usize, include_terminal: bool) -> Result<Vec<u64>>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut counts = vec![0u64; num_states];
    for traj in trajectories {
        if let Some(&s) = traj.states.iter().find(|&&s| s >= num_states) {
            return Err(Error::DimensionMismatch {
                expected: num_states,
                actual: s + 1,
                context: "trajectory state index",
            });
        }
        let visited = if include_terminal {
            &traj.states[..]
        } else {
            &traj.states[..traj.states.len().saturating_sub(1)]
        };
        for &s in visited {
            counts[s] += 1;
        }
    }
    Ok(counts)
}

/// Empirical state distribution `d_n` of a trajectory set, terminal states excluded.
pub fn empirical_state_distribution(trajectories: &[Trajectory], num_states: usize) -> Result<StateDistribution> {
    empirical_state_distribution_with(trajectories, num_states, false)
}

pub fn empirical_state_distribution_with(
    trajectories: &[Trajectory],
    num_states: usize,
    include_terminal: bool,
) -> Result<StateDistribution> {
    if trajectories.is_empty() {
        return Err(Error::domain("empty trajectory set"));
    }
    let horizon = trajectories[0].len();
    if trajectories.iter().any(|t| t.len() != horizon) {
        return Err(Error::domain("trajectories have different horizons"));
    }
    StateDistribution::from_counts(&visit_counts(trajectories, num_states, include_terminal)?)
}

/// Entropy of the normalized count vector, computed without allocating.
pub fn entropy_of_counts(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn entropy(d: &StateDistribution) -> f64 {
    -d.probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

pub fn kl_divergence(p: &StateDistribution, q: &StateDistribution) -> Result<f64> {
    check_dims(p.num_states(), q.num_states(), "kl_divergence operands")?;
    let mut total = 0.0;
    for (s, (&ps, &qs)) in p.probs.iter().zip(&q.probs).enumerate() {
        if ps == 0.0 {
            continue;
        }
        if qs == 0.0 {
            return Err(Error::domain(format!(
                "support violation at state {s}: p = {ps}, q = 0"
            )));
        }
        total += ps * (ps / qs).ln();
    }
    // Rounding can leave a tiny negative value for p ~= q.
    Ok(total.max(0.0))
}

pub fn mixture(components: &[StateDistribution], weights: &MixtureWeights) -> Result<StateDistribution> {
    check_dims(weights.len(), components.len(), "mixture weights vs components")?;
    let n = components[0].num_states();
    let mut probs = vec![0.0; n];
    for (d, &w) in components.iter().zip(weights.as_slice()) {
        check_dims(n, d.num_states(), "mixture component")?;
        for (acc, &p) in probs.iter_mut().zip(&d.probs) {
            *acc += w * p;
        }
    }
    Ok(StateDistribution {
        probs,
        sample_count: None,
    })
}

/// Splits the mixture entropy into the weighted component entropy and the
/// weighted KL divergence of each component from the mixture:
/// `H(mix) = sum_i w_i H(d_i) + sum_i w_i KL(d_i || mix)`.
pub fn mixture_entropy_decomposition(
    components: &[StateDistribution],
    weights: &MixtureWeights,
) -> Result<(f64, f64)> {
    let mix = mixture(components, weights)?;
    let mut avg_entropy = 0.0;
    let mut avg_kl = 0.0;
    for (d, &w) in components.iter().zip(weights.as_slice()) {
        if w == 0.0 {
            continue;
        }
        avg_entropy += w * entropy(d);
        avg_kl += w * kl_divergence(d, &mix)?;
    }
    Ok((avg_entropy, avg_kl))
}

/// `sum_s d(s) (1 - d(s))`.
pub fn categorical_variance(d: &StateDistribution) -> f64 {
    d.probs.iter().map(|&p| p * (1.0 - p)).sum()
}

pub fn support_size(d: &StateDistribution) -> usize {
    d.probs.iter().filter(|&&p| p > 0.0).count()
}

/// Entropy divided by `ln(num_reachable)`.
pub fn normalized_entropy(d: &StateDistribution, num_reachable: usize) -> f64 {
    assert!(num_reachable >= 2, "normalizer needs at least two reachable states");
    entropy(d) / (num_reachable as f64).ln()
}

fn check_dims(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected != actual || expected == 0 {
        return Err(Error::DimensionMismatch {
            expected,
            actual,
            context,
        });
    }
    Ok(())
}
