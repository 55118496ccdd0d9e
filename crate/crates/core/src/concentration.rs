//! Tail bound on the plug-in entropy estimator and its Monte-Carlo check.
//!
//! For `n` i.i.d. draws from a categorical `d` over `S` outcomes,
//! `P(H(d) - H(d_n) > eps) <= 2S exp(-n eps^2 Var(d) / (2 S^3 H(d)^2))`
//! with `Var(d) = sum_s d(s)(1 - d(s))`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::dist::{categorical_variance, entropy, entropy_of_counts, StateDistribution};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

const TRIALS_PER_STREAM: usize = 1024;

/// Unclamped right-hand side of the bound; 0 when `H(d) = 0`.
pub fn concentration_bound_raw(d: &StateDistribution, n: u64, eps: f64) -> f64 {
    let h = entropy(d);
    if h == 0.0 {
        return 0.0;
    }
    let s = d.num_states() as f64;
    let var = categorical_variance(d);
    2.0 * s * (-(n as f64) * eps * eps * var / (2.0 * s.powi(3) * h * h)).exp()
}

pub fn concentration_bound(d: &StateDistribution, n: u64, eps: f64) -> f64 {
    concentration_bound_raw(d, n, eps).min(1.0)
}

/// Smallest `n` for which the bound drops below `delta`:
/// `ceil(2 S^3 H^2 / (eps^2 Var) * ln(2S / delta))`.
pub fn required_samples(d: &StateDistribution, eps: f64, delta: f64) -> Result<u64> {
    if !(eps > 0.0) {
        return Err(Error::domain("eps must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain("delta must lie in (0, 1)"));
    }
    let h = entropy(d);
    if h == 0.0 {
        return Err(Error::domain("zero-entropy distribution needs no samples"));
    }
    let s = d.num_states() as f64;
    let var = categorical_variance(d);
    Ok((2.0 * s.powi(3) * h * h / (eps * eps * var) * (2.0 * s / delta).ln()).ceil() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationQuery {
    pub d: StateDistribution,
    pub n: u64,
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
}

impl ConcentrationQuery {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.trials == 0 {
            return Err(Error::domain("n and trials must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::domain("eps must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub bound_value: f64,
    pub bound_raw: f64,
    /// Fraction of trials with `H(d) - H(d_n) > eps`.
    pub empirical_tail: f64,
    /// Binomial standard error of `empirical_tail`.
    pub standard_error: f64,
    /// `None` when `H(d) = 0`.
    pub required_n: Option<u64>,
    pub trials: usize,
}

impl ConcentrationReport {
    /// `empirical <= bound + k * stderr`.
    pub fn dominated(&self, k: f64) -> bool {
        self.empirical_tail <= self.bound_value + k * self.standard_error
    }
}

/// Draws multinomial counts with sequential conditional binomials, which has
/// the same law as counting `n` i.i.d. categorical draws.
pub fn sample_counts<R: Rng + ?Sized>(probs: &[f64], n: u64, rng: &mut R, counts: &mut [u64]) {
    let mut remaining_n = n;
    let mut remaining_mass = 1.0;
    let last = probs.len() - 1;
    for (i, (&p, c)) in probs.iter().zip(counts.iter_mut()).enumerate() {
        if remaining_n == 0 || i == last {
            *c = if i == last { remaining_n } else { 0 };
            remaining_n -= *c;
            continue;
        }
        let q = if remaining_mass > 0.0 { (p / remaining_mass).clamp(0.0, 1.0) } else { 1.0 };
        *c = if q == 0.0 {
            0
        } else if q == 1.0 {
            remaining_n
        } else {
            Binomial::new(remaining_n, q).expect("valid binomial").sample(rng)
        };
        remaining_n -= *c;
        remaining_mass -= p;
    }
}

/// Monte-Carlo frequency of the deviation event, with the bound alongside.
pub fn empirical_tail(query: &ConcentrationQuery, seed: u64) -> Result<ConcentrationReport> {
    query.validate()?;
    let h = entropy(&query.d);
    let probs = query.d.probs();
    let chunks = query.trials.div_ceil(TRIALS_PER_STREAM);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = rng::stream(seed, &[tag::CONCENTRATION, chunk as u64]);
            let start = chunk * TRIALS_PER_STREAM;
            let end = (start + TRIALS_PER_STREAM).min(query.trials);
            let mut counts = vec![0u64; probs.len()];
            (start..end)
                .filter(|_| {
                    sample_counts(probs, query.n, &mut rng, &mut counts);
                    h - entropy_of_counts(&counts) > query.eps
                })
                .count()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let freq = hits as f64 / query.trials as f64;
    Ok(ConcentrationReport {
        bound_value: concentration_bound(&query.d, query.n, query.eps),
        bound_raw: concentration_bound_raw(&query.d, query.n, query.eps),
        empirical_tail: freq,
        standard_error: (freq * (1.0 - freq) / query.trials as f64).sqrt(),
        required_n: required_samples(&query.d, query.eps, query.delta).ok(),
        trials: query.trials,
    })
}

/// Named distributions of the domination grid.
pub fn grid_distributions() -> Vec<(&'static str, StateDistribution)> {
    vec![
        ("uniform2", StateDistribution::uniform(2)),
        ("skewed2", StateDistribution::new(vec![0.9, 0.1]).expect("valid")),
        ("three", StateDistribution::new(vec![0.5, 0.25, 0.25]).expect("valid")),
        ("uniform10", StateDistribution::uniform(10)),
    ]
}

pub const GRID_SAMPLE_SIZES: [u64; 3] = [100, 1_000, 10_000];
pub const GRID_EPSILONS: [f64; 3] = [0.05, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub dist_id: String,
    pub num_states: usize,
    pub entropy: f64,
    pub variance: f64,
    pub n: u64,
    pub eps: f64,
    pub report: ConcentrationReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridTrials {
    /// Trials for cells whose bound is below 1.
    pub informative: usize,
    /// Trials for cells whose bound clamps to 1.
    pub clamped: usize,
}

impl Default for GridTrials {
    fn default() -> Self {
        Self {
            informative: 100_000,
            clamped: 1_000,
        }
    }
}

/// Distributions x sample sizes x deviation thresholds. Cell `k` uses the
/// seed derived from `(seed, k)`.
pub fn domination_grid(seed: u64, delta: f64, trials: GridTrials) -> Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    for (dist_id, d) in grid_distributions() {
        for &n in &GRID_SAMPLE_SIZES {
            for &eps in &GRID_EPSILONS {
                let bound = concentration_bound(&d, n, eps);
                let query = ConcentrationQuery {
                    d: d.clone(),
                    n,
                    eps,
                    delta,
                    trials: if bound < 1.0 { trials.informative } else { trials.clamped },
                };
                let cell_seed = rng::derive_seed(seed, &[cells.len() as u64]);
                cells.push(GridCell {
                    dist_id: dist_id.to_string(),
                    num_states: d.num_states(),
                    entropy: entropy(&d),
                    variance: categorical_variance(&d),
                    n,
                    eps,
                    report: empirical_tail(&query, cell_seed)?,
                });
            }
        }
    }
    Ok(cells)
}

pub const GRID_CSV_HEADER: [&str; 11] =
    ["dist_id", "S", "H", "Var", "n", "eps", "bound", "empirical", "stderr", "required_n", "bound_raw"];

pub fn write_grid_csv<W: Write>(cells: &[GridCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(GRID_CSV_HEADER)?;
    for c in cells {
        w.write_record([
            c.dist_id.clone(),
            c.num_states.to_string(),
            format!("{:.17e}", c.entropy),
            format!("{:.17e}", c.variance),
            c.n.to_string(),
            format!("{}", c.eps),
            format!("{:.17e}", c.report.bound_value),
            format!("{:.17e}", c.report.empirical_tail),
            format!("{:.17e}", c.report.standard_error),
            c.report.required_n.map(|r| r.to_string()).unwrap_or_default(),
            format!("{:.17e}", c.report.bound_raw),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
