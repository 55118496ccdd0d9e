//! Line-oriented `key = value` experiment configuration.
//!
//! `#` starts a comment, `include = <path>` splices another file (relative to
//! the including file) at that point, and later assignments win.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frank_wolfe::{FwConfig, InitialPolicy};
use crate::mdp::{EnvId, DEFAULT_SLIP_PROB};
use crate::offline::OfflineConfig;
use crate::pgpse::PgpseConfig;

const MAX_INCLUDE_DEPTH: usize = 16;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 42, 133];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pgpse,
    SingleBaseline,
    Random,
    FrankWolfe,
    Concentration,
    Offline,
    DatasetEntropy,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Pgpse,
        Mode::SingleBaseline,
        Mode::Random,
        Mode::FrankWolfe,
        Mode::Concentration,
        Mode::Offline,
        Mode::DatasetEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pgpse => "pgpse",
            Mode::SingleBaseline => "single-baseline",
            Mode::Random => "random",
            Mode::FrankWolfe => "frank-wolfe",
            Mode::Concentration => "concentration",
            Mode::Offline => "offline",
            Mode::DatasetEntropy => "dataset-entropy",
        }
    }

    /// Modes that emit per-update training curves.
    pub fn is_training(self) -> bool {
        matches!(self, Mode::Pgpse | Mode::SingleBaseline | Mode::Random)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub mode: Mode,
    pub num_agents: usize,
    pub trajectories_per_agent: usize,
    /// Trials of the single-agent baseline; `None` means `m * K`.
    pub k_prime: Option<usize>,
    pub batch_size: usize,
    pub episodes: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub slip_prob: f64,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub include_terminal: bool,
    pub entropy_baseline: bool,
    pub average_over_trajectories: bool,
    /// Updates averaged for the final entropy/support summary.
    pub window: usize,
    /// Trajectories per agent when collecting datasets.
    pub dataset_trajectories: usize,
    pub offline: OfflineConfig,
    pub fw: FwConfig,
    pub delta: f64,
    pub conc_trials: usize,
    pub conc_trials_clamped: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pg = PgpseConfig::default();
        Self {
            env: EnvId::RoomDet,
            mode: Mode::Pgpse,
            num_agents: pg.num_agents,
            trajectories_per_agent: pg.trajectories_per_agent,
            k_prime: None,
            batch_size: pg.batch_size,
            episodes: pg.episodes,
            alpha: pg.learning_rate,
            lambda: pg.decay,
            slip_prob: DEFAULT_SLIP_PROB,
            seeds: DEFAULT_SEEDS.to_vec(),
            output: PathBuf::from("out"),
            workers: 0,
            include_terminal: false,
            entropy_baseline: false,
            average_over_trajectories: true,
            window: 100,
            dataset_trajectories: 1,
            offline: OfflineConfig::default(),
            fw: FwConfig::default(),
            delta: 0.05,
            conc_trials: 100_000,
            conc_trials_clamped: 1_000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{value}`"))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(path, 0)?;
        Ok(cfg)
    }

    pub fn from_str_with_base(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, base, 0)?;
        Ok(cfg)
    }

    fn apply_file(&mut self, path: &Path, depth: usize) -> Result<()> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(Error::config("include", format!("nesting deeper than {MAX_INCLUDE_DEPTH} at {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.apply_text(&text, base, depth)
    }

    fn apply_text(&mut self, text: &str, base: &Path, depth: usize) -> Result<()> {
        for (key, value) in parse_lines(text)? {
            if key == "include" {
                self.apply_file(&base.join(&value), depth + 1)?;
            } else {
                self.set(&key, &value)?;
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = value.parse().map_err(|_| Error::config(key, format!("unknown environment `{value}`")))?,
            "mode" => self.mode = value.parse()?,
            "m" => self.num_agents = parse(key, value)?,
            "K" => self.trajectories_per_agent = parse(key, value)?,
            "k_prime" => self.k_prime = Some(parse(key, value)?),
            "B" => self.batch_size = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "slip_prob" => self.slip_prob = parse(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "output" => self.output = PathBuf::from(value),
            "workers" => self.workers = parse(key, value)?,
            "include_terminal" => self.include_terminal = parse_bool(key, value)?,
            "entropy_baseline" => self.entropy_baseline = parse_bool(key, value)?,
            "average_over_trajectories" => self.average_over_trajectories = parse_bool(key, value)?,
            "window" => self.window = parse(key, value)?,
            "dataset_trajectories" => self.dataset_trajectories = parse(key, value)?,
            "q_episodes" => self.offline.episodes = parse(key, value)?,
            "q_batch" => self.offline.batch_size = parse(key, value)?,
            "q_alpha" => self.offline.learning_rate = parse(key, value)?,
            "q_gamma" => self.offline.discount = parse(key, value)?,
            "eval_episodes" => self.offline.eval_episodes = parse(key, value)?,
            "max_steps" => {
                self.offline.max_steps = if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "fw_agents" => self.fw.num_agents = parse(key, value)?,
            "fw_iterations" => self.fw.iterations = parse(key, value)?,
            "eta" => self.fw.eta = parse(key, value)?,
            "sigma" => self.fw.sigma = parse(key, value)?,
            "epsilon" => self.fw.epsilon = parse(key, value)?,
            "beta" => self.fw.beta = parse(key, value)?,
            "b_bound" => self.fw.b_bound = parse(key, value)?,
            "perturb" => self.fw.perturb = parse(key, value)?,
            "fw_initial" => {
                self.fw.initial = match value {
                    "uniform" => InitialPolicy::Uniform,
                    "first-action" => InitialPolicy::FirstAction,
                    _ => return Err(Error::config(key, format!("expected uniform|first-action, got `{value}`"))),
                }
            }
            "delta" => self.delta = parse(key, value)?,
            "conc_trials" => self.conc_trials = parse(key, value)?,
            "conc_trials_clamped" => self.conc_trials_clamped = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn k_prime(&self) -> usize {
        self.k_prime.unwrap_or(self.num_agents * self.trajectories_per_agent)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "contains duplicates"));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::config("slip_prob", "must lie in [0, 1]"));
        }
        if self.window == 0 {
            return Err(Error::config("window", "must be positive"));
        }
        if self.dataset_trajectories == 0 {
            return Err(Error::config("dataset_trajectories", "must be positive"));
        }
        if self.k_prime() == 0 {
            return Err(Error::config("k_prime", "must be positive"));
        }
        if self.offline.batch_size == 0 || self.offline.episodes == 0 || self.offline.eval_episodes == 0 {
            return Err(Error::config("q_batch", "offline batch, episodes and eval_episodes must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1)"));
        }
        if self.conc_trials == 0 || self.conc_trials_clamped == 0 {
            return Err(Error::config("conc_trials", "must be positive"));
        }
        self.pgpse(0).validate()?;
        self.fw.validate()?;
        Ok(())
    }

    /// Training configuration for one seed.
    pub fn pgpse(&self, seed: u64) -> PgpseConfig {
        PgpseConfig {
            episodes: self.episodes,
            trajectories_per_agent: self.trajectories_per_agent,
            batch_size: self.batch_size,
            learning_rate: self.alpha,
            decay: self.lambda,
            num_agents: self.num_agents,
            seed,
            include_terminal: self.include_terminal,
            entropy_baseline: self.entropy_baseline,
            average_over_trajectories: self.average_over_trajectories,
        }
    }

    /// Every key with its effective value, in a stable order.
    pub fn snapshot(&self) -> BTreeMap<&'static str, String> {
        let fw_initial = match self.fw.initial {
            InitialPolicy::Uniform => "uniform",
            InitialPolicy::FirstAction => "first-action",
        };
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        BTreeMap::from([
            ("env", self.env.to_string()),
            ("mode", self.mode.to_string()),
            ("m", self.num_agents.to_string()),
            ("K", self.trajectories_per_agent.to_string()),
            ("k_prime", self.k_prime().to_string()),
            ("B", self.batch_size.to_string()),
            ("episodes", self.episodes.to_string()),
            ("alpha", self.alpha.to_string()),
            ("lambda", self.lambda.to_string()),
            ("slip_prob", self.slip_prob.to_string()),
            ("seeds", seeds.join(",")),
            ("output", self.output.display().to_string()),
            ("workers", self.workers.to_string()),
            ("include_terminal", self.include_terminal.to_string()),
            ("entropy_baseline", self.entropy_baseline.to_string()),
            ("average_over_trajectories", self.average_over_trajectories.to_string()),
            ("window", self.window.to_string()),
            ("dataset_trajectories", self.dataset_trajectories.to_string()),
            ("q_episodes", self.offline.episodes.to_string()),
            ("q_batch", self.offline.batch_size.to_string()),
            ("q_alpha", self.offline.learning_rate.to_string()),
            ("q_gamma", self.offline.discount.to_string()),
            ("eval_episodes", self.offline.eval_episodes.to_string()),
            ("max_steps", self.offline.max_steps.map(|m| m.to_string()).unwrap_or_else(|| "auto".into())),
            ("fw_agents", self.fw.num_agents.to_string()),
            ("fw_iterations", self.fw.iterations.to_string()),
            ("eta", self.fw.eta.to_string()),
            ("sigma", self.fw.sigma.to_string()),
            ("epsilon", self.fw.epsilon.to_string()),
            ("beta", self.fw.beta.to_string()),
            ("b_bound", self.fw.b_bound.to_string()),
            ("perturb", self.fw.perturb.to_string()),
            ("fw_initial", fw_initial.to_string()),
            ("delta", self.delta.to_string()),
            ("conc_trials", self.conc_trials.to_string()),
            ("conc_trials_clamped", self.conc_trials_clamped.to_string()),
        ])
    }
}

/// Splits text into ordered `(key, value)` pairs.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Usage(format!("line {}: empty key", lineno + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}
