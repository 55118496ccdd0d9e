//! Seeded multi-run orchestration and CSV emission.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{parse_lines, ExperimentConfig, Mode};
use crate::concentration::{self, GridCell, GridTrials};
use crate::dist::{normalized_entropy, support_size, StateDistribution};
use crate::error::{Error, Result};
use crate::frank_wolfe::{self, FwConfig, FwIterate, MixturePolicy};
use crate::mdp::TabularMdp;
use crate::offline::{self, DatasetKind, GoalResult, Provenance, TransitionDataset};
use crate::pgpse::{self, TrainingMetrics};
use crate::policy::{ParallelPolicy, TabularPolicy};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub const TRAINING_AGGREGATE_HEADER: [&str; 6] =
    ["update", "env_steps", "norm_entropy_mean", "norm_entropy_std", "support_mean", "support_std"];
pub const TRAINING_SUMMARY_HEADER: [&str; 3] = ["seed", "final_norm_entropy", "final_support"];
pub const FW_AGGREGATE_HEADER: [&str; 5] =
    ["iter", "entropy_mean", "entropy_std", "avg_weight_entropy_mean", "avg_weight_entropy_std"];
pub const FW_SUMMARY_HEADER: [&str; 2] = ["seed", "final_entropy"];
pub const CONCENTRATION_AGGREGATE_HEADER: [&str; 7] =
    ["dist_id", "n", "eps", "bound", "empirical_mean", "empirical_std", "stderr_max"];
pub const CONCENTRATION_SUMMARY_HEADER: [&str; 3] = ["seed", "cells", "dominated"];
pub const DATASET_ENTROPY_HEADER: [&str; 4] = ["dataset_kind", "norm_entropy", "support", "records"];
pub const DATASET_AGGREGATE_HEADER: [&str; 5] =
    ["dataset_kind", "norm_entropy_mean", "norm_entropy_std", "support_mean", "support_std"];
pub const OFFLINE_AGGREGATE_HEADER: [&str; 4] = ["dataset_kind", "rank", "success_mean", "success_std"];
pub const OFFLINE_SUMMARY_HEADER: [&str; 4] = ["seed", "dataset_kind", "goals_at_least_half", "mean_success"];

const KINDS: [DatasetKind; 3] = [DatasetKind::Parallel, DatasetKind::Single, DatasetKind::Random];

/// Record of one `run`: what was asked, what was written, how long it took.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// Directory all listed paths are relative to.
    pub root: PathBuf,
    pub version: String,
    pub config: BTreeMap<String, String>,
    /// Per-seed CSVs, in emission order.
    pub seed_files: BTreeMap<u64, Vec<PathBuf>>,
    /// Cross-seed CSVs (aggregate and summary).
    pub shared_files: Vec<PathBuf>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn mode(&self) -> Result<Mode> {
        self.config_value("mode")?.parse()
    }

    pub fn env(&self) -> Result<&str> {
        self.config_value("env")
    }

    pub fn config_value(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::domain(format!("manifest lacks config key `{key}`")))
    }

    /// Every listed CSV, relative to `root`.
    pub fn all_files(&self) -> Vec<PathBuf> {
        self.seed_files.values().flatten().chain(&self.shared_files).cloned().collect()
    }

    pub fn aggregate_path(&self) -> PathBuf {
        self.root.join(AGGREGATE_FILE)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# parex run manifest\n");
        out.push_str(&format!("version = {}\n", self.version));
        out.push_str(&format!("wall_clock_secs = {:.3}\n", self.wall_clock_secs));
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k} = {v}\n"));
        }
        for (seed, files) in &self.seed_files {
            for f in files {
                out.push_str(&format!("seed.{seed} = {}\n", f.display()));
            }
        }
        for f in &self.shared_files {
            out.push_str(&format!("file = {}\n", f.display()));
        }
        out
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads `manifest.txt`; `root` becomes the manifest's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = RunManifest {
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            version: String::new(),
            config: BTreeMap::new(),
            seed_files: BTreeMap::new(),
            shared_files: Vec::new(),
            wall_clock_secs: 0.0,
        };
        let bad = |key: &str| Error::domain(format!("{}: malformed manifest entry `{key}`", path.display()));
        for (key, value) in parse_lines(&text)? {
            if let Some(k) = key.strip_prefix("config.") {
                manifest.config.insert(k.to_string(), value);
            } else if let Some(s) = key.strip_prefix("seed.") {
                let seed: u64 = s.parse().map_err(|_| bad(&key))?;
                manifest.seed_files.entry(seed).or_default().push(PathBuf::from(value));
            } else {
                match key.as_str() {
                    "version" => manifest.version = value,
                    "wall_clock_secs" => manifest.wall_clock_secs = value.parse().map_err(|_| bad(&key))?,
                    "file" => manifest.shared_files.push(PathBuf::from(value)),
                    _ => return Err(bad(&key)),
                }
            }
        }
        Ok(manifest)
    }
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

struct Emitter<'a> {
    root: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Emitter<'a> {
    fn new(root: &'a Path) -> Self {
        Self { root, written: Vec::new() }
    }

    fn file<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.root.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.written.push(PathBuf::from(name));
        Ok(())
    }

    fn rows(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        self.file(name, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(header)?;
            for r in rows {
                c.write_record(r)?;
            }
            c.flush().map_err(|e| Error::io(name, e))?;
            Ok(())
        })
    }

    fn sidecar(&self, name: &str, text: &str) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn mixture_dir(&mut self, name: &str, mix: &MixturePolicy) -> Result<()> {
        for p in mix.write_dir(&self.root.join(name))? {
            let rel = p.strip_prefix(self.root).unwrap_or(&p).to_path_buf();
            self.written.push(rel);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DatasetStats {
    kind: DatasetKind,
    norm_entropy: f64,
    support: usize,
    records: usize,
}

enum SeedData {
    Training(TrainingMetrics),
    FrankWolfe(Vec<FwIterate>),
    Concentration(Vec<GridCell>),
    Datasets {
        stats: Vec<DatasetStats>,
        success: Option<Vec<(DatasetKind, Vec<GoalResult>)>>,
    },
}

struct SeedOutput {
    seed: u64,
    files: Vec<PathBuf>,
    data: SeedData,
}

/// Executes `cfg.mode` for every seed and writes all artifacts under
/// `cfg.output`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    let root = cfg.output.clone();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mdp = cfg.env.build(cfg.slip_prob)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::domain(format!("cannot build worker pool: {e}")))?;
    let outputs: Vec<Result<SeedOutput>> =
        pool.install(|| cfg.seeds.par_iter().map(|&seed| run_seed(cfg, &mdp, &root, seed)).collect());
    let outputs: Vec<SeedOutput> = outputs.into_iter().collect::<Result<_>>()?;

    let mut shared = Emitter::new(&root);
    write_shared(cfg, &mdp, &outputs, &mut shared)?;

    let manifest = RunManifest {
        root: root.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.snapshot().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        seed_files: outputs.into_iter().map(|o| (o.seed, o.files)).collect(),
        shared_files: shared.written,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    manifest.write()?;
    Ok(manifest)
}

fn run_seed(cfg: &ExperimentConfig, mdp: &TabularMdp, root: &Path, seed: u64) -> Result<SeedOutput> {
    let mut out = Emitter::new(root);
    let data = match cfg.mode {
        Mode::Pgpse | Mode::SingleBaseline | Mode::Random => {
            let (policies, metrics) = train(cfg, mdp, seed, cfg.mode)?;
            out.file(&format!("train_seed{seed}.csv"), |w| metrics.write_csv(w))?;
            for (i, p) in policies.agents().iter().enumerate() {
                out.file(&format!("policy_seed{seed}_agent{i}.csv"), |w| p.write_csv(w))?;
            }
            let occupancy = policies_occupancy(mdp, policies.agents())?;
            out.file(&format!("occupancy_seed{seed}.csv"), |w| occupancy.write_csv(w))?;
            SeedData::Training(metrics)
        }
        Mode::FrankWolfe => {
            let fw_cfg = FwConfig { seed, ..cfg.fw.clone() };
            let result = frank_wolfe::parallel_frank_wolfe(mdp, &fw_cfg)?;
            out.file(&format!("fw_seed{seed}.csv"), |w| result.write_curve_csv(w))?;
            let mix = result.mixture();
            out.mixture_dir(&format!("mixture_seed{seed}"), &mix)?;
            let occupancy = frank_wolfe::exact_state_distribution(mdp, &mix)?;
            out.file(&format!("occupancy_seed{seed}.csv"), |w| occupancy.write_csv(w))?;
            SeedData::FrankWolfe(result.curve)
        }
        Mode::Concentration => {
            let trials = GridTrials {
                informative: cfg.conc_trials,
                clamped: cfg.conc_trials_clamped,
            };
            let cells = concentration::domination_grid(seed, cfg.delta, trials)?;
            out.file(&format!("concentration_seed{seed}.csv"), |w| concentration::write_grid_csv(&cells, w))?;
            SeedData::Concentration(cells)
        }
        Mode::DatasetEntropy | Mode::Offline => {
            let datasets = build_datasets(cfg, mdp, seed)?;
            let mut stats = Vec::with_capacity(datasets.len());
            for ds in &datasets {
                let kind = ds.provenance.kind;
                let name = format!("dataset_seed{seed}_{kind}.csv");
                out.file(&name, |w| ds.write_csv(w))?;
                out.sidecar(&format!("{name}.meta"), &ds.metadata())?;
                let d = ds.state_distribution(mdp.num_states())?;
                out.file(&format!("dataset_occupancy_seed{seed}_{kind}.csv"), |w| d.write_csv(w))?;
                stats.push(DatasetStats {
                    kind,
                    norm_entropy: normalized_entropy(&d, mdp.num_reachable()),
                    support: support_size(&d),
                    records: ds.len(),
                });
            }
            let rows: Vec<Vec<String>> = stats
                .iter()
                .map(|s| vec![s.kind.to_string(), fmt(s.norm_entropy), s.support.to_string(), s.records.to_string()])
                .collect();
            out.rows(&format!("dataset_entropy_seed{seed}.csv"), &DATASET_ENTROPY_HEADER, &rows)?;

            let success = if cfg.mode == Mode::Offline {
                let sweeps = datasets
                    .iter()
                    .map(|ds| Ok((ds.provenance.kind, offline::goal_sweep(ds, mdp, &cfg.offline, seed)?)))
                    .collect::<Result<Vec<_>>>()?;
                out.file(&format!("success_seed{seed}.csv"), |w| offline::write_success_csv(&sweeps, w))?;
                Some(sweeps)
            } else {
                None
            };
            SeedData::Datasets { stats, success }
        }
    };
    Ok(SeedOutput {
        seed,
        files: out.written,
        data,
    })
}

fn train(cfg: &ExperimentConfig, mdp: &TabularMdp, seed: u64, mode: Mode) -> Result<(ParallelPolicy, TrainingMetrics)> {
    let pg = cfg.pgpse(seed);
    match mode {
        Mode::SingleBaseline => {
            let (policy, metrics) = pgpse::train_single_baseline(mdp, &pg, cfg.k_prime())?;
            Ok((ParallelPolicy::new(vec![policy])?, metrics))
        }
        // Uniform agents measured under the same protocol: zero step size.
        Mode::Random => pgpse::train_pgpse(mdp, &pgpse::PgpseConfig { learning_rate: 0.0, ..pg }),
        _ => pgpse::train_pgpse(mdp, &pg),
    }
}

/// Exact occupancy of the uniform mixture of `agents`.
fn policies_occupancy(mdp: &TabularMdp, agents: &[TabularPolicy]) -> Result<StateDistribution> {
    let mut acc = vec![0.0; mdp.num_states()];
    for p in agents {
        for (a, x) in acc.iter_mut().zip(frank_wolfe::policy_state_distribution(mdp, p)?) {
            *a += x;
        }
    }
    let m = agents.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    let total: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|a| *a /= total);
    StateDistribution::new(acc)
}

/// Parallel, single-agent and random datasets of equal trajectory count.
fn build_datasets(cfg: &ExperimentConfig, mdp: &TabularMdp, seed: u64) -> Result<Vec<TransitionDataset>> {
    let (parallel, single) = rayon::join(
        || train(cfg, mdp, seed, Mode::Pgpse),
        || train(cfg, mdp, seed, Mode::SingleBaseline),
    );
    let (parallel, _) = parallel?;
    let (single, _) = single?;
    let random = ParallelPolicy::zeros(cfg.num_agents, mdp.num_states(), mdp.num_actions());
    let per_agent = cfg.dataset_trajectories;
    let sources = [
        (DatasetKind::Parallel, &parallel, per_agent),
        (DatasetKind::Single, &single, cfg.k_prime() * per_agent),
        (DatasetKind::Random, &random, per_agent),
    ];
    sources
        .into_iter()
        .map(|(kind, policies, n)| {
            let provenance = Provenance {
                kind,
                seed,
                env: cfg.env.to_string(),
            };
            offline::collect_dataset(policies, mdp, n, provenance)
        })
        .collect()
}

fn write_shared(cfg: &ExperimentConfig, mdp: &TabularMdp, outputs: &[SeedOutput], out: &mut Emitter) -> Result<()> {
    match cfg.mode {
        Mode::Pgpse | Mode::SingleBaseline | Mode::Random => {
            let runs: Vec<&TrainingMetrics> = outputs
                .iter()
                .map(|o| match &o.data {
                    SeedData::Training(m) => m,
                    _ => unreachable!("training mode yields training data"),
                })
                .collect();
            let updates = runs.iter().map(|m| m.records.len()).min().unwrap_or(0);
            let rows: Vec<Vec<String>> = (0..updates)
                .map(|u| {
                    let h: Vec<f64> = runs.iter().map(|m| m.records[u].norm_entropy).collect();
                    let s: Vec<f64> = runs.iter().map(|m| m.records[u].support).collect();
                    let (hm, hs) = mean_std(&h);
                    let (sm, ss) = mean_std(&s);
                    let r = &runs[0].records[u];
                    vec![r.update.to_string(), r.env_steps.to_string(), fmt(hm), fmt(hs), fmt(sm), fmt(ss)]
                })
                .collect();
            out.rows(AGGREGATE_FILE, &TRAINING_AGGREGATE_HEADER, &rows)?;
            let summary: Vec<Vec<String>> = outputs
                .iter()
                .zip(&runs)
                .map(|(o, m)| {
                    let (h, s) = m.final_values(cfg.window);
                    vec![o.seed.to_string(), fmt(h), fmt(s)]
                })
                .collect();
            out.rows(SUMMARY_FILE, &TRAINING_SUMMARY_HEADER, &summary)
        }
        Mode::FrankWolfe => {
            let curves: Vec<&Vec<FwIterate>> = outputs
                .iter()
                .map(|o| match &o.data {
                    SeedData::FrankWolfe(c) => c,
                    _ => unreachable!("frank-wolfe mode yields curves"),
                })
                .collect();
            let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
            let rows: Vec<Vec<String>> = (0..len)
                .map(|i| {
                    let h: Vec<f64> = curves.iter().map(|c| c[i].entropy).collect();
                    let w: Vec<f64> = curves.iter().map(|c| c[i].avg_weight_entropy).collect();
                    let (hm, hs) = mean_std(&h);
                    let (wm, ws) = mean_std(&w);
                    vec![curves[0][i].iter.to_string(), fmt(hm), fmt(hs), fmt(wm), fmt(ws)]
                })
                .collect();
            out.rows(AGGREGATE_FILE, &FW_AGGREGATE_HEADER, &rows)?;
            let summary: Vec<Vec<String>> = outputs
                .iter()
                .zip(&curves)
                .map(|(o, c)| vec![o.seed.to_string(), fmt(c.last().map(|x| x.entropy).unwrap_or(0.0))])
                .collect();
            out.rows(SUMMARY_FILE, &FW_SUMMARY_HEADER, &summary)
        }
        Mode::Concentration => {
            let grids: Vec<&Vec<GridCell>> = outputs
                .iter()
                .map(|o| match &o.data {
                    SeedData::Concentration(g) => g,
                    _ => unreachable!("concentration mode yields grids"),
                })
                .collect();
            let rows: Vec<Vec<String>> = (0..grids[0].len())
                .map(|k| {
                    let c = &grids[0][k];
                    let e: Vec<f64> = grids.iter().map(|g| g[k].report.empirical_tail).collect();
                    let se = grids.iter().map(|g| g[k].report.standard_error).fold(0.0, f64::max);
                    let (em, es) = mean_std(&e);
                    vec![
                        c.dist_id.clone(),
                        c.n.to_string(),
                        format!("{}", c.eps),
                        fmt(c.report.bound_value),
                        fmt(em),
                        fmt(es),
                        fmt(se),
                    ]
                })
                .collect();
            out.rows(AGGREGATE_FILE, &CONCENTRATION_AGGREGATE_HEADER, &rows)?;
            let summary: Vec<Vec<String>> = outputs
                .iter()
                .zip(&grids)
                .map(|(o, g)| {
                    let ok = g.iter().filter(|c| c.report.dominated(3.0)).count();
                    vec![o.seed.to_string(), g.len().to_string(), ok.to_string()]
                })
                .collect();
            out.rows(SUMMARY_FILE, &CONCENTRATION_SUMMARY_HEADER, &summary)
        }
        Mode::DatasetEntropy | Mode::Offline => {
            let per_seed: Vec<(&[DatasetStats], Option<&Vec<(DatasetKind, Vec<GoalResult>)>>)> = outputs
                .iter()
                .map(|o| match &o.data {
                    SeedData::Datasets { stats, success } => (stats.as_slice(), success.as_ref()),
                    _ => unreachable!("dataset modes yield dataset stats"),
                })
                .collect();
            if cfg.mode == Mode::DatasetEntropy {
                let rows: Vec<Vec<String>> = KINDS
                    .iter()
                    .map(|&kind| {
                        let pick = |f: fn(&DatasetStats) -> f64| -> Vec<f64> {
                            per_seed
                                .iter()
                                .filter_map(|(stats, _)| stats.iter().find(|s| s.kind == kind).map(f))
                                .collect()
                        };
                        let (hm, hs) = mean_std(&pick(|s| s.norm_entropy));
                        let (sm, ss) = mean_std(&pick(|s| s.support as f64));
                        vec![kind.to_string(), fmt(hm), fmt(hs), fmt(sm), fmt(ss)]
                    })
                    .collect();
                return out.rows(AGGREGATE_FILE, &DATASET_AGGREGATE_HEADER, &rows);
            }
            let sweeps: Vec<&Vec<(DatasetKind, Vec<GoalResult>)>> =
                per_seed.iter().map(|(_, s)| s.expect("offline mode runs goal sweeps")).collect();
            let goals = mdp.num_reachable();
            let mut rows = Vec::with_capacity(KINDS.len() * goals);
            for kind in KINDS {
                for rank in 0..goals {
                    let rates: Vec<f64> = sweeps
                        .iter()
                        .filter_map(|s| s.iter().find(|(k, _)| *k == kind))
                        .map(|(_, r)| r[rank].success_rate)
                        .collect();
                    let (m, s) = mean_std(&rates);
                    rows.push(vec![kind.to_string(), rank.to_string(), fmt(m), fmt(s)]);
                }
            }
            out.rows(AGGREGATE_FILE, &OFFLINE_AGGREGATE_HEADER, &rows)?;
            let mut summary = Vec::new();
            for (o, s) in outputs.iter().zip(&sweeps) {
                for (kind, results) in s.iter() {
                    let mean = results.iter().map(|r| r.success_rate).sum::<f64>() / results.len().max(1) as f64;
                    summary.push(vec![
                        o.seed.to_string(),
                        kind.to_string(),
                        offline::count_at_least(results, 0.5).to_string(),
                        fmt(mean),
                    ]);
                }
            }
            out.rows(SUMMARY_FILE, &OFFLINE_SUMMARY_HEADER, &summary)
        }
    }
}
