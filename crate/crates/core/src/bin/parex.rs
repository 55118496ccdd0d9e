use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parex::dist::StateDistribution;
use parex::harness::{self, ExperimentConfig, RunManifest};
use parex::mdp::{EnvId, DEFAULT_SLIP_PROB};
use parex::{Error, Result};

const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "parex", version, about = "Parallel maximum-state-entropy exploration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, applied after the file and `PAREX_OUT`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Align training curves of several runs on environment steps.
    Compare {
        manifests: Vec<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reshape a `state_index,prob` CSV into the grid of an environment.
    Heatmap {
        dist: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, overrides } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(root) = std::env::var_os("PAREX_OUT") {
                cfg.output = PathBuf::from(root);
            }
            for o in &overrides {
                cfg.apply_override(o)?;
            }
            let manifest = harness::run(&cfg)?;
            eprintln!(
                "parex: {} on {} finished in {:.1}s, {} files under {}",
                cfg.mode,
                cfg.env,
                manifest.wall_clock_secs,
                manifest.all_files().len(),
                manifest.root.display()
            );
            Ok(())
        }
        Command::Compare { manifests, out } => {
            if manifests.is_empty() {
                return Err(Error::Usage("compare needs at least one manifest".into()));
            }
            let manifests = manifests.iter().map(|p| RunManifest::read(p)).collect::<Result<Vec<_>>>()?;
            let mut w = output(out.as_deref())?;
            harness::compare(&manifests, &mut w)?;
            w.flush().map_err(|e| Error::io("<output>", e))
        }
        Command::Heatmap { dist, env, out } => {
            let env: EnvId = env
                .parse()
                .map_err(|_| Error::Usage(format!("unknown environment `{env}`")))?;
            let file = File::open(&dist).map_err(|e| Error::io(&dist, e))?;
            let d = StateDistribution::read_csv(file)?;
            let grid = env.grid(DEFAULT_SLIP_PROB)?;
            let mut w = output(out.as_deref())?;
            harness::emit_heatmap_data(&d, &grid, &mut w)?;
            w.flush().map_err(|e| Error::io("<output>", e))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("parex: {e}");
            match e {
                Error::Usage(_) | Error::Config { .. } => ExitCode::from(EXIT_USAGE),
                _ => ExitCode::from(EXIT_RUNTIME),
            }
        }
    }
}
