mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig};
use pipeline::{Cache, Failure, Pipeline};

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "flexneeds", version, about = "Day-ahead flexibility needs assessment for radial LV feeders")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "flexneeds.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and cache the scenario set.
    GenScenarios,
    /// Partition the feeder into electrical zones.
    Zone,
    /// Solve every scenario and derive robust needs.
    Assess,
    /// Run a parameter study.
    Study {
        #[command(subcommand)]
        which: Study,
    },
    /// Run all stages and bundle their CSVs with a markdown summary.
    Report,
}

#[derive(Subcommand)]
enum Study {
    /// Chance-constraint level sweep with knee selection.
    Cc,
    /// Power and energy bound tightening sweep.
    Tighten,
}

enum Exit {
    Config(ConfigError),
    Failed(Failure),
}

impl From<Failure> for Exit {
    fn from(f: Failure) -> Self {
        Exit::Failed(f)
    }
}

fn note(stage: &str, dir: &Path, cache: Cache) {
    let how = match cache {
        Cache::Hit => "cache hit",
        Cache::Miss => "computed",
    };
    eprintln!("{stage}: {how}, {}", dir.display());
}

fn flagged_exit(flagged: &[usize]) -> u8 {
    if flagged.is_empty() {
        0
    } else {
        eprintln!("{} scenario(s) flagged: {:?}", flagged.len(), flagged);
        EXIT_PARTIAL
    }
}

fn run(cli: Cli) -> Result<u8, Exit> {
    let loaded = RunConfig::from_file(&cli.config).and_then(RunConfig::load).map_err(Exit::Config)?;
    let threads = loaded.config.run.threads;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Exit::Config(ConfigError(e.to_string())))?;
    }
    let p = Pipeline::new(loaded);
    match cli.command {
        Command::GenScenarios => {
            let (set, dir, cache) = p.scenarios(p.loaded.config.scenarios.count)?;
            note("scenarios", &dir, cache);
            println!("{} scenarios x {} steps", set.count(), set.steps());
            Ok(0)
        }
        Command::Zone => {
            let (part, dir, cache) = p.zone()?;
            note("zones", &dir, cache);
            println!("k = {}, silhouette = {:.4}", part.k, part.score);
            Ok(0)
        }
        Command::Assess => {
            let (s, dir, cache) = p.assess()?;
            note("assess", &dir, cache);
            println!(
                "eps_cc {}: ramp-up {:.3} kWh, ramp-down {:.3} kWh, congested hours {:.2}% -> {:.2}%",
                s.eps,
                s.nodal.total_energy_up_kwh,
                s.nodal.total_energy_down_kwh,
                100.0 * s.baseline.hours,
                100.0 * s.dispatched.hours
            );
            Ok(flagged_exit(&s.flagged))
        }
        Command::Study { which: Study::Cc } => {
            let (s, dir, cache) = p.study_cc()?;
            note("study cc", &dir, cache);
            match s.knee_eps {
                Some(e) => println!("selected eps_cc = {e}"),
                None => println!("fewer than three levels, no knee selected"),
            }
            Ok(0)
        }
        Command::Study { which: Study::Tighten } => {
            let (s, dir, cache) = p.study_tighten()?;
            note("study tighten", &dir, cache);
            println!("unconstrained feasibility {:.2}%", s.reference_feasible_pct);
            Ok(0)
        }
        Command::Report => {
            let (dir, s) = p.report()?;
            println!("report written to {}", dir.display());
            Ok(flagged_exit(&s.flagged))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Exit::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Exit::Failed(e)) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
