use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dshgan::pipeline::{report, ExperimentConfig, Pipeline, Stage, DATA_ROOT_ENV};

#[derive(Parser)]
#[command(name = "dshgan", version, about = "GAN-assisted deep hashing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Root for relative dataset paths.
    #[arg(long, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage in order, or only `--stage`.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage: Option<String>,
    },
    /// Build the data splits and pretrain the GAN.
    PretrainGan(Common),
    /// Joint training for every code length and synthetic fraction.
    Train(Common),
    /// Hash database and queries with the trained models.
    Index(Common),
    /// Fit LSH and random-code baselines.
    EncodeLsh(Common),
    /// Score every code set.
    Eval(Common),
    /// Train, index and evaluate over a list of synthetic fractions.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated fractions; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
    },
    /// Write generated sample grids.
    DumpSamples(Common),
    /// Summarize the reports in a run directory.
    Report {
        run_dir: PathBuf,
    },
}

enum Failure {
    Config(String),
    Stage(String),
}

fn pipeline(common: &Common) -> Result<Pipeline, Failure> {
    if let Some(root) = &common.data_root {
        std::env::set_var(DATA_ROOT_ENV, root);
    }
    let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(Pipeline::new(cfg, common.out.clone()))
}

fn run_stages(p: &Pipeline, stages: &[Stage]) -> Result<(), Failure> {
    for &s in stages {
        p.run_stage(s).map_err(|e| match e.error {
            dshgan::Error::Configuration(_) => Failure::Config(e.to_string()),
            _ => Failure::Stage(e.to_string()),
        })?;
        eprintln!("stage {} done", s.name());
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { common, stage } => {
            let p = pipeline(&common)?;
            match stage {
                Some(name) => {
                    let s = Stage::parse(&name).ok_or_else(|| {
                        let names: Vec<_> = Stage::ALL.iter().map(|s| s.name()).collect();
                        Failure::Config(format!("unknown stage {name:?}; expected one of {}", names.join(", ")))
                    })?;
                    run_stages(&p, &[s])
                }
                None => run_stages(&p, &Stage::ALL),
            }
        }
        Command::PretrainGan(c) => run_stages(&pipeline(&c)?, &[Stage::Data, Stage::PretrainGan]),
        Command::Train(c) => run_stages(&pipeline(&c)?, &[Stage::Train]),
        Command::Index(c) => run_stages(&pipeline(&c)?, &[Stage::Index]),
        Command::EncodeLsh(c) => run_stages(&pipeline(&c)?, &[Stage::EncodeLsh]),
        Command::Eval(c) => run_stages(&pipeline(&c)?, &[Stage::Eval]),
        Command::DumpSamples(c) => run_stages(&pipeline(&c)?, &[Stage::DumpSamples]),
        Command::Sweep { common, fractions } => {
            let mut p = pipeline(&common)?;
            if !fractions.is_empty() {
                p.config.synthetic_fractions = fractions;
                p.config.validate().map_err(|e| Failure::Config(e.to_string()))?;
            }
            run_stages(&p, &[Stage::Train, Stage::Index, Stage::EncodeLsh, Stage::Eval, Stage::Report])
        }
        Command::Report { run_dir } => {
            let summary = report(&run_dir).map_err(|e| Failure::Stage(format!("stage report failed: {e}")))?;
            for dir in &summary.missing {
                eprintln!("warning: no report in {}", dir.display());
            }
            print!("{}", summary.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("{m}");
            ExitCode::from(2)
        }
    }
}
