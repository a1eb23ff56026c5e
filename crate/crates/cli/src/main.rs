use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, ValueEnum};
use mpoforge::commands::{self, Outcome};
use mpoforge::config::{keys_help, RunConfig};
use mpoforge::record::{write_outputs, ResultRecord, Status};
use mpoforge::verify;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    GroundState,
    Expfit,
    Longrange,
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GroundState => "ground-state",
            Command::Expfit => "expfit",
            Command::Longrange => "longrange",
            Command::Verify => "verify",
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mpoforge",
    version,
    about = "Uniform MPS ground states, exponential-sum fits and long-range MPO evaluation"
)]
#[command(after_help = keys_help())]
struct Cli {
    command: Command,
    /// Flat key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the JSON record and CSV trace
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    /// key=value overrides applied after the config file
    overrides: Vec<String>,
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<Outcome> {
    match cli.command {
        Command::GroundState => commands::ground_state(cfg, &cli.output_dir),
        Command::Expfit => commands::expfit(cfg),
        Command::Longrange => commands::longrange(cfg),
        Command::Verify => {
            let (record, trace) = verify::run(cfg)?;
            Ok(Outcome {
                record,
                trace: Some(trace),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let t0 = Instant::now();
    let (mut record, trace) = match run(&cli, &cfg) {
        Ok(o) => (o.record, o.trace),
        Err(e) => {
            eprintln!("error: {e:#}");
            let mut r = ResultRecord::new(cli.command.name(), &cfg);
            r.status = Status::Failed;
            r.error = Some(format!("{e:#}"));
            r.wall_time_s = t0.elapsed().as_secs_f64();
            (r, None)
        }
    };
    match write_outputs(&cli.output_dir, &mut record, trace.as_ref()) {
        Ok(path) => println!("{}", path.display()),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    }
    match record.status {
        Status::Ok => ExitCode::SUCCESS,
        Status::NotConverged | Status::Failed => ExitCode::FAILURE,
    }
}
