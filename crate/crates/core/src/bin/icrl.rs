use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icrl::metrics::audit;
use icrl::run::{eval_checkpoint, gen_world, train, Experiment, RunConfig};
use icrl::Error;

#[derive(Parser)]
#[command(name = "icrl", about = "Curriculum GRPO for tool-using sequence policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a TOML run config.
    Train {
        config: PathBuf,
        /// Continue from a stage checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint on the config's world.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        shots: usize,
    },
    /// Recompute a run's metrics CSV from its episode log.
    Audit { rundir: PathBuf },
    /// Write a synthetic world file.
    GenWorld { seed: u64, out: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Architecture(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, resume } => {
            let cfg = RunConfig::load(&config)?;
            let exp = Experiment::prepare(&cfg)?;
            let out = cfg.resolved_output_dir();
            let summary = train(&exp, &out, resume.as_deref())?;
            print!("{}", summary.eval.to_csv());
            println!("wrote {} ({} steps)", out.display(), summary.steps);
        }
        Command::Eval { checkpoint, config, shots } => {
            let cfg = RunConfig::load(&config)?;
            let exp = Experiment::prepare(&cfg)?;
            let (report, _) = eval_checkpoint(&exp, &checkpoint, shots)?;
            print!("{}", report.to_csv());
            println!("turns,cumulative_finish_percent");
            for (n, p) in &report.cumulative_finish {
                println!("{n},{p}");
            }
        }
        Command::Audit { rundir } => {
            let r = audit(&rundir)?;
            println!("audit ok: {} metrics rows match {} episodes", r.rows_checked, r.episodes);
        }
        Command::GenWorld { seed, out } => {
            let w = gen_world(seed, &out)?;
            println!("wrote {} ({} triples)", out.display(), w.relations.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
