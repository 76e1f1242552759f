use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polsim::cli::{self, Command, RunContext};
use polsim::config::Config;

#[derive(Parser)]
#[command(name = "polsim", version, about = "Polarization-chain simulator for satellite uplinks")]
struct Args {
    #[command(subcommand)]
    command: Cmd,

    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed for simulated counts
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads (1 runs single-threaded)
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Reflectance and retardance of a coating stack
    Coating,
    /// PER over the local test directions
    PerMap,
    /// HWP schedules for the passes of a TLE or a pass file
    Compensate,
    /// Pass-averaged fidelity over ground and satellite offsets
    OffsetScan,
    /// CHSH test from simulated or recorded coincidences
    Bell,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Coating => Command::Coating,
            Cmd::PerMap => Command::PerMap,
            Cmd::Compensate => Command::Compensate,
            Cmd::OffsetScan => Command::OffsetScan,
            Cmd::Bell => Command::Bell,
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match &args.config {
        Some(path) => match Config::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("polsim: {e}");
                return ExitCode::from(1);
            }
        },
        None => Config::empty(),
    };
    let ctx = RunContext { seed: args.seed, jobs: args.jobs, out_dir: args.out, data_dir: cli::default_data_dir() };
    let cmd = Command::from(args.command);
    match cli::run(cmd, &cfg, &ctx) {
        Ok(out) => {
            print!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("polsim {}: {e}", cmd.name());
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
