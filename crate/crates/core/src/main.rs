use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ecosim::scenario::csvfmt::fmt9;
use ecosim::scenario::tools::{parse_duration, Comparison};
use ecosim::scenario::{compare, report, run_to_dir, sweep, Scenario};
use ecosim::Error;

#[derive(Parser)]
#[command(name = "ecosim", version, about = "In-situ energy measurement simulator")]
struct Cli {
    /// Directory that receives run and sweep outputs.
    #[arg(long, global = true, env = "ECOSIM_OUT", default_value = "runs")]
    out: PathBuf,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its outputs to <out>/<name>-seed<seed>.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run N seeds of a scenario and write <out>/<name>-sweep.
    Sweep {
        #[arg(long)]
        seeds: u64,
        scenario: PathBuf,
    },
    /// Compare a run (or sweep) directory against its oracle.
    Compare { run_dir: PathBuf },
    /// Re-bin a run directory, e.g. `--bins 2h`.
    Report {
        #[arg(long, default_value = "2h")]
        bins: String,
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_) | Error::InvalidParameter(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn print_file(path: &Path) -> ecosim::Result<()> {
    print!("{}", std::fs::read_to_string(path)?);
    Ok(())
}

fn execute(cli: &Cli) -> ecosim::Result<()> {
    match &cli.cmd {
        Cmd::Run { scenario, seed } => {
            let mut scn = Scenario::load(scenario)?;
            if let Some(s) = seed {
                scn = scn.with_seed(*s);
            }
            let dir = cli.out.join(format!("{}-seed{}", scn.name, scn.seed));
            let (out, files) = run_to_dir(&scn, &dir)?;
            println!("{}", dir.display());
            for f in &files {
                println!("  {f}");
            }
            if let Some(r) = &out.report {
                print!("{}", ecosim::sched::render_es(r));
            }
            println!("conservation residual (relative): {:e}", out.ledger.relative_residual());
        }
        Cmd::Sweep { seeds, scenario } => {
            let scn = Scenario::load(scenario)?;
            let dir = cli.out.join(format!("{}-sweep", scn.name));
            sweep(&scn, *seeds, &dir)?;
            println!("{}", dir.display());
            print_file(&dir.join("sweep_errors.csv"))?;
            if dir.join("fit.csv").exists() {
                print_file(&dir.join("fit.csv"))?;
            }
        }
        Cmd::Compare { run_dir } => match compare(run_dir)? {
            Comparison::Run(rows) => {
                println!("{:<28} {:>16} {:>16} {:>16} {:>12}", "quantity", "measured", "oracle", "abs_error", "rel_error");
                for r in rows {
                    println!(
                        "{:<28} {:>16} {:>16} {:>16} {:>12}",
                        r.quantity,
                        fmt9(r.measured),
                        fmt9(r.oracle),
                        fmt9(r.abs_error),
                        fmt9(r.rel_error)
                    );
                }
            }
            Comparison::Sweep { .. } => {
                print_file(&run_dir.join("sweep_errors.csv"))?;
                if run_dir.join("fit.csv").exists() {
                    print_file(&run_dir.join("fit.csv"))?;
                }
            }
        },
        Cmd::Report { bins, run_dir } => {
            let name = report(run_dir, parse_duration(bins)?)?;
            print_file(&run_dir.join(name))?;
        }
    }
    Ok(())
}
