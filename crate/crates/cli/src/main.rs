use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ocp_cli::{cmd_compare, cmd_eval, cmd_export_samples, cmd_run, output_root, parse_config, CliError};

#[derive(Parser)]
#[command(name = "ocp-adaptive", version, about = "Neural surrogates for parametric optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the surrogates described by a config file.
    Run {
        config: PathBuf,
        /// Output root; defaults to $OCP_ADAPTIVE_OUT, then ./runs.
        #[arg(long)]
        out_root: Option<PathBuf>,
    },
    /// Evaluate a run at one parameter value on a grid.
    Eval {
        dir: PathBuf,
        /// Parameter value; omit for problems without parameters.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        xi: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        res: Vec<usize>,
        /// Stage to load; defaults to the last one.
        #[arg(long)]
        stage: Option<usize>,
        /// Fail unless the run was trained on this problem.
        #[arg(long)]
        problem: Option<String>,
    },
    /// Merge the records of several runs of one problem.
    Compare {
        /// Config files or run directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_root: Option<PathBuf>,
        /// Directory for the merged CSVs; the report goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the training set of one stage as CSV.
    ExportSamples {
        dir: PathBuf,
        #[arg(long)]
        stage: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out_root } => {
            let cfg = parse_config(&config)?;
            let root = out_root.unwrap_or_else(output_root);
            let dirs = cmd_run(&cfg, &root, &mut |seed, r| {
                eprintln!(
                    "seed {seed} stage {}: |S| = {}, L_s {:.3e}, L_a {:.3e}, L_u {:.3e}, u err {:.4e}, {:.1}s",
                    r.stage, r.set_size, r.loss_state, r.loss_adjoint, r.loss_control, r.rel_l2_u, r.wall_seconds
                );
            })?;
            for d in dirs {
                println!("{}", d.display());
            }
        }
        Command::Eval { dir, xi, res, stage, problem } => {
            let out = cmd_eval(&dir, &xi, &res, stage, problem.as_deref())?;
            println!("{}", out.fields.display());
            if let Some(c) = out.control {
                println!("{}", c.display());
            }
            if let Some(e) = out.errors {
                println!("rel_l2 u {:e} y {:e} p {:e}", e.control, e.state, e.adjoint);
            }
        }
        Command::Compare { inputs, out_root, out } => {
            let cmp = cmd_compare(&inputs, &out_root.unwrap_or_else(output_root))?;
            match out {
                Some(dir) => cmp.write(&dir)?,
                None => print!("{}", cmp.report),
            }
        }
        Command::ExportSamples { dir, stage, out } => {
            let set = cmd_export_samples(&dir, stage)?;
            match out {
                Some(path) => set.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    set.write_csv(&mut lock)?;
                    lock.flush()?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::from(match e {
                CliError::Config { .. } | CliError::MissingKeys(_) => 2,
                _ => 1,
            })
        }
    }
}
