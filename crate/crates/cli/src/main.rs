//! `oseen`: single runs, convergence studies and the structural check suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use oseen_core::harness::{parse_init_mode, run_manufactured, run_study, DtRule, StudyConfig, CSV_HEADER};
use oseen_core::scheme::{RunOptions, SchemeParams};
use oseen_core::verify;

#[derive(Parser, Debug)]
#[command(name = "oseen", version, about = "Projection Lagrange-Galerkin solver for the transient Oseen problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation of the manufactured problem.
    Run {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        delta0: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long = "N")]
        n: usize,
        /// h2, h or h/<divisor>
        #[arg(long, default_value = "h2")]
        dt_rule: String,
        #[arg(long = "T", default_value_t = 1.0)]
        t_final: f64,
        /// lagrange or stokes_projection
        #[arg(long, default_value = "lagrange")]
        init: String,
        #[arg(long, default_value_t = 1e-10)]
        cg_tol: f64,
        /// Output directory for run.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Per-step diagnostics CSV.
        #[arg(long)]
        diag: Option<PathBuf>,
    },
    /// Run a convergence study described by a key = value config file.
    Study {
        config: PathBuf,
        /// Use the full mesh list 16, 23, 32, 45, 64.
        #[arg(long)]
        full: bool,
    },
    /// Run the structural check suite.
    Verify,
}

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(EXIT_INVALID);
        }
    };
    match cli.command {
        Command::Run { k, l, delta0, nu, n, dt_rule, t_final, init, cg_tol, out, diag } => {
            let rule = match DtRule::parse(&dt_rule) {
                Ok(r) => r,
                Err(e) => return invalid(e),
            };
            let mut params = SchemeParams::new(k, l, delta0, nu, rule.dt(n.max(1)), t_final);
            params.cg_tol = cg_tol;
            params.init_mode = match parse_init_mode(&init) {
                Ok(m) => m,
                Err(e) => return invalid(e),
            };
            if n == 0 {
                return invalid("N must be positive");
            }
            if let Err(e) = params.validate() {
                return invalid(e);
            }
            let record = run_manufactured(&params, n, &RunOptions { diag_path: diag });
            if let Err(reason) = &record.result {
                eprintln!("error: run failed: {reason}");
                return ExitCode::from(EXIT_RUN_FAILURE);
            }
            if let Err(e) = std::fs::create_dir_all(&out)
                .and_then(|_| std::fs::write(out.join("run.csv"), format!("{CSV_HEADER}\n{}\n", record.csv_row())))
            {
                eprintln!("error: cannot write {}: {e}", out.join("run.csv").display());
                return ExitCode::from(EXIT_RUN_FAILURE);
            }
            println!("{CSV_HEADER}");
            println!("{}", record.csv_row());
            if let Ok(summary) = &record.result {
                for v in &summary.violations {
                    eprintln!("warning: {v}");
                }
            }
            ExitCode::SUCCESS
        }
        Command::Study { config, full } => {
            let mut cfg = match StudyConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => return invalid(e),
            };
            if full {
                cfg.use_full_list();
            }
            match run_study(&cfg) {
                Ok(table) => {
                    print!("{}", table.summary());
                    let failed = table.series.iter().flat_map(|s| &s.rows).any(|r| r.result.is_err());
                    if failed {
                        ExitCode::from(EXIT_RUN_FAILURE)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUN_FAILURE)
                }
            }
        }
        Command::Verify => {
            let results = verify::run_all();
            let mut ok = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_RUN_FAILURE)
            }
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_INVALID)
}
