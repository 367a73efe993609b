use clap::{Args, Parser, Subcommand};
use qmetro_cli::config::{load_config, ScenarioConfig};
use qmetro_cli::error::{CliError, CliResult};
use qmetro_cli::tasks::{self, RunOutput};
use qmetro_cli::{csvio, service};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qmetro", version, about = "Quantum parameter estimation scenarios")]
struct Cli {
    /// Worker threads for parallel evaluation.
    #[arg(long, env = "QMETRO_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Keep the candidate of every episode (or posterior of every round).
    #[arg(long)]
    save_all: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Quantum and classical information bounds along the evolution.
    Bounds(RunArgs),
    /// Bayesian estimation on a parameter grid.
    Bayes(RunArgs),
    /// Control optimization.
    Copt(RunArgs),
    /// Probe state optimization.
    Sopt(RunArgs),
    /// Measurement optimization.
    Mopt(RunArgs),
    /// Joint optimization of state, controls and measurement.
    Compopt(RunArgs),
    /// Shortest evolution time reaching a target objective.
    Mintime(RunArgs),
    /// Adaptive estimation.
    #[command(subcommand)]
    Adapt(AdaptCommand),
    /// HTTP service for interactive adaptive sessions.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum AdaptCommand {
    /// Simulated or recorded run of a whole session.
    Run(RunArgs),
    /// Feeds a recorded outcome file through a fresh session and prints every round.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// Also write the session artifacts here.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn load(args: &RunArgs, expected: &str) -> CliResult<ScenarioConfig> {
    let mut cfg = load_config(&args.config)?;
    if cfg.task_name() != expected {
        return Err(CliError::invalid("task.kind", format!("`{expected}` cannot run a `{}` task", cfg.task_name())));
    }
    cfg.apply_overrides(args.seed, args.output_dir.clone(), args.save_all);
    Ok(cfg)
}

fn run(args: &RunArgs, expected: &str) -> CliResult<()> {
    let cfg = load(args, expected)?;
    let out = tasks::run_task(&cfg)?;
    print_output(&out);
    let dir = tasks::write_bundle(&cfg, &out)?;
    println!("wrote {} artifacts to {}", out.artifacts.len(), dir.display());
    Ok(())
}

fn print_output(out: &RunOutput) {
    let width = out.summary.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in &out.summary {
        println!("{k:<width$}  {v}");
    }
    if let Some(t) = &out.table {
        let cells: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(|v| format!("{v:.10}")).collect()).collect();
        print_table(&t.header, &cells);
    }
}

fn print_table(header: &[String], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ");
    println!("{}", line(header));
    for r in rows {
        println!("{}", line(r));
    }
}

fn replay(config: &PathBuf, y: &PathBuf, output_dir: Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(config)?;
    let text = std::fs::read_to_string(y).map_err(|e| CliError::io(y, e))?;
    let ys = csvio::read_outcomes(&text)?;
    let (session, _) = tasks::build_session(&cfg)?;
    let (session, reports) = session.replay(&ys).map_err(qmetro_cli::error::at("y"))?;
    let header: Vec<String> = ["round", "y", "phase", "u", "x_hat", "u_next"].into_iter().map(String::from).collect();
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.10}")).collect::<Vec<_>>().join(" ");
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let phase = match r.phase {
                qmetro::adaptive::Phase::PreEstimation => "pre",
                qmetro::adaptive::Phase::Adaptive => "adaptive",
            };
            vec![r.round.to_string(), r.y.to_string(), phase.into(), list(&r.u_used), list(&r.x_hat), list(&r.u_next)]
        })
        .collect();
    print_table(&header, &rows);
    if output_dir.is_some() {
        cfg.apply_overrides(None, output_dir, false);
        let out = RunOutput {
            task: "adapt",
            summary: Vec::new(),
            table: None,
            artifacts: tasks::adapt_artifacts(&session, &[]),
        };
        let dir = tasks::write_bundle(&cfg, &out)?;
        println!("wrote {} artifacts to {}", out.artifacts.len(), dir.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Bounds(a) => run(&a, "bounds"),
        Command::Bayes(a) => run(&a, "bayes"),
        Command::Copt(a) => run(&a, "copt"),
        Command::Sopt(a) => run(&a, "sopt"),
        Command::Mopt(a) => run(&a, "mopt"),
        Command::Compopt(a) => run(&a, "compopt"),
        Command::Mintime(a) => run(&a, "mintime"),
        Command::Adapt(AdaptCommand::Run(a)) => run(&a, "adapt"),
        Command::Adapt(AdaptCommand::Replay { config, y, output_dir }) => replay(&config, &y, output_dir),
        Command::Serve { bind, data_dir } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
            rt.block_on(service::serve(bind, data_dir))
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Library(qmetro::Error::NotFound { best }) = &e {
                eprintln!("best value reached: {best}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
