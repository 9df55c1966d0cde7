//! Command-line driver: pricing, trajectory simulation, parameter sweeps,
//! and the randomized validation suites.
//!
//! Exit codes: 0 success, 1 runtime or solver failure, 2 configuration
//! error. Sweep rows that fail individually are annotated in the CSV and do
//! not fail the command.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bargain_core::config::ExperimentConfig;
use bargain_core::dynamics::{certify_fixed_point, run_trajectory, TerminalStatus};
use bargain_core::export::{
    fmt_summary, sweep_csv, sweep_plot_script, sweep_status_counts, trajectory_csv,
    trajectory_plot_script,
};
use bargain_core::pricing::{
    agreement_feasible, feasibility_sides, price_bounds, reservation_price,
};
use bargain_core::solver::{sweep_lambda, sweep_risks};
use bargain_core::validate::run_all;
use bargain_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "bargain",
    version,
    about = "Reservation pricing and projected-gradient bargaining dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print both reservation prices, their bounds, and the feasibility verdict.
    Price(CommonArgs),
    /// Run one bargaining trajectory; write its CSV, plot script, and summary.
    Simulate(CommonArgs),
    /// Evaluate agreed prices over the configured grid; write CSV and plot script.
    Sweep(CommonArgs),
    /// Run the property suites and print the pass-fail table.
    Validate(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Price(a) | Command::Simulate(a) | Command::Sweep(a) | Command::Validate(a) => {
                a
            }
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory (overrides the config's [output] dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Property-suite seed (overrides the config's [output] seed).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Sweep worker threads; 0 means one per processor.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,

    /// Pin the deviation anchor to the initial state.
    #[arg(long)]
    fixed_anchor: bool,

    /// Project onto the true simplex (clamped) instead of the affine hull.
    #[arg(long)]
    clamped_projection: bool,

    /// Evaluate gradients at the current state instead of the next.
    #[arg(long)]
    explicit_scheme: bool,

    /// Print the resolved configuration as TOML before running.
    #[arg(long)]
    echo_config: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument { .. } | Error::DimensionMismatch(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let args = cli.command.args();
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(seed) = args.seed {
        cfg.output.seed = seed;
    }
    if let Some(workers) = args.workers {
        cfg.output.workers = workers;
    }
    if args.fixed_anchor {
        cfg.dynamics.fixed_anchor = true;
    }
    if args.clamped_projection {
        cfg.dynamics.clamped_projection = true;
    }
    if args.explicit_scheme {
        cfg.dynamics.explicit_scheme = true;
    }
    cfg.validate()?;
    if args.echo_config {
        print!("{}", cfg.to_toml());
    }
    match &cli.command {
        Command::Price(_) => cmd_price(&cfg),
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Sweep(_) => cmd_sweep(&cfg),
        Command::Validate(_) => cmd_validate(&cfg),
    }
}

fn write_output(cfg: &ExperimentConfig, name: &str, content: &str) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}

fn cmd_price(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let market = cfg.market_spec()?;
    let agents = cfg.agent_pair()?;
    let anchors = cfg.anchor_state()?;
    let price_a = reservation_price(agents.seller(), &market, anchors.q_a())?;
    let price_b = reservation_price(agents.buyer(), &market, anchors.q_b())?;
    let (lo_a, hi_a) = price_bounds(agents.seller(), &market)?;
    let (lo_b, hi_b) = price_bounds(agents.buyer(), &market)?;
    let feasible = agreement_feasible(agents.seller(), agents.buyer(), &market)?;
    let (spread, slack) = feasibility_sides(agents.seller(), agents.buyer(), &market)?;
    println!("P_A = {}", fmt_summary(price_a));
    println!("P_B = {}", fmt_summary(price_b));
    println!("bounds_A = [{}, {}]", fmt_summary(lo_a), fmt_summary(hi_a));
    println!("bounds_B = [{}, {}]", fmt_summary(lo_b), fmt_summary(hi_b));
    println!("payoff_spread = {}", fmt_summary(spread));
    println!("risk_slack = {}", fmt_summary(slack));
    println!("feasible = {feasible}");
    if !feasible {
        eprintln!(
            "agreement infeasible: payoff spread {} is not above the risk slack {}",
            fmt_summary(spread),
            fmt_summary(slack)
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let market = cfg.market_spec()?;
    let agents = cfg.agent_pair()?;
    let x0 = cfg.anchor_state()?;
    let dyn_cfg = cfg.dynamics_config()?;
    let traj = run_trajectory(&x0, &agents, &market, &dyn_cfg)?;
    let csv_path = write_output(cfg, "trajectory.csv", &trajectory_csv(&traj))?;
    write_output(
        cfg,
        "trajectory.gp",
        &trajectory_plot_script("trajectory.csv", market.k()),
    )?;
    if traj.feasibility_warning {
        eprintln!("warning: agreement-feasibility inequality fails at these risk levels");
    }
    let terminal = traj.terminal();
    println!("csv = {}", csv_path.display());
    println!("periods = {}", traj.steps());
    println!(
        "status = {}",
        match traj.status {
            TerminalStatus::Converged => "converged".to_string(),
            TerminalStatus::MaxPeriods => "max-periods".to_string(),
            TerminalStatus::StepSolverFailure { period, .. } => {
                format!("step-solver-failure at period {period}")
            }
        }
    );
    println!("P_A(final) = {}", fmt_summary(terminal.price_a));
    println!("P_B(final) = {}", fmt_summary(terminal.price_b));
    if traj.converged() {
        let cert = certify_fixed_point(
            &terminal.state,
            &agents,
            &market,
            &dyn_cfg,
            dyn_cfg.certificate_tol(),
        )?;
        println!(
            "certificate = {} (price gap {}, tangential gradient {}, interior margin {})",
            if cert.pass { "pass" } else { "fail" },
            fmt_summary(cert.price_gap),
            fmt_summary(cert.tangential_grad_norm),
            fmt_summary(cert.interior_margin),
        );
    } else {
        println!("certificate = not evaluated (orbit did not converge)");
    }
    if let TerminalStatus::StepSolverFailure {
        period,
        iterations,
        residual,
    } = traj.status
    {
        return Err(Error::StepSolver {
            period,
            iterations,
            residual,
        });
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let market = cfg.market_spec()?;
    let agents = cfg.agent_pair()?;
    let x0 = cfg.anchor_state()?;
    let dyn_cfg = cfg.dynamics_config()?;
    let (section, provenance) = cfg.sweep_section()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.output.workers)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let result = pool.install(|| {
        if section.lambda_grid.is_empty() {
            sweep_risks(
                &x0,
                &agents,
                &market,
                &dyn_cfg,
                &section.r_a_grid,
                &section.r_b_grid,
                provenance,
                &section.epsilon_schedule,
            )
        } else {
            sweep_lambda(
                &x0,
                &agents,
                &market,
                &dyn_cfg,
                &section.lambda_grid,
                provenance,
                &section.epsilon_schedule,
            )
        }
    })?;
    let csv_path = write_output(cfg, "sweep.csv", &sweep_csv(&result))?;
    write_output(cfg, "sweep.gp", &sweep_plot_script("sweep.csv", &result))?;
    let (ok, infeasible, failed) = sweep_status_counts(&result);
    println!("csv = {}", csv_path.display());
    println!("rows = {}", result.points.len());
    println!("ok = {ok}");
    println!("infeasible = {infeasible}");
    println!("failed = {failed}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let report = run_all(cfg);
    print!("{}", report.render_table());
    if report.failed() {
        eprintln!("validation failed");
        Ok(ExitCode::from(1))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}
