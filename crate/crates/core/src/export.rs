//! CSV and plot-script emission.
//!
//! CSV dialect: comma-separated, one header row, LF line endings, no
//! quoting. Floats carry 17 significant digits so the files work as oracles;
//! human-facing summaries round to 12. Plot scripts are gnuplot-compatible
//! plain text referencing the CSV by name.

use std::fmt::Write as _;

use crate::dynamics::TrajectoryRecord;
use crate::solver::{SweepResult, PointStatus};

/// Full-precision float field: 17 significant digits.
pub fn fmt_csv(x: f64) -> String {
    format!("{x:.16e}")
}

/// Human-summary float: 12 significant digits.
pub fn fmt_summary(x: f64) -> String {
    format!("{x:.11e}")
}

/// Renders a trajectory as CSV: header
/// `t,qa_1..qa_K,qb_1..qb_K,price_a,price_b,lyapunov,delta_lyapunov,boundary_violation,solver_iters`,
/// one row per period, booleans as 0/1.
pub fn trajectory_csv(traj: &TrajectoryRecord) -> String {
    let k = traj
        .periods
        .first()
        .map_or(0, |row| row.state.k());
    let mut out = String::new();
    out.push('t');
    for i in 1..=k {
        let _ = write!(out, ",qa_{i}");
    }
    for i in 1..=k {
        let _ = write!(out, ",qb_{i}");
    }
    out.push_str(",price_a,price_b,lyapunov,delta_lyapunov,boundary_violation,solver_iters\n");
    for row in &traj.periods {
        let _ = write!(out, "{}", row.t);
        for block in [row.state.q_a().weights(), row.state.q_b().weights()] {
            for &v in block {
                let _ = write!(out, ",{}", fmt_csv(v));
            }
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{}",
            fmt_csv(row.price_a),
            fmt_csv(row.price_b),
            fmt_csv(row.lyapunov),
            fmt_csv(row.delta_lyapunov),
            row.boundary_violation as u8,
            row.solver_iters,
        );
    }
    out
}

/// Renders a sweep as CSV: header
/// `lambda,r_a,r_b,price_star,objective,constraint_residual,status`,
/// one row per grid point in sweep order.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("lambda,r_a,r_b,price_star,objective,constraint_residual,status\n");
    for p in &result.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_csv(p.lambda),
            fmt_csv(p.r_a),
            fmt_csv(p.r_b),
            fmt_csv(p.price_star),
            fmt_csv(p.objective),
            fmt_csv(p.constraint_residual),
            p.status.as_str(),
        );
    }
    out
}

/// Gnuplot script plotting both price columns and the Lyapunov value of a
/// trajectory CSV.
pub fn trajectory_plot_script(csv_name: &str, k: usize) -> String {
    let pa = 2 + 2 * k;
    let pb = pa + 1;
    let lyap = pb + 1;
    format!(
        "set datafile separator \",\"\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 900,600\n\
         set output \"trajectory.png\"\n\
         set xlabel \"t\"\n\
         set multiplot layout 2,1\n\
         set ylabel \"price\"\n\
         plot \"{csv_name}\" using 1:{pa} with lines title \"P_A\", \
         \"{csv_name}\" using 1:{pb} with lines title \"P_B\"\n\
         set ylabel \"V\"\n\
         set logscale y\n\
         plot \"{csv_name}\" using 1:{lyap} with lines title \"lyapunov\"\n\
         unset multiplot\n"
    )
}

/// Gnuplot script for a sweep CSV: a price curve over lambda for
/// single-axis sweeps, a price surface over the risk grid otherwise.
pub fn sweep_plot_script(csv_name: &str, result: &SweepResult) -> String {
    if result.lambda_axis.len() > 1 {
        format!(
            "set datafile separator \",\"\n\
             set key autotitle columnhead\n\
             set terminal pngcairo size 900,600\n\
             set output \"sweep.png\"\n\
             set xlabel \"lambda\"\n\
             set ylabel \"price\"\n\
             plot \"{csv_name}\" using 1:4 with linespoints title \"P*\"\n"
        )
    } else {
        format!(
            "set datafile separator \",\"\n\
             set key autotitle columnhead\n\
             set terminal pngcairo size 900,600\n\
             set output \"sweep.png\"\n\
             set xlabel \"r_A\"\n\
             set ylabel \"r_B\"\n\
             set zlabel \"price\"\n\
             set dgrid3d {rows},{cols}\n\
             splot \"{csv_name}\" using 2:3:4 with lines title \"P*\"\n",
            rows = result.r_a_axis.len(),
            cols = result.r_b_axis.len(),
        )
    }
}

/// One-line human summary of a sweep: counts per status class.
pub fn sweep_status_counts(result: &SweepResult) -> (usize, usize, usize) {
    let mut ok = 0;
    let mut infeasible = 0;
    let mut failed = 0;
    for p in &result.points {
        match p.status {
            PointStatus::Ok => ok += 1,
            PointStatus::Infeasible => infeasible += 1,
            PointStatus::Failed => failed += 1,
        }
    }
    (ok, infeasible, failed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsConfig;
    use crate::functionals::{PenaltyConfig, PenaltyVariant};
    use crate::pricing::{AgentPair, AgentSpec, MarketSpec};
    use crate::simplex::{Belief, BeliefState, DeviationWeights};
    use crate::solver::{sweep_lambda, SweepProvenance, DEFAULT_EPSILON_SCHEDULE};
    use crate::utility::{ExponentialUtility, UtilityKind};

    fn fig1() -> (AgentPair, MarketSpec, BeliefState) {
        let market = MarketSpec::new(vec![1.0, 2.0]).unwrap();
        let seller = AgentSpec::seller(
            0.0,
            0.4,
            UtilityKind::Exponential(ExponentialUtility::new(2.0).unwrap()),
        )
        .unwrap();
        let buyer = AgentSpec::buyer(
            0.0,
            0.3,
            UtilityKind::Exponential(ExponentialUtility::new(1.0).unwrap()),
        )
        .unwrap();
        let anchors = BeliefState::new(
            Belief::new(vec![0.25, 0.75]).unwrap(),
            Belief::new(vec![0.75, 0.25]).unwrap(),
        )
        .unwrap();
        (AgentPair::new(seller, buyer).unwrap(), market, anchors)
    }

    fn short_run() -> TrajectoryRecord {
        let (agents, market, x0) = fig1();
        let penalty = PenaltyConfig::new(
            0.1,
            DeviationWeights::new(0.4).unwrap(),
            PenaltyVariant::LambdaDependent,
        )
        .unwrap();
        let cfg = DynamicsConfig::new(0.05, penalty)
            .unwrap()
            .with_max_periods(5);
        crate::dynamics::run_trajectory(&x0, &agents, &market, &cfg).unwrap()
    }

    #[test]
    fn full_precision_format_round_trips() {
        for &x in &[
            1.5843275453725676,
            -2.2250738585072014e-308,
            0.1 + 0.2,
            std::f64::consts::PI,
        ] {
            let parsed: f64 = fmt_csv(x).parse().unwrap();
            assert_eq!(parsed.to_bits(), x.to_bits(), "{x} mangled");
        }
    }

    #[test]
    fn trajectory_csv_matches_the_contract() {
        let csv = trajectory_csv(&short_run());
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,qa_1,qa_2,qb_1,qb_2,price_a,price_b,lyapunov,delta_lyapunov,boundary_violation,solver_iters"
        );
        // 5 steps plus the terminal row.
        assert_eq!(lines.count(), 6);
        assert!(!csv.contains('\r'));
        let terminal = csv.lines().last().unwrap();
        let fields: Vec<&str> = terminal.split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(fields[0], "5");
        assert_eq!(fields[9], "0");
        // Terminal row has no outgoing step.
        let lyap: f64 = fields[7].parse().unwrap();
        assert_eq!(lyap, 0.0);
    }

    #[test]
    fn sweep_csv_marks_statuses() {
        let (agents, market, x0) = fig1();
        let penalty = PenaltyConfig::new(
            0.1,
            DeviationWeights::new(0.4).unwrap(),
            PenaltyVariant::LambdaDependent,
        )
        .unwrap();
        let cfg = DynamicsConfig::new(0.05, penalty).unwrap();
        let result = sweep_lambda(
            &x0,
            &agents,
            &market,
            &cfg,
            &[0.0, 1.0],
            SweepProvenance::Dynamics,
            &DEFAULT_EPSILON_SCHEDULE,
        )
        .unwrap();
        let csv = sweep_csv(&result);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "lambda,r_a,r_b,price_star,objective,constraint_residual,status"
        );
        for line in lines {
            assert!(line.ends_with(",ok"), "{line}");
        }
        assert_eq!(sweep_status_counts(&result), (2, 0, 0));
    }

    #[test]
    fn plot_scripts_reference_the_csv_and_price_columns() {
        let traj_script = trajectory_plot_script("run.csv", 2);
        assert!(traj_script.contains("\"run.csv\" using 1:6"));
        assert!(traj_script.contains("\"run.csv\" using 1:7"));
        assert!(traj_script.contains("using 1:8"));

        let (agents, market, x0) = fig1();
        let penalty = PenaltyConfig::new(
            0.1,
            DeviationWeights::new(0.4).unwrap(),
            PenaltyVariant::LambdaDependent,
        )
        .unwrap();
        let cfg = DynamicsConfig::new(0.05, penalty).unwrap();
        let result = sweep_lambda(
            &x0,
            &agents,
            &market,
            &cfg,
            &[0.0, 1.0],
            SweepProvenance::Dynamics,
            &DEFAULT_EPSILON_SCHEDULE,
        )
        .unwrap();
        let script = sweep_plot_script("sweep.csv", &result);
        assert!(script.contains("using 1:4"));
    }
}
