//! Command implementations behind the `dispatch` binary.
//!
//! Every command returns a process exit code and writes to caller-supplied
//! streams, so the binary is a thin wrapper and tests drive commands directly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dispatch_core::bus::write_event_csv;
use dispatch_core::consensus::{run_dispatch, write_trace_csv, ConsensusError, RunResult};
use dispatch_core::oracle::{solve_centralized, verify_kkt, DEFAULT_BALANCE_TOL};
use dispatch_core::scenario::{generate_scenario, load_scenario, GenerationRanges, LoadedScenario};
use dispatch_core::{Preset, SolverConfig};
use rayon::prelude::*;

pub mod report;

pub use report::{render_kkt, NodeOutput, SummaryReport};

pub const EXIT_OK: i32 = 0;
/// Bad input: unreadable or invalid scenario, bad flags, I/O failure.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
/// Oracle reported infeasibility or its solution failed the KKT check.
pub const EXIT_INFEASIBLE: i32 = 4;
/// `--check` found the distributed price too far from the oracle price.
pub const EXIT_CHECK_FAILED: i32 = 5;

/// Allowed |λ_distributed − λ*| for `--check`, $/kWh.
pub const CHECK_LAMBDA_TOL: f64 = 1e-2;
/// KKT stationarity tolerance for oracle output, $/kWh.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "dispatch", version, about = "Consensus-based distributed economic dispatch simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the distributed protocol over the message bus.
    Run(RunArgs),
    /// Solve the same problem centrally and certify it.
    Oracle(OracleArgs),
    /// Repeat the run over a list of gains or drop probabilities.
    Sweep(SweepArgs),
    /// Write a random scenario file.
    Generate(GenerateArgs),
}

/// Solver settings that override the scenario file.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverFlags {
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tol_lambda: Option<f64>,
    #[arg(long)]
    pub tol_power: Option<f64>,
    #[arg(long)]
    pub drop_prob: Option<f64>,
    #[arg(long)]
    pub delay_rounds: Option<u32>,
    /// Seed of the bus drop/delay stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// ring, complete, star or line; replaces the scenario's graph.
    #[arg(long)]
    pub topology: Option<Preset>,
}

impl SolverFlags {
    fn apply(&self, mut loaded: LoadedScenario) -> Result<LoadedScenario, String> {
        let cfg = &mut loaded.solver;
        if let Some(v) = self.max_iters {
            if v == 0 {
                return Err("--max-iters must be at least 1".into());
            }
            cfg.max_iters = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.tol_lambda {
            cfg.tol_lambda = v;
        }
        if let Some(v) = self.tol_power {
            cfg.tol_power = v;
        }
        if let Some(v) = self.drop_prob {
            cfg.delivery.drop_probability = v;
        }
        if let Some(v) = self.delay_rounds {
            cfg.delivery.delay_rounds = v;
        }
        if let Some(v) = self.seed {
            cfg.delivery.rng_seed = v;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        if let Some(p) = self.topology {
            loaded = loaded.with_topology(p);
        }
        Ok(loaded)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Per-node, per-iteration CSV trace.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Machine-readable JSON summary.
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
    /// Bus publish/deliver/drop log as CSV.
    #[arg(long)]
    pub events_out: Option<PathBuf>,
    /// Also solve centrally and compare prices.
    #[arg(long)]
    pub check: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
    /// Also run the distributed protocol and compare prices.
    #[arg(long)]
    pub check: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("sweep_list").required(true).args(["epsilons", "drop_probs"])))]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Comma-separated gains.
    #[arg(long = "epsilon", value_delimiter = ',', num_args = 1..)]
    pub epsilons: Vec<f64>,
    /// Comma-separated drop probabilities.
    #[arg(long = "drop-prob", value_delimiter = ',', num_args = 1..)]
    pub drop_probs: Vec<f64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub topology: Option<Preset>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub generators: usize,
    #[arg(long, default_value_t = 10)]
    pub consumers: usize,
    /// Scenario destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Communication preset written into the file.
    #[arg(long)]
    pub topology: Option<Preset>,
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match &cli.command {
        Command::Run(a) => cmd_run(a, out, err),
        Command::Oracle(a) => cmd_oracle(a, out, err),
        Command::Sweep(a) => cmd_sweep(a, out, err),
        Command::Generate(a) => cmd_generate(a, out, err),
    }
}

fn load(path: &Path, flags: &SolverFlags, err: &mut dyn Write) -> Option<LoadedScenario> {
    let loaded = match load_scenario(path) {
        Ok(l) => l,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return None;
        }
    };
    match flags.apply(loaded) {
        Ok(l) => Some(l),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            None
        }
    }
}

fn write_file(path: &Path, contents: &[u8], err: &mut dyn Write) -> bool {
    match fs::write(path, contents) {
        Ok(()) => true,
        Err(e) => {
            let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
            false
        }
    }
}

/// Exit code for a finished distributed run.
pub fn run_exit_code(outcome: &Result<RunResult, ConsensusError>) -> i32 {
    match outcome {
        Ok(r) if r.converged => EXIT_OK,
        Ok(_) => EXIT_NOT_CONVERGED,
        Err(ConsensusError::Diverged { .. }) => EXIT_DIVERGED,
        Err(_) => EXIT_USAGE,
    }
}

fn check_against_oracle(loaded: &LoadedScenario, run: &RunResult, out: &mut dyn Write) -> Option<bool> {
    let sol = solve_centralized(&loaded.scenario, DEFAULT_BALANCE_TOL).ok()?;
    let dl = (run.solution.lambda_star - sol.lambda_star).abs();
    let dp = run
        .solution
        .dispatch
        .gen_power
        .iter()
        .chain(&run.solution.dispatch.load_power)
        .zip(sol.dispatch.gen_power.iter().chain(&sol.dispatch.load_power))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ok = dl <= CHECK_LAMBDA_TOL;
    let _ = writeln!(
        out,
        "Check: distributed lambda {:.4} vs oracle {:.4} (|diff| {dl:.2e}, limit {CHECK_LAMBDA_TOL:.0e}); max node power diff {dp:.3} kW: {}",
        run.solution.lambda_star,
        sol.lambda_star,
        if ok { "OK" } else { "FAIL" }
    );
    Some(ok)
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(mut loaded) = load(&args.scenario, &args.solver, err) else {
        return EXIT_USAGE;
    };
    loaded.solver.record_bus_events = args.events_out.is_some();
    let outcome = run_dispatch(&loaded.scenario, &loaded.graph, &loaded.solver);
    let code = run_exit_code(&outcome);
    let run = match outcome {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return code;
        }
    };

    if let Some(path) = &args.trace_out {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &loaded.scenario, &run.trace).expect("in-memory write");
        if !write_file(path, &buf, err) {
            return EXIT_USAGE;
        }
    }
    if let Some(path) = &args.events_out {
        let mut buf = Vec::new();
        write_event_csv(&mut buf, &run.bus_events).expect("in-memory write");
        if !write_file(path, &buf, err) {
            return EXIT_USAGE;
        }
    }
    let summary = SummaryReport::from_run(&loaded.scenario, &run);
    let _ = write!(out, "{}", summary.render_text());
    if let Some(path) = &args.summary_out {
        if !write_file(path, summary.to_json().as_bytes(), err) {
            return EXIT_USAGE;
        }
    }
    if !run.converged {
        let _ = writeln!(
            err,
            "warning: no consensus after {} iterations (lambda spread {:.3e})",
            run.iterations,
            run.final_row().lambda_spread()
        );
    }
    if args.check && code == EXIT_OK {
        match check_against_oracle(&loaded, &run, out) {
            Some(true) => {}
            Some(false) => return EXIT_CHECK_FAILED,
            None => return EXIT_INFEASIBLE,
        }
    }
    code
}

pub fn cmd_oracle(args: &OracleArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(loaded) = load(&args.scenario, &args.solver, err) else {
        return EXIT_USAGE;
    };
    let sol = match solve_centralized(&loaded.scenario, DEFAULT_BALANCE_TOL) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INFEASIBLE;
        }
    };
    let summary = SummaryReport::from_oracle(&loaded.scenario, &sol);
    let _ = write!(out, "{}", summary.render_text());
    let _ = writeln!(out, "Lambda* {:.6} $/kWh", sol.lambda_star);
    for w in &sol.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let kkt = verify_kkt(&loaded.scenario, &sol, KKT_TOL).expect("oracle dispatch respects bounds");
    let _ = write!(out, "{}", render_kkt(&kkt));
    if let Some(path) = &args.summary_out {
        if !write_file(path, summary.to_json().as_bytes(), err) {
            return EXIT_USAGE;
        }
    }
    if !(sol.feasible && kkt.is_clean()) {
        return EXIT_INFEASIBLE;
    }
    if args.check {
        let outcome = run_dispatch(&loaded.scenario, &loaded.graph, &loaded.solver);
        let code = run_exit_code(&outcome);
        match outcome {
            Ok(run) if run.converged => match check_against_oracle(&loaded, &run, out) {
                Some(true) => {}
                _ => return EXIT_CHECK_FAILED,
            },
            Ok(run) => {
                let _ = writeln!(err, "error: distributed run did not converge in {} iterations", run.iterations);
                return code;
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return code;
            }
        }
    }
    EXIT_OK
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// NaN when the run diverged.
    pub lambda_spread: f64,
    pub outcome: &'static str,
}

pub const SWEEP_CSV_HEADER: &str = "parameter,value,converged,iterations,lambda_spread,outcome";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.parameter, self.value, self.converged, self.iterations, self.lambda_spread, self.outcome
        )
    }
}

/// One run per value; runs are independent and execute in parallel, rows keep input order.
pub fn sweep(loaded: &LoadedScenario, parameter: &'static str, values: &[f64]) -> Vec<SweepRow> {
    values
        .par_iter()
        .map(|&value| {
            let mut cfg: SolverConfig = loaded.solver;
            match parameter {
                "epsilon" => cfg.epsilon = value,
                _ => cfg.delivery.drop_probability = value,
            }
            let outcome = run_dispatch(&loaded.scenario, &loaded.graph, &cfg);
            match outcome {
                Ok(r) => SweepRow {
                    parameter,
                    value,
                    converged: r.converged,
                    iterations: r.iterations,
                    lambda_spread: r.final_row().lambda_spread(),
                    outcome: if r.converged { "converged" } else { "max_iters" },
                },
                Err(ConsensusError::Diverged { iteration, .. }) => SweepRow {
                    parameter,
                    value,
                    converged: false,
                    iterations: iteration,
                    lambda_spread: f64::NAN,
                    outcome: "diverged",
                },
                Err(_) => SweepRow {
                    parameter,
                    value,
                    converged: false,
                    iterations: 0,
                    lambda_spread: f64::NAN,
                    outcome: "invalid",
                },
            }
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let flags = SolverFlags {
        max_iters: args.max_iters,
        seed: args.seed,
        topology: args.topology,
        ..SolverFlags::default()
    };
    let Some(loaded) = load(&args.scenario, &flags, err) else {
        return EXIT_USAGE;
    };
    let (parameter, values) = if !args.epsilons.is_empty() {
        ("epsilon", &args.epsilons)
    } else {
        ("drop_prob", &args.drop_probs)
    };
    let rows = sweep(&loaded, parameter, values);
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    match &args.out {
        Some(path) => {
            if !write_file(path, csv.as_bytes(), err) {
                return EXIT_USAGE;
            }
        }
        None => {
            let _ = out.write_all(csv.as_bytes());
        }
    }
    EXIT_OK
}

pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut file = match generate_scenario(
        args.seed,
        args.generators,
        args.consumers,
        &GenerationRanges::default(),
    ) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(p) = args.topology {
        file.graph = dispatch_core::scenario::GraphSpec::preset(p);
    }
    let text = file.to_json();
    match &args.out {
        Some(path) => {
            if !write_file(path, text.as_bytes(), err) {
                return EXIT_USAGE;
            }
        }
        None => {
            let _ = out.write_all(text.as_bytes());
        }
    }
    EXIT_OK
}
