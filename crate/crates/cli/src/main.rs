use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use gridclear_core::harness::{self, experiments, ExperimentSpec, SweepSpec, ValidateOptions};
use gridclear_core::market::{self, RunOutcome};

#[derive(Parser)]
#[command(name = "gridclear", version, about = "Distributed energy trading between microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Loopback,
    Tcp,
}

#[derive(Subcommand)]
enum Command {
    /// Run the market once; writes trace.csv and trades.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "loopback")]
        transport: Transport,
    },
    /// Vary one node's load and record the converged outcome per node.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Swept node, 0-based. Defaults to the config's sweep.node.
        #[arg(long)]
        node: Option<usize>,
        /// Loads, e.g. `1..11`, `0.5..3:0.5` or `1,2.5,4`.
        #[arg(long)]
        values: Option<String>,
    },
    /// Compare the distributed outcome against the centralized solver.
    OracleCompare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the property self-check and print a JSON report.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random local instances to check.
        #[arg(long, default_value_t = ValidateOptions::default().local_samples)]
        samples: usize,
    },
    /// Run a single node as its own process over TCP.
    Agent {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        id: usize,
        /// Rounds to run; defaults to the config's max_iters.
        #[arg(long)]
        rounds: Option<usize>,
    },
}

fn load(path: &Path) -> Result<ExperimentSpec> {
    let mut spec = harness::load_config(path).with_context(|| format!("loading {}", path.display()))?;
    spec.apply_env();
    Ok(spec)
}

fn summarize(out: &RunOutcome) {
    let last = out.last();
    println!(
        "converged: {} after {} rounds (gap {:.3e}, mismatch {:.3e} MWh)",
        out.converged,
        out.iterations(),
        last.relative_gap(),
        last.max_mismatch()
    );
    println!("primal cost: {:.6}  best dual: {:.6}", last.primal, last.best_dual);
    for (i, (p, s)) in out.prices.iter().zip(&out.solutions).enumerate() {
        println!(
            "node {i}: price {p:.6}  case {}  gen {:.6}  sell {:.6}  buy {:.6}",
            s.case.id(),
            s.e_gen,
            s.e_sell,
            s.total_bought()
        );
    }
}

fn cmd_run(config: &Path, transport: Transport) -> Result<bool> {
    let spec = load(config)?;
    let s = &spec.scenario;
    let out = match transport {
        Transport::Loopback => market::run(s)?,
        Transport::Tcp => market::run_tcp(s, spec.agents.as_deref(), spec.timeout)?,
    };
    summarize(&out);
    let files = experiments::write_run_outputs(&out, s.m(), &spec.out_dir)?;
    println!("wrote {} and {}", files.trace.display(), files.trades.display());
    Ok(out.converged)
}

fn cmd_sweep(config: &Path, node: Option<usize>, values: Option<&str>) -> Result<bool> {
    let spec = load(config)?;
    let from_config = spec.sweep.clone();
    let node = match (node, &from_config) {
        (Some(n), _) => n,
        (None, Some(sw)) => sw.node,
        (None, None) => bail!("no sweep node: pass --node or set sweep.node in the config"),
    };
    let values = match (values, from_config) {
        (Some(v), _) => harness::parse_values(v)?,
        (None, Some(sw)) => sw.values,
        (None, None) => harness::config::default_sweep_values(),
    };
    let rows = harness::run_sweep(&spec.scenario, &SweepSpec { node, values })?;
    let path = spec.out_dir.join("sweep.csv");
    experiments::write_sweep_file(&rows, &path)?;
    let stalled = rows.iter().filter(|r| !r.converged).count() / spec.scenario.m();
    if stalled > 0 {
        eprintln!("warning: {stalled} sweep point(s) did not converge; rows flagged converged=false");
    }
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(stalled == 0)
}

fn cmd_oracle(config: &Path) -> Result<bool> {
    let spec = load(config)?;
    let c = harness::oracle_compare(&spec.scenario)?;
    println!(
        "distributed {:.6}  oracle {:.6}  relative difference {:.3e}  (converged {} after {} rounds)",
        c.distributed_cost, c.oracle_cost, c.relative_diff, c.converged, c.iterations
    );
    let path = spec.out_dir.join("oracle_compare.csv");
    experiments::write_compare_file(&c, &path)?;
    println!("wrote {}", path.display());
    Ok(c.converged)
}

fn cmd_validate(seed: u64, samples: usize) -> Result<bool> {
    let report = harness::validate(ValidateOptions {
        seed,
        local_samples: samples,
        ..ValidateOptions::default()
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    for p in report.properties.iter().filter(|p| !p.passed) {
        eprintln!("FAILED {}: {}", p.name, p.detail.as_deref().unwrap_or(""));
    }
    Ok(report.passed)
}

fn cmd_agent(config: &Path, id: usize, rounds: Option<usize>) -> Result<bool> {
    let spec = load(config)?;
    let Some(addrs) = spec.agents.as_deref() else {
        bail!("agent mode needs an `agents` table with one address per node");
    };
    let rounds = rounds.unwrap_or(spec.scenario.max_iters);
    let r = market::run_agent(&spec.scenario, id, addrs, rounds, spec.timeout)?;
    // `{}` on f64 prints the shortest representation that round-trips.
    println!(
        "node {} rounds {} price {} case {} mismatch {}",
        r.node,
        r.rounds,
        r.price,
        r.last.solution.case.id(),
        r.last.mismatch
    );
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, transport } => cmd_run(&config, transport),
        Command::Sweep { config, node, values } => cmd_sweep(&config, node, values.as_deref()),
        Command::OracleCompare { config } => cmd_oracle(&config),
        Command::Validate { seed, samples } => cmd_validate(seed, samples),
        Command::Agent { config, id, rounds } => cmd_agent(&config, id, rounds),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        // finished but did not converge, or a property failed
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
