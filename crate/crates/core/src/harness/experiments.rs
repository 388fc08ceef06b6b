//! Experiment drivers: single runs, load sweeps and oracle comparison.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use serde::Serialize;

use crate::cost_models::CostFunction;
use crate::harness::config::SweepSpec;
use crate::harness::HarnessError;
use crate::market::{self, RunOutcome, Scenario};
use crate::oracle;

pub struct RunFiles {
    pub trace: PathBuf,
    pub trades: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| HarnessError::io(path, e))?,
    ))
}

/// Writes `trace.csv` and `trades.csv` into `dir`.
pub fn write_run_outputs(out: &RunOutcome, m: usize, dir: &Path) -> Result<RunFiles, HarnessError> {
    let files = RunFiles {
        trace: dir.join("trace.csv"),
        trades: dir.join("trades.csv"),
    };
    market::write_trace_csv(&out.trace, m, create(&files.trace)?)?;
    market::write_trades_csv(&out.trades, create(&files.trades)?)?;
    Ok(files)
}

/// One node at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Load of the swept node at this point.
    pub sweep_demand: f64,
    pub node: usize,
    /// Net expenditure at the final prices.
    pub local_cost: f64,
    /// Cost of covering the own load alone, `C_i(E_c) + γ(0)`.
    pub disconnected_cost: f64,
    pub e_gen: f64,
    pub e_sell: f64,
    pub e_buy_total: f64,
    pub lambda_star: f64,
    pub case_id: u8,
    pub income: f64,
    pub converged: bool,
}

impl SweepRow {
    pub fn benefit(&self) -> f64 {
        self.disconnected_cost - self.local_cost
    }
}

fn sweep_point(base: &Scenario, node: usize, value: f64) -> Result<Vec<SweepRow>, HarnessError> {
    let mut s = base.clone();
    s.demands[node] = value;
    let out = market::run(&s)?;
    let idle = s.transfer_cost.value(0.0)?;
    (0..s.m())
        .map(|i| {
            let sol = &out.solutions[i];
            Ok(SweepRow {
                sweep_demand: value,
                node: i,
                local_cost: out.net_expenditures[i],
                disconnected_cost: s.gen_costs[i].value(s.demands[i])? + idle,
                e_gen: sol.e_gen,
                e_sell: sol.e_sell,
                e_buy_total: sol.total_bought(),
                lambda_star: out.prices[i],
                case_id: sol.case.id(),
                income: out.prices[i] * sol.e_sell,
                converged: out.converged,
            })
        })
        .collect()
}

/// Runs the market once per sweep value, varying one node's load. Points
/// run in parallel; rows come back in sweep order, nodes ascending.
pub fn run_sweep(base: &Scenario, sweep: &SweepSpec) -> Result<Vec<SweepRow>, HarnessError> {
    if sweep.node >= base.m() {
        return Err(HarnessError::Invalid(format!("sweep node {} out of range", sweep.node)));
    }
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut results: Vec<Option<Result<Vec<SweepRow>, HarnessError>>> = Vec::new();
    results.resize_with(sweep.values.len(), || None);
    for chunk in sweep.values.chunks(workers).enumerate() {
        let (c, values) = chunk;
        let done: Vec<_> = thread::scope(|scope| {
            let handles: Vec<_> = values
                .iter()
                .map(|&v| scope.spawn(move || sweep_point(base, sweep.node, v)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Invalid("sweep worker panicked".into()))))
                .collect()
        });
        for (k, r) in done.into_iter().enumerate() {
            results[c * workers + k] = Some(r);
        }
    }
    let mut rows = Vec::new();
    for r in results.into_iter().flatten() {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_sweep_file(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    write_sweep_csv(rows, create(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub quantity: &'static str,
    pub from: Option<usize>,
    pub to: Option<usize>,
    pub distributed: f64,
    pub oracle: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone)]
pub struct OracleComparison {
    pub rows: Vec<CompareRow>,
    pub distributed_cost: f64,
    pub oracle_cost: f64,
    pub relative_diff: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Runs the market and the centralized oracle on the same scenario.
pub fn oracle_compare(s: &Scenario) -> Result<OracleComparison, HarnessError> {
    let out = market::run(s)?;
    let global = oracle::solve_global_numeric(s)?;
    let m = s.m();
    let distributed_cost = out.last().primal;
    let mut rows = vec![row("total_cost", None, None, distributed_cost, global.total_cost)];
    for i in 0..m {
        let sold: f64 = out.trades[i].iter().sum();
        let bought: f64 = out.trades.iter().map(|r| r[i]).sum();
        let g = (s.demands[i] + sold - bought).max(0.0);
        rows.push(row("generation", Some(i), None, g, global.generations[i]));
    }
    for (i, j) in s.topology.edges() {
        rows.push(row("trade", Some(i), Some(j), out.trades[i][j], global.trades[i][j]));
    }
    Ok(OracleComparison {
        rows,
        distributed_cost,
        oracle_cost: global.total_cost,
        relative_diff: (distributed_cost - global.total_cost) / global.total_cost.abs(),
        converged: out.converged,
        iterations: out.iterations(),
    })
}

fn row(quantity: &'static str, from: Option<usize>, to: Option<usize>, d: f64, o: f64) -> CompareRow {
    CompareRow {
        quantity,
        from,
        to,
        distributed: d,
        oracle: o,
        abs_diff: (d - o).abs(),
    }
}

pub fn write_compare_file(c: &OracleComparison, path: &Path) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(create(path)?);
    for r in &c.rows {
        out.serialize(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
