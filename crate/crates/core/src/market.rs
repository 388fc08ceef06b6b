//! Distributed market clearing by dual subgradient ascent.
//!
//! Every round each microgrid announces its selling price, solves its local
//! problem against the prices it heard, sends bids to its sellers, and then
//! raises or lowers its own price by the gap between the energy requested
//! from it and the energy it offered:
//!
//! ```text
//!   λ_i[k+1] = max(0, λ_i[k] + α[k] (Σ_j E_{i,j}[k] - Ês_i[k]))
//! ```
//!
//! Agents only see their own data, their neighbours' prices and the bids
//! addressed to them; all of that travels through [`crate::transport`]. A
//! [`Monitor`] outside the protocol collects per-round reports to build the
//! trace (dual value, recovered primal cost, gap) and decide when to stop.

use std::io::Write;
use std::net::{SocketAddr, TcpListener};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_models::{CostError, CostFunction, CostModel};
use crate::local_solver::{
    self, Case, LocalProblem, LocalSolution, SellerPrice, SolverError, SolverOptions,
};
use crate::topology::{NodeId, Topology, TopologyError};
use crate::transport::{
    loopback_network, Endpoint, Exchanger, Message, MessageKind, TcpEndpoint, TransportError,
};
use crate::Fault;

pub const DEFAULT_TOL_GAP: f64 = 1e-4;
pub const DEFAULT_TOL_MISMATCH: f64 = 1e-3;
pub const DEFAULT_MAX_ITERS: usize = 20_000;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("local solve failed at node {node}: {source}")]
    Solver {
        node: NodeId,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("agent thread for node {0} panicked")]
    AgentPanicked(NodeId),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Diminishing step `α[k] = alpha0 / (1 + k / kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSchedule {
    pub alpha0: f64,
    pub kappa: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            alpha0: 2.0,
            kappa: 1000.0,
        }
    }
}

impl StepSchedule {
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha0 / (1.0 + k as f64 / self.kappa)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite() && self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(MarketError::InvalidScenario(format!(
                "step needs alpha0 > 0 and kappa > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub demands: Vec<f64>,
    pub gen_costs: Vec<CostModel>,
    pub transfer_cost: CostModel,
    pub step: StepSchedule,
    pub tol_gap: f64,
    pub tol_mismatch: f64,
    pub max_iters: usize,
    pub seed: u64,
    #[doc(hidden)]
    pub fault: Fault,
}

impl Scenario {
    /// Scenario with U12 generation at every node, `γ(x) = x + x³` and the
    /// default step schedule and tolerances.
    pub fn new(topology: Topology, demands: Vec<f64>) -> Result<Self, MarketError> {
        let m = topology.m();
        let s = Scenario {
            topology,
            demands,
            gen_costs: vec![CostModel::u12(); m],
            transfer_cost: CostModel::unit_cubic(),
            step: StepSchedule::default(),
            tol_gap: DEFAULT_TOL_GAP,
            tol_mismatch: DEFAULT_TOL_MISMATCH,
            max_iters: DEFAULT_MAX_ITERS,
            seed: 0,
            fault: Fault::None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.topology.m()
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let m = self.m();
        if self.demands.len() != m {
            return Err(MarketError::InvalidScenario(format!(
                "demands has {} entries for {m} microgrids",
                self.demands.len()
            )));
        }
        if self.gen_costs.len() != m {
            return Err(MarketError::InvalidScenario(format!(
                "gen_costs has {} entries for {m} microgrids",
                self.gen_costs.len()
            )));
        }
        if let Some((i, d)) = self
            .demands
            .iter()
            .enumerate()
            .find(|(_, d)| !(d.is_finite() && **d >= 0.0))
        {
            return Err(MarketError::InvalidScenario(format!(
                "demand of node {i} must be finite and >= 0, got {d}"
            )));
        }
        for c in &self.gen_costs {
            c.validate()?;
        }
        self.transfer_cost.validate()?;
        self.step.validate()?;
        if !(self.tol_gap >= 0.0 && self.tol_mismatch >= 0.0) {
            return Err(MarketError::InvalidScenario("tolerances must be >= 0".into()));
        }
        if self.max_iters == 0 {
            return Err(MarketError::InvalidScenario("max_iters must be >= 1".into()));
        }
        if m > u16::MAX as usize {
            return Err(MarketError::InvalidScenario(format!("{m} nodes exceed the wire id range")));
        }
        Ok(())
    }

    /// Node `i`'s subproblem at the given price vector.
    pub fn local_problem(&self, i: NodeId, prices: &[f64]) -> Result<LocalProblem<'_>, MarketError> {
        Ok(LocalProblem {
            node: i,
            demand: self.demands[i],
            gen_cost: &self.gen_costs[i],
            transfer_cost: &self.transfer_cost,
            sellers: self
                .topology
                .in_sellers(i)?
                .into_iter()
                .map(|j| SellerPrice {
                    node: j,
                    price: prices[j],
                })
                .collect(),
            own_price: prices[i],
        })
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            fault: self.fault,
            ..SolverOptions::default()
        }
    }
}

/// Standalone marginal cost `C'_i(E_i^(c))` at every node.
pub fn init_prices(s: &Scenario) -> Result<Vec<f64>, MarketError> {
    s.gen_costs
        .iter()
        .zip(&s.demands)
        .map(|(c, &d)| Ok(c.marginal(d)?))
        .collect()
}

/// Closed-form local optimum of every node at `prices`.
pub fn local_solutions(prices: &[f64], s: &Scenario) -> Result<Vec<LocalSolution>, MarketError> {
    check_len("prices", prices.len(), s.m())?;
    (0..s.m())
        .map(|i| {
            let p = s.local_problem(i, prices)?;
            local_solver::solve_local_with(&p, s.solver_options())
                .map_err(|source| MarketError::Solver { node: i, source })
        })
        .collect()
}

/// Requested-minus-offered energy at each node.
pub fn subgradient(solutions: &[LocalSolution], t: &Topology) -> Result<Vec<f64>, MarketError> {
    check_len("solutions", solutions.len(), t.m())?;
    let mut g: Vec<f64> = solutions.iter().map(|s| -s.e_sell).collect();
    for s in solutions {
        for b in &s.e_buy {
            if b.seller >= t.m() || !t.connected(b.seller, s.node) {
                return Err(MarketError::InvalidScenario(format!(
                    "node {} bids on missing link from {}",
                    s.node, b.seller
                )));
            }
            g[b.seller] += b.energy;
        }
    }
    Ok(g)
}

/// Dual function: the sum of local net expenditures at their optima.
pub fn dual_value(prices: &[f64], s: &Scenario) -> Result<f64, MarketError> {
    let sols = local_solutions(prices, s)?;
    let mut total = 0.0;
    for (i, sol) in sols.iter().enumerate() {
        let p = s.local_problem(i, prices)?;
        total += local_solver::net_expenditure(&p, sol)
            .map_err(|source| MarketError::Solver { node: i, source })?;
    }
    Ok(total)
}

/// Turns a bid matrix (`bids[seller][buyer]`) into a feasible dispatch by
/// letting every node generate what its balance requires, and prices it.
pub fn feasibilize_and_cost(
    bids: &[Vec<f64>],
    s: &Scenario,
) -> Result<(Vec<Vec<f64>>, f64), MarketError> {
    let m = s.m();
    check_len("bid rows", bids.len(), m)?;
    let mut cost = 0.0;
    for (i, row) in bids.iter().enumerate() {
        check_len("bid columns", row.len(), m)?;
        for (j, &e) in row.iter().enumerate() {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(MarketError::InvalidScenario(format!("bid [{i}][{j}] = {e}")));
            }
            if e > 0.0 && !s.topology.connected(i, j) {
                return Err(MarketError::InvalidScenario(format!(
                    "bid [{i}][{j}] = {e} on a missing link"
                )));
            }
            if e > 0.0 {
                cost += s.transfer_cost.value(e)?;
            }
        }
    }
    for i in 0..m {
        let sold: f64 = bids[i].iter().sum();
        let bought: f64 = bids.iter().map(|r| r[i]).sum();
        let g = (s.demands[i] + sold - bought).max(0.0);
        cost += s.gen_costs[i].value(g)?;
    }
    Ok((bids.to_vec(), cost))
}

fn check_len(what: &str, got: usize, m: usize) -> Result<(), MarketError> {
    if got != m {
        return Err(MarketError::InvalidScenario(format!(
            "{what}: {got} entries for {m} microgrids"
        )));
    }
    Ok(())
}

/// One microgrid. Holds only its own costs, demand, links and price.
#[derive(Debug, Clone)]
pub struct Agent {
    id: NodeId,
    demand: f64,
    gen_cost: CostModel,
    transfer_cost: CostModel,
    sellers: Vec<NodeId>,
    buyers: Vec<NodeId>,
    step: StepSchedule,
    opts: SolverOptions,
    price: f64,
    solution: Option<LocalSolution>,
    net_expenditure: f64,
    mismatch: f64,
}

/// What an agent reports to the monitor after a round.
#[derive(Debug, Clone)]
pub struct AgentReport {
    pub node: NodeId,
    pub price: f64,
    pub solution: LocalSolution,
    /// Bids received, `(buyer, MWh)`, ordered by buyer.
    pub received: Vec<(NodeId, f64)>,
    pub net_expenditure: f64,
    pub mismatch: f64,
}

impl Agent {
    pub fn new(s: &Scenario, id: NodeId, price: f64) -> Result<Self, MarketError> {
        Ok(Agent {
            id,
            demand: s.demands[id],
            gen_cost: s.gen_costs[id],
            transfer_cost: s.transfer_cost,
            sellers: s.topology.in_sellers(id)?,
            buyers: s.topology.out_buyers(id)?,
            step: s.step,
            opts: s.solver_options(),
            price,
            solution: None,
            net_expenditure: 0.0,
            mismatch: 0.0,
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn price(&self) -> f64 {
        self.price
    }

    pub fn price_messages(&self, round: u32) -> Vec<Message> {
        self.buyers
            .iter()
            .map(|&j| Message::price(round, self.id, j, self.price))
            .collect()
    }

    /// Solves the local problem against the received prices and returns one
    /// bid per seller.
    pub fn respond(&mut self, round: u32, prices: &[Message]) -> Result<Vec<Message>, MarketError> {
        let heard: Vec<NodeId> = prices.iter().map(|m| m.from as NodeId).collect();
        if heard != self.sellers {
            return Err(MarketError::Transport(TransportError::Protocol {
                node: self.id,
                round,
                detail: format!("expected prices from {:?}, got {:?}", self.sellers, heard),
            }));
        }
        let p = LocalProblem {
            node: self.id,
            demand: self.demand,
            gen_cost: &self.gen_cost,
            transfer_cost: &self.transfer_cost,
            sellers: prices
                .iter()
                .map(|m| SellerPrice {
                    node: m.from as NodeId,
                    price: m.value,
                })
                .collect(),
            own_price: self.price,
        };
        let solver_err = |source| MarketError::Solver {
            node: self.id,
            source,
        };
        let sol = local_solver::solve_local_with(&p, self.opts).map_err(solver_err)?;
        self.net_expenditure = local_solver::net_expenditure(&p, &sol).map_err(solver_err)?;
        let bids = self
            .sellers
            .iter()
            .map(|&j| Message::bid(round, self.id, j, sol.bought_from(j).max(0.0)))
            .collect();
        self.solution = Some(sol);
        Ok(bids)
    }

    /// Absorbs the bids addressed to this node.
    pub fn settle(&mut self, bids: &[Message]) -> Result<AgentReport, MarketError> {
        let sol = self.solution.clone().ok_or_else(|| {
            MarketError::InvalidScenario(format!("node {} settled before solving", self.id))
        })?;
        let received: Vec<(NodeId, f64)> = bids.iter().map(|m| (m.from as NodeId, m.value)).collect();
        let requested: f64 = received.iter().map(|(_, e)| e).sum();
        self.mismatch = requested - sol.e_sell;
        Ok(AgentReport {
            node: self.id,
            price: self.price,
            solution: sol,
            received,
            net_expenditure: self.net_expenditure,
            mismatch: self.mismatch,
        })
    }

    /// Price step after round `k`.
    pub fn update_price(&mut self, k: usize) {
        let step = self.step.alpha(k) * self.mismatch;
        let next = match self.opts.fault {
            Fault::PriceUpdateSign => self.price - step,
            _ => self.price + step,
        };
        self.price = next.max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub prices: Vec<f64>,
    /// `bids[seller][buyer]`
    pub bids: Vec<Vec<f64>>,
    pub subgradient: Vec<f64>,
    pub dual: f64,
    pub best_dual: f64,
    pub primal: f64,
    pub gap: f64,
    pub cases: Vec<Case>,
}

impl TraceRow {
    pub fn relative_gap(&self) -> f64 {
        self.gap / self.primal.abs().max(f64::MIN_POSITIVE)
    }

    pub fn max_mismatch(&self) -> f64 {
        self.subgradient.iter().fold(0.0, |a, g| a.max(g.abs()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: IterationTrace,
    pub converged: bool,
    /// Prices of the last recorded round.
    pub prices: Vec<f64>,
    pub solutions: Vec<LocalSolution>,
    pub net_expenditures: Vec<f64>,
    /// `trades[seller][buyer]` of the last round.
    pub trades: Vec<Vec<f64>>,
}

impl RunOutcome {
    pub fn last(&self) -> &TraceRow {
        self.trace.rows.last().expect("a run records at least one round")
    }

    pub fn iterations(&self) -> usize {
        self.trace.rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Continue,
    Stop { converged: bool },
}

/// Observer outside the protocol that assembles the trace.
pub struct Monitor<'s> {
    s: &'s Scenario,
    rows: Vec<TraceRow>,
    best_dual: f64,
    last: Vec<AgentReport>,
    converged: bool,
}

impl<'s> Monitor<'s> {
    pub fn new(s: &'s Scenario) -> Self {
        Monitor {
            s,
            rows: Vec::new(),
            best_dual: f64::NEG_INFINITY,
            last: Vec::new(),
            converged: false,
        }
    }

    /// Records round `k` from one report per node (any order).
    pub fn observe(&mut self, k: usize, mut reports: Vec<AgentReport>) -> Result<Verdict, MarketError> {
        let m = self.s.m();
        reports.sort_by_key(|r| r.node);
        if reports.len() != m || reports.iter().enumerate().any(|(i, r)| r.node != i) {
            return Err(MarketError::InvalidScenario(format!(
                "round {k}: expected one report per node"
            )));
        }
        let mut bids = vec![vec![0.0; m]; m];
        for r in &reports {
            for &(buyer, e) in &r.received {
                bids[r.node][buyer] = e;
            }
        }
        let (_, primal) = feasibilize_and_cost(&bids, self.s)?;
        let dual: f64 = reports.iter().map(|r| r.net_expenditure).sum();
        self.best_dual = self.best_dual.max(dual);
        let row = TraceRow {
            k,
            prices: reports.iter().map(|r| r.price).collect(),
            bids,
            subgradient: reports.iter().map(|r| r.mismatch).collect(),
            dual,
            best_dual: self.best_dual,
            primal,
            gap: primal - self.best_dual,
            cases: reports.iter().map(|r| r.solution.case).collect(),
        };
        let converged =
            row.relative_gap() <= self.s.tol_gap && row.max_mismatch() <= self.s.tol_mismatch;
        self.rows.push(row);
        self.last = reports;
        self.converged = converged;
        Ok(if converged {
            Verdict::Stop { converged: true }
        } else if k + 1 >= self.s.max_iters {
            Verdict::Stop { converged: false }
        } else {
            Verdict::Continue
        })
    }

    pub fn finish(self) -> RunOutcome {
        let trades = self.rows.last().map(|r| r.bids.clone()).unwrap_or_default();
        RunOutcome {
            converged: self.converged,
            prices: self.last.iter().map(|r| r.price).collect(),
            solutions: self.last.iter().map(|r| r.solution.clone()).collect(),
            net_expenditures: self.last.iter().map(|r| r.net_expenditure).collect(),
            trades,
            trace: IterationTrace { rows: self.rows },
        }
    }
}

fn make_agents(s: &Scenario) -> Result<Vec<Agent>, MarketError> {
    s.validate()?;
    let prices = init_prices(s)?;
    (0..s.m()).map(|i| Agent::new(s, i, prices[i])).collect()
}

/// Runs the market with all agents in this thread over loopback channels,
/// advancing them in lockstep. Bit-reproducible.
pub fn run(s: &Scenario) -> Result<RunOutcome, MarketError> {
    run_loopback(s, s.max_iters)
}

/// Like [`run`] but stops after at most `rounds` rounds.
pub fn run_loopback(s: &Scenario, rounds: usize) -> Result<RunOutcome, MarketError> {
    let mut agents = make_agents(s)?;
    let mut ex: Vec<_> = loopback_network(s.m())
        .into_iter()
        .enumerate()
        .map(|(i, e)| Exchanger::new(i, e, &s.topology, crate::transport::DEFAULT_TIMEOUT))
        .collect();
    let mut monitor = Monitor::new(s);
    for k in 0..rounds.min(s.max_iters) {
        let round = k as u32;
        for (a, x) in agents.iter().zip(ex.iter_mut()) {
            x.send(&a.price_messages(round))?;
        }
        for (a, x) in agents.iter_mut().zip(ex.iter_mut()) {
            let prices = x.collect(round, MessageKind::Price)?;
            let bids = a.respond(round, &prices)?;
            x.send(&bids)?;
        }
        let mut reports = Vec::with_capacity(agents.len());
        for (a, x) in agents.iter_mut().zip(ex.iter_mut()) {
            let bids = x.collect(round, MessageKind::Bid)?;
            reports.push(a.settle(&bids)?);
        }
        if let Verdict::Stop { .. } = monitor.observe(k, reports)? {
            break;
        }
        for a in &mut agents {
            a.update_price(k);
        }
    }
    Ok(monitor.finish())
}

/// One full round for a single agent over any endpoint.
pub fn agent_round<E: Endpoint>(
    agent: &mut Agent,
    x: &mut Exchanger<E>,
    round: u32,
) -> Result<AgentReport, MarketError> {
    let prices = x.exchange_phase(round, MessageKind::Price, &agent.price_messages(round))?;
    let bids = agent.respond(round, &prices)?;
    let received = x.exchange_phase(round, MessageKind::Bid, &bids)?;
    agent.settle(&received)
}

/// Runs the market with one thread per agent, talking over TCP sockets
/// bound to `addrs` (or ephemeral localhost ports when `None`).
pub fn run_tcp(
    s: &Scenario,
    addrs: Option<&[SocketAddr]>,
    timeout: Duration,
) -> Result<RunOutcome, MarketError> {
    let agents = make_agents(s)?;
    let m = s.m();
    let listeners: Vec<TcpListener> = match addrs {
        Some(a) => {
            check_len("agent addresses", a.len(), m)?;
            a.iter().map(TcpListener::bind).collect::<Result<_, _>>().map_err(TransportError::Io)?
        }
        None => (0..m)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<Result<_, _>>()
            .map_err(TransportError::Io)?,
    };
    let bound: Vec<SocketAddr> = listeners
        .iter()
        .map(|l| l.local_addr())
        .collect::<Result<_, _>>()
        .map_err(TransportError::Io)?;

    let (report_tx, report_rx) = mpsc::channel::<(usize, Result<AgentReport, MarketError>)>();
    let mut verdict_txs = Vec::with_capacity(m);
    let mut handles = Vec::with_capacity(m);
    for (mut agent, listener) in agents.into_iter().zip(listeners) {
        let (vtx, vrx) = mpsc::channel::<Verdict>();
        verdict_txs.push(vtx);
        let report_tx = report_tx.clone();
        let topology = s.topology.clone();
        let bound = bound.clone();
        handles.push(thread::spawn(move || {
            let id = agent.id();
            let endpoint = match TcpEndpoint::connect(id, listener, &bound, &topology, timeout) {
                Ok(e) => e,
                Err(e) => {
                    let _ = report_tx.send((0, Err(e.into())));
                    return;
                }
            };
            let mut x = Exchanger::new(id, endpoint, &topology, timeout);
            for k in 0.. {
                let r = agent_round(&mut agent, &mut x, k as u32);
                let failed = r.is_err();
                if report_tx.send((k, r)).is_err() || failed {
                    return;
                }
                match vrx.recv() {
                    Ok(Verdict::Continue) => agent.update_price(k),
                    _ => return,
                }
            }
        }));
    }
    drop(report_tx);

    let mut monitor = Monitor::new(s);
    let mut k = 0;
    loop {
        let mut reports = Vec::with_capacity(m);
        while reports.len() < m {
            match report_rx.recv() {
                Ok((_, Ok(r))) => reports.push(r),
                Ok((_, Err(e))) => return Err(e),
                Err(_) => {
                    let dead = handles.iter().position(|h| h.is_finished()).unwrap_or(0);
                    return Err(MarketError::AgentPanicked(dead));
                }
            }
        }
        let verdict = monitor.observe(k, reports)?;
        for v in &verdict_txs {
            let _ = v.send(verdict);
        }
        if let Verdict::Stop { .. } = verdict {
            break;
        }
        k += 1;
    }
    for (i, h) in handles.into_iter().enumerate() {
        h.join().map_err(|_| MarketError::AgentPanicked(i))?;
    }
    Ok(monitor.finish())
}

/// Final state of an agent run as a stand-alone process.
#[derive(Debug, Clone)]
pub struct AgentSummary {
    pub node: NodeId,
    pub rounds: usize,
    pub price: f64,
    pub last: AgentReport,
}

/// Runs node `id` alone for exactly `rounds` rounds against peers at
/// `addrs`. Stopping is by round count since no node sees global state.
pub fn run_agent(
    s: &Scenario,
    id: NodeId,
    addrs: &[SocketAddr],
    rounds: usize,
    timeout: Duration,
) -> Result<AgentSummary, MarketError> {
    s.validate()?;
    if id >= s.m() {
        return Err(MarketError::InvalidScenario(format!("node {id} out of range")));
    }
    if rounds == 0 {
        return Err(MarketError::InvalidScenario("rounds must be >= 1".into()));
    }
    check_len("agent addresses", addrs.len(), s.m())?;
    let listener = TcpListener::bind(addrs[id]).map_err(TransportError::Io)?;
    let mut agent = Agent::new(s, id, init_prices(s)?[id])?;
    let endpoint = TcpEndpoint::connect(id, listener, addrs, &s.topology, timeout)?;
    let mut x = Exchanger::new(id, endpoint, &s.topology, timeout);
    let mut last = None;
    for k in 0..rounds {
        let r = agent_round(&mut agent, &mut x, k as u32)?;
        if k + 1 < rounds {
            agent.update_price(k);
        }
        last = Some(r);
    }
    let last = last.expect("rounds >= 1");
    Ok(AgentSummary {
        node: id,
        rounds,
        price: last.price,
        last,
    })
}

pub fn write_trace_csv<W: Write>(trace: &IterationTrace, m: usize, w: W) -> Result<(), MarketError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["k".to_string()];
    header.extend((0..m).map(|i| format!("lambda_{i}")));
    header.extend((0..m).map(|i| format!("subgrad_{i}")));
    header.extend(["dual", "best_dual", "primal", "gap"].map(String::from));
    header.extend((0..m).map(|i| format!("case_{i}")));
    out.write_record(&header)?;
    for r in &trace.rows {
        let mut rec = vec![r.k.to_string()];
        rec.extend(r.prices.iter().map(f64::to_string));
        rec.extend(r.subgradient.iter().map(f64::to_string));
        rec.extend([r.dual, r.best_dual, r.primal, r.gap].map(|v| v.to_string()));
        rec.extend(r.cases.iter().map(|c| c.id().to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Trade matrix as CSV, one row per seller.
pub fn write_trades_csv<W: Write>(trades: &[Vec<f64>], w: W) -> Result<(), MarketError> {
    let mut out = csv::Writer::from_writer(w);
    let m = trades.len();
    let mut header = vec!["seller".to_string()];
    header.extend((0..m).map(|j| format!("to_{j}")));
    out.write_record(&header)?;
    for (i, row) in trades.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
