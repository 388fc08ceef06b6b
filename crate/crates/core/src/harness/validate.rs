//! Self-check: runs the solver, market and oracle properties on seeded
//! random data and reports pass/fail per property with a counterexample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cost_models::{CostFunction, CostModel};
use crate::harness::instances::{random_local_instance, random_scenario, LocalInstance};
use crate::local_solver::{self, Case, LocalProblem, LocalSolution, SolverOptions};
use crate::market::{self, RunOutcome, Scenario};
use crate::oracle;
use crate::topology::{Topology, TopologyKind};
use crate::Fault;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    pub local_samples: usize,
    pub scenario_samples: usize,
    #[doc(hidden)]
    pub fault: Fault,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 0,
            local_samples: 2000,
            scenario_samples: 4,
            fault: Fault::None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub checked: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl ValidationReport {
    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

struct Check {
    name: &'static str,
    checked: usize,
    failures: usize,
    first: Option<(String, Value)>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check {
            name,
            checked: 0,
            failures: 0,
            first: None,
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> (String, Value)) {
        self.checked += 1;
        if !ok {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(detail());
            }
        }
    }

    fn fail(&mut self, detail: String, example: Value) {
        self.record(false, || (detail, example));
    }

    fn finish(self) -> PropertyResult {
        let passed = self.failures == 0 && self.checked > 0;
        let (detail, counterexample) = match self.first {
            Some((d, v)) => (Some(d), Some(v)),
            None if self.checked == 0 => (Some("nothing was checked".into()), None),
            None => (None, None),
        };
        PropertyResult {
            name: self.name,
            passed,
            checked: self.checked,
            failures: self.failures,
            detail,
            counterexample,
        }
    }
}

struct Ctx {
    gen: CostModel,
    transfer: CostModel,
    opts: SolverOptions,
}

impl Ctx {
    fn solve(&self, p: &LocalProblem) -> Result<LocalSolution, local_solver::SolverError> {
        local_solver::solve_local_with(p, self.opts)
    }
}

fn instance_json(inst: &LocalInstance) -> Value {
    serde_json::to_value(inst).unwrap_or(Value::Null)
}

fn check_cost_roundtrip(rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut c = Check::new("cost_inverse_roundtrip");
    let models = [(CostModel::u12(), 10.5), (CostModel::unit_cubic(), 10.0)];
    for (model, top) in models {
        for _ in 0..500 {
            let x = rng.gen_range(0.0..top);
            let back = model.marginal(x).and_then(|y| model.inverse_marginal(y));
            let ok = matches!(back, Ok(b) if (b - x).abs() <= 1e-6);
            c.record(ok, || (format!("inverse_marginal(marginal({x})) = {back:?}"), json!({"model": model, "x": x})));
        }
    }
    c.finish()
}

fn check_cost_fd(rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut c = Check::new("cost_marginal_fd");
    let h = 1e-5;
    for model in [CostModel::u12(), CostModel::unit_cubic()] {
        for _ in 0..500 {
            let x = rng.gen_range(0.1..9.9);
            let fd = (model.value(x + h).unwrap_or(f64::NAN) - model.value(x - h).unwrap_or(f64::NAN)) / (2.0 * h);
            let m = model.marginal(x).unwrap_or(f64::NAN);
            let ok = (m - fd).abs() <= 1e-4;
            c.record(ok, || (format!("marginal {m} vs difference quotient {fd}"), json!({"model": model, "x": x})));
        }
    }
    c.finish()
}

fn check_local_gradient(rng: &mut ChaCha8Rng, ctx: &Ctx) -> PropertyResult {
    let mut c = Check::new("local_gradient_fd");
    let h = 1e-5;
    while c.checked < 100 {
        let inst = random_local_instance(rng);
        let p = inst.problem(&ctx.gen, &ctx.transfer);
        let g = rng.gen_range(0.5..9.5);
        let b: Vec<f64> = inst.seller_prices.iter().map(|_| rng.gen_range(0.05..3.0)).collect();
        let s = g + b.iter().sum::<f64>() - inst.demand;
        if s < 0.05 {
            continue;
        }
        let analytic = match oracle::local_gradient(&p, s, &b) {
            Ok(v) => v,
            Err(e) => {
                c.fail(e.to_string(), instance_json(&inst));
                continue;
            }
        };
        let mut worst: f64 = 0.0;
        for k in 0..=b.len() {
            let f = |d: f64| {
                let (mut s2, mut b2) = (s, b.clone());
                if k == 0 {
                    s2 += d;
                } else {
                    b2[k - 1] += d;
                }
                oracle::local_objective(&p, s2, &b2).unwrap_or(f64::NAN)
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            worst = worst.max((fd - analytic[k]).abs());
        }
        c.record(worst <= 1e-5, || {
            (format!("gradient differs from central differences by {worst:e}"), json!({"instance": instance_json(&inst), "s": s, "b": b}))
        });
    }
    c.finish()
}

fn energies(s: &LocalSolution) -> Vec<f64> {
    let mut v = vec![s.e_gen, s.e_sell];
    v.extend(s.e_buy.iter().map(|b| b.energy));
    v
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn check_local(instances: &[LocalInstance], ctx: &Ctx) -> Vec<PropertyResult> {
    let mut agree = Check::new("local_oracle_agreement");
    let mut kkt = Check::new("local_kkt_residual");
    let mut partition = Check::new("local_case_partition");
    let mut balance = Check::new("local_energy_balance");
    for inst in instances {
        let p = inst.problem(&ctx.gen, &ctx.transfer);
        let ex = || instance_json(inst);
        let sol = match ctx.solve(&p) {
            Ok(s) => s,
            Err(e) => {
                agree.fail(e.to_string(), ex());
                continue;
            }
        };
        let closed = local_solver::net_expenditure(&p, &sol);
        let numeric = oracle::solve_local_numeric(&p);
        match (closed, numeric) {
            (Ok(f), Ok(o)) => {
                let tol = 1e-6 * (1.0 + f.abs());
                agree.record((f - o.objective).abs() <= tol, || {
                    (format!("closed form {f} vs numeric {}", o.objective), json!({"instance": ex(), "case": sol.case.id()}))
                });
            }
            (a, b) => agree.fail(format!("evaluation failed: {a:?} / {b:?}"), ex()),
        }
        match local_solver::verify_kkt(&p, &sol) {
            Ok(r) => kkt.record(r <= 1e-6, || (format!("residual {r:e}"), json!({"instance": ex(), "case": sol.case.id()}))),
            Err(e) => kkt.fail(e.to_string(), ex()),
        }

        let bought = sol.total_bought();
        let resid = sol.e_gen - (p.demand + sol.e_sell - bought);
        let nonneg = energies(&sol).iter().all(|&e| e >= 0.0);
        let pattern = match sol.case {
            Case::SelfSufficient => sol.e_sell == 0.0 && bought == 0.0,
            Case::BuyOnly => sol.e_sell == 0.0 && sol.e_gen <= 1e-9,
            Case::GenerateAndBuy => sol.e_sell == 0.0,
            Case::GenerateAndSell => bought == 0.0,
            Case::BuyAndResell => sol.e_gen <= 1e-9,
            Case::GenerateBuyAndSell => true,
        };
        balance.record(resid.abs() <= 1e-9 && nonneg && pattern, || {
            (format!("balance residual {resid:e}, nonneg {nonneg}, pattern {pattern}"), json!({"instance": ex(), "case": sol.case.id()}))
        });

        match local_solver::case_conditions(&p) {
            Ok(cond) => {
                let matching: Vec<Case> = cond.matching().collect();
                let ok = match matching.len() {
                    0 => false,
                    1 => true,
                    _ => {
                        // only acceptable on a shared boundary where the
                        // candidate solutions coincide
                        let sols: Vec<_> = matching
                            .iter()
                            .filter_map(|&c| local_solver::solve_as_case(&p, c).ok())
                            .map(|s| energies(&s))
                            .collect();
                        sols.len() == matching.len() && sols.windows(2).all(|w| max_diff(&w[0], &w[1]) <= 1e-5)
                    }
                };
                partition.record(ok, || {
                    (format!("matching cases {:?}", matching.iter().map(|c| c.id()).collect::<Vec<_>>()), ex())
                });
            }
            Err(e) => partition.fail(e.to_string(), ex()),
        }
    }
    vec![agree.finish(), kkt.finish(), partition.finish(), balance.finish()]
}

/// Finds case switches along one price coordinate and checks that the
/// neighbouring cases produce the same energies at the switch.
fn check_boundaries(instances: &[LocalInstance], ctx: &Ctx) -> PropertyResult {
    let mut c = Check::new("local_boundary_continuity");
    let case_at = |inst: &LocalInstance| -> Option<Case> {
        let p = inst.problem(&ctx.gen, &ctx.transfer);
        local_solver::classify(&p).ok().map(|k| k.case)
    };
    for inst in instances {
        for coord in 0..2 {
            let with = |v: f64| {
                let mut i = inst.clone();
                if coord == 0 {
                    i.own_price = v;
                } else {
                    i.seller_prices[0] = v;
                }
                i
            };
            let grid: Vec<f64> = (0..=80).map(|k| 40.0 + 0.5 * k as f64).collect();
            for w in grid.windows(2) {
                let (mut lo, mut hi) = (w[0], w[1]);
                let (Some(c_lo), Some(c_hi)) = (case_at(&with(lo)), case_at(&with(hi))) else {
                    c.fail("classification failed".into(), instance_json(inst));
                    continue;
                };
                if c_lo == c_hi {
                    continue;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if case_at(&with(mid)) == Some(c_lo) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let (a, b) = (with(lo), with(hi));
                let sa = local_solver::solve_local(&a.problem(&ctx.gen, &ctx.transfer));
                let sb = local_solver::solve_local(&b.problem(&ctx.gen, &ctx.transfer));
                match (sa, sb) {
                    (Ok(sa), Ok(sb)) => {
                        let d = max_diff(&energies(&sa), &energies(&sb));
                        c.record(d <= 1e-5, || {
                            (
                                format!("cases {} and {} differ by {d:e} MWh at the switch", sa.case.id(), sb.case.id()),
                                json!({"below": instance_json(&a), "above": instance_json(&b)}),
                            )
                        });
                    }
                    (x, y) => c.fail(format!("solve failed: {x:?} / {y:?}"), instance_json(&a)),
                }
            }
        }
    }
    c.finish()
}

fn check_zero_demand(rng: &mut ChaCha8Rng, ctx: &Ctx) -> PropertyResult {
    let mut c = Check::new("local_zero_demand");
    let cp0 = ctx.gen.marginal(0.0).unwrap_or(f64::NAN);
    let g0 = ctx.transfer.marginal(0.0).unwrap_or(f64::NAN);
    for _ in 0..500 {
        let mut inst = random_local_instance(rng);
        inst.demand = 0.0;
        let p = inst.problem(&ctx.gen, &ctx.transfer);
        let lmin = inst.seller_prices.iter().copied().fold(f64::INFINITY, f64::min);
        match ctx.solve(&p) {
            Ok(s) => {
                let no_shadow = !matches!(s.case, Case::BuyOnly | Case::GenerateAndBuy);
                let in_case1 = inst.own_price <= cp0 && lmin >= inst.own_price - g0;
                let ok = no_shadow && (!in_case1 || s.case == Case::SelfSufficient);
                c.record(ok, || (format!("zero load classified as {}", s.case), instance_json(&inst)));
            }
            Err(e) => c.fail(e.to_string(), instance_json(&inst)),
        }
    }
    c.finish()
}

fn check_monotone(instances: &[LocalInstance], ctx: &Ctx) -> PropertyResult {
    let mut c = Check::new("local_monotone_response");
    for inst in instances {
        let mut prev_sell = f64::NEG_INFINITY;
        let mut prev_buy = f64::INFINITY;
        for k in 0..=160 {
            let v = 40.0 + 0.25 * k as f64;
            let mut a = inst.clone();
            a.own_price = v;
            let mut b = inst.clone();
            b.seller_prices[0] = v;
            match (
                ctx.solve(&a.problem(&ctx.gen, &ctx.transfer)),
                ctx.solve(&b.problem(&ctx.gen, &ctx.transfer)),
            ) {
                (Ok(sa), Ok(sb)) => {
                    let buy = sb.e_buy[0].energy;
                    let ok = sa.e_sell >= prev_sell - 1e-9 && buy <= prev_buy + 1e-9;
                    c.record(ok, || {
                        (format!("at price {v}: offer {} after {prev_sell}, purchase {buy} after {prev_buy}", sa.e_sell), instance_json(inst))
                    });
                    prev_sell = sa.e_sell;
                    prev_buy = buy;
                }
                (x, y) => c.fail(format!("solve failed: {x:?} / {y:?}"), instance_json(inst)),
            }
        }
    }
    c.finish()
}

fn scenario_json(s: &Scenario) -> Value {
    json!({
        "m": s.m(),
        "adjacency": s.topology.adjacency(),
        "demands": s.demands,
    })
}

fn check_market(rng: &mut ChaCha8Rng, n: usize, fault: Fault) -> Vec<PropertyResult> {
    let mut duality = Check::new("market_weak_duality");
    let mut best = Check::new("market_best_dual_monotone");
    let mut conv = Check::new("market_convergence");
    let mut subgrad = Check::new("market_subgradient_inequality");
    let mut benefit = Check::new("market_trading_benefit");
    let mut pricing = Check::new("market_seller_pricing");
    let mut global = Check::new("global_oracle_agreement");

    let named = [
        (TopologyKind::Full, vec![8.0, 11.0, 11.0, 6.0]),
        (TopologyKind::Full, vec![11.0; 4]),
    ];
    let mut scenarios: Vec<(Scenario, bool)> = named
        .into_iter()
        .map(|(k, d)| (Scenario::new(Topology::build(k, 4).expect("m = 4"), d).expect("valid"), true))
        .collect();
    scenarios.extend((0..n).map(|_| (random_scenario(rng), false)));

    for (mut s, must_converge) in scenarios {
        s.fault = fault;
        let ex = scenario_json(&s);
        let out: RunOutcome = match market::run(&s) {
            Ok(o) => o,
            Err(e) => {
                conv.fail(e.to_string(), ex);
                continue;
            }
        };
        let last = out.last().clone();
        if must_converge {
            let ok = out.converged && last.relative_gap() <= 1e-3 && last.max_mismatch() <= 1e-3;
            conv.record(ok, || {
                (format!("converged {} after {} rounds, gap {:e}, mismatch {:e}", out.converged, out.iterations(), last.relative_gap(), last.max_mismatch()), ex.clone())
            });
        }
        let mut prev = f64::NEG_INFINITY;
        for r in &out.trace.rows {
            duality.record(r.dual <= r.primal + 1e-9, || (format!("round {}: dual {} > primal {}", r.k, r.dual, r.primal), ex.clone()));
            best.record(r.best_dual >= prev, || (format!("round {}: best dual fell", r.k), ex.clone()));
            prev = r.best_dual;
        }
        let rows = &out.trace.rows;
        for _ in 0..100.min(rows.len() * rows.len()) {
            let a = &rows[rng.gen_range(0..rows.len())];
            let b = &rows[rng.gen_range(0..rows.len())];
            let lin: f64 = a.subgradient.iter().zip(&b.prices).zip(&a.prices).map(|((g, x), y)| g * (x - y)).sum();
            let ok = match market::dual_value(&b.prices, &s) {
                Ok(d) => d <= a.dual + lin + 1e-6,
                Err(_) => false,
            };
            subgrad.record(ok, || (format!("rounds {} -> {}", a.k, b.k), ex.clone()));
        }
        if !out.converged {
            continue;
        }
        for (i, sol) in out.solutions.iter().enumerate() {
            let standalone = s.gen_costs[i].value(s.demands[i]).unwrap_or(f64::NAN)
                + s.transfer_cost.value(0.0).unwrap_or(f64::NAN);
            let ne = out.net_expenditures[i];
            benefit.record(ne <= standalone + 1e-6, || (format!("node {i}: {ne} > standalone {standalone}"), ex.clone()));
            if matches!(sol.case, Case::GenerateAndSell | Case::GenerateBuyAndSell) {
                let lam = out.prices[i];
                let mc = s.gen_costs[i].marginal(sol.e_gen).unwrap_or(f64::NAN);
                pricing.record((lam - mc).abs() <= 1e-3 * lam, || (format!("node {i}: price {lam} vs marginal cost {mc}"), ex.clone()));
            }
        }
        if s.m() <= oracle::MAX_GLOBAL_NODES {
            match oracle::solve_global_numeric(&s) {
                Ok(g) => {
                    let rel = (last.primal - g.total_cost).abs() / g.total_cost.abs();
                    global.record(rel <= 5e-3, || (format!("distributed {} vs global {}", last.primal, g.total_cost), ex.clone()));
                }
                Err(e) => global.fail(e.to_string(), ex.clone()),
            }
        }
    }
    vec![
        conv.finish(),
        duality.finish(),
        best.finish(),
        subgrad.finish(),
        benefit.finish(),
        pricing.finish(),
        global.finish(),
    ]
}

pub fn validate(opts: ValidateOptions) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ctx = Ctx {
        gen: CostModel::u12(),
        transfer: CostModel::unit_cubic(),
        opts: SolverOptions {
            fault: opts.fault,
            ..SolverOptions::default()
        },
    };
    let instances: Vec<LocalInstance> = (0..opts.local_samples)
        .map(|_| random_local_instance(&mut rng))
        .collect();
    let few = &instances[..instances.len().min(100)];

    let mut properties = vec![check_cost_roundtrip(&mut rng), check_cost_fd(&mut rng)];
    properties.push(check_local_gradient(&mut rng, &ctx));
    properties.extend(check_local(&instances, &ctx));
    properties.push(check_boundaries(few, &ctx));
    properties.push(check_zero_demand(&mut rng, &ctx));
    properties.push(check_monotone(few, &ctx));
    properties.extend(check_market(&mut rng, opts.scenario_samples, opts.fault));
    ValidationReport {
        seed: opts.seed,
        passed: properties.iter().all(|p| p.passed),
        properties,
    }
}
