//! Reference solvers that share no logic with the closed-form solver.
//!
//! * [`solve_local_numeric`]: grid sweeps plus exact line searches along
//!   coordinate and pairwise directions for one microgrid's subproblem.
//! * [`solve_global_numeric`]: projected gradient descent on the trade
//!   variables of the centralized problem.
//!
//! Both are desk-scale test instruments.

use thiserror::Error;

use crate::cost_models::{CostError, CostFunction};
use crate::local_solver::LocalProblem;
use crate::market::Scenario;
use crate::topology::NodeId;

/// Upper bound of every local decision variable, in MWh.
pub const LOCAL_BOX: f64 = 15.0;
pub const GRID_STEP: f64 = 0.05;
pub const MAX_GLOBAL_NODES: usize = 6;
pub const GLOBAL_TOL: f64 = 1e-7;
/// Residual accepted when the iteration stalls at machine precision.
pub const STALL_TOL: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("oracle handles at most {max} microgrids, got {m}")]
    TooLarge { m: usize, max: usize },
    #[error("oracle handles at most {max} sellers, got {n}")]
    TooManySellers { n: usize, max: usize },
    #[error("projected gradient did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid oracle input: {0}")]
    Invalid(String),
}

/// Net expenditure of `p` at offer `s` and purchases `b` (one entry per
/// listed seller). Infeasible generation evaluates to `+∞`.
pub fn local_objective(p: &LocalProblem, s: f64, b: &[f64]) -> Result<f64, OracleError> {
    let g = p.demand + s - b.iter().sum::<f64>();
    if g < 0.0 || s < 0.0 || b.iter().any(|&x| x < 0.0) {
        return Ok(f64::INFINITY);
    }
    let mut f = p.gen_cost.value(g)? - p.own_price * s;
    for (x, seller) in b.iter().zip(&p.sellers) {
        f += p.transfer_cost.value(*x)? + seller.price * x;
    }
    Ok(f)
}

/// Gradient of [`local_objective`] with respect to `(s, b_1, .., b_n)`.
pub fn local_gradient(p: &LocalProblem, s: f64, b: &[f64]) -> Result<Vec<f64>, OracleError> {
    let g = p.demand + s - b.iter().sum::<f64>();
    let cg = p.gen_cost.marginal(g)?;
    let mut grad = Vec::with_capacity(b.len() + 1);
    grad.push(cg - p.own_price);
    for (x, seller) in b.iter().zip(&p.sellers) {
        grad.push(-cg + p.transfer_cost.marginal(*x)? + seller.price);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalNumeric {
    pub objective: f64,
    pub e_gen: f64,
    pub e_sell: f64,
    /// Purchases in the problem's seller order.
    pub e_buy: Vec<f64>,
}

/// Point in generation/purchase coordinates `x = (g, b_1, .., b_n)`; the
/// offer is `s = g + Σ b - E_c`, kept non-negative.
struct LocalSearch<'p, 'a> {
    p: &'p LocalProblem<'a>,
}

impl LocalSearch<'_, '_> {
    fn offer(&self, x: &[f64]) -> f64 {
        x.iter().sum::<f64>() - self.p.demand
    }

    fn value(&self, x: &[f64]) -> Result<f64, OracleError> {
        // Pairwise moves keep g + Σb fixed only up to rounding.
        let s = self.offer(x);
        if s < -1e-12 * (1.0 + self.p.demand) || x.iter().any(|&v| v < 0.0) {
            return Ok(f64::INFINITY);
        }
        let p = self.p;
        let mut f = p.gen_cost.value(x[0])? - p.own_price * s.max(0.0);
        for (b, seller) in x[1..].iter().zip(&p.sellers) {
            f += p.transfer_cost.value(*b)? + seller.price * b;
        }
        Ok(f)
    }

    /// Gradient in `x`: the chain rule through `s(x)` applied to
    /// [`local_gradient`], written directly in `x` to avoid rounding `g`.
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let p = self.p;
        let mut out = Vec::with_capacity(x.len());
        out.push(p.gen_cost.marginal(x[0])? - p.own_price);
        for (b, seller) in x[1..].iter().zip(&p.sellers) {
            out.push(p.transfer_cost.marginal(*b)? + seller.price - p.own_price);
        }
        Ok(out)
    }

    /// Feasible step range `[lo, hi]` for `x + t d`, where `d` is `+e_a`
    /// or `e_a - e_b`.
    fn step_range(&self, x: &[f64], a: usize, b: Option<usize>) -> (f64, f64) {
        let mut lo = -x[a];
        let mut hi = LOCAL_BOX - x[a];
        match b {
            Some(b) => {
                lo = lo.max(x[b] - LOCAL_BOX);
                hi = hi.min(x[b]);
            }
            // moving one coordinate down may not push the offer below zero
            None => lo = lo.max(-self.offer(x).max(0.0)),
        }
        (lo.min(0.0), hi.max(0.0))
    }

    fn apply(x: &mut [f64], a: usize, b: Option<usize>, t: f64) {
        x[a] += t;
        if let Some(b) = b {
            x[b] -= t;
        }
        for v in x.iter_mut() {
            if *v < 0.0 && *v > -1e-15 {
                *v = 0.0;
            }
        }
    }

    fn slope(&self, x: &[f64], a: usize, b: Option<usize>, t: f64) -> Result<f64, OracleError> {
        let mut y = x.to_vec();
        Self::apply(&mut y, a, b, t);
        let g = self.grad(&y)?;
        Ok(match b {
            Some(b) => g[a] - g[b],
            None => g[a],
        })
    }

    /// Exact minimization along one direction by bisection on the slope.
    fn line_search(&self, x: &mut Vec<f64>, a: usize, b: Option<usize>) -> Result<bool, OracleError> {
        let (mut lo, mut hi) = self.step_range(x, a, b);
        if hi - lo <= 0.0 {
            return Ok(false);
        }
        let t = if self.slope(x, a, b, lo)? >= 0.0 {
            lo
        } else if self.slope(x, a, b, hi)? <= 0.0 {
            hi
        } else {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.slope(x, a, b, mid)? > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let before = self.value(x)?;
        let mut y = x.clone();
        Self::apply(&mut y, a, b, t);
        let after = self.value(&y)?;
        if after < before {
            *x = y;
            return Ok(before - after > 1e-14 * (1.0 + before.abs()));
        }
        Ok(false)
    }

    /// Sweeps each coordinate over the coarse grid, keeping the best
    /// feasible value.
    fn grid_pass(&self, x: &mut [f64]) -> Result<(), OracleError> {
        let n_steps = (LOCAL_BOX / GRID_STEP).round() as usize;
        for a in 0..x.len() {
            let mut best = (self.value(x)?, x[a]);
            let keep = x[a];
            for k in 0..=n_steps {
                x[a] = k as f64 * GRID_STEP;
                let v = self.value(x)?;
                if v < best.0 {
                    best = (v, x[a]);
                }
            }
            x[a] = if best.0.is_finite() { best.1 } else { keep };
        }
        Ok(())
    }
}

/// Minimizes the local net expenditure numerically.
pub fn solve_local_numeric(p: &LocalProblem) -> Result<LocalNumeric, OracleError> {
    const MAX_SELLERS: usize = 8;
    if p.sellers.len() > MAX_SELLERS {
        return Err(OracleError::TooManySellers {
            n: p.sellers.len(),
            max: MAX_SELLERS,
        });
    }
    if !(p.demand >= 0.0 && p.demand <= LOCAL_BOX) {
        return Err(OracleError::Invalid(format!("demand {} outside [0, {LOCAL_BOX}]", p.demand)));
    }
    let search = LocalSearch { p };
    let n = p.sellers.len() + 1;
    let mut x = vec![0.0; n];
    x[0] = p.demand;
    for _ in 0..3 {
        search.grid_pass(&mut x)?;
    }
    for _ in 0..10_000 {
        let mut moved = false;
        for a in 0..n {
            moved |= search.line_search(&mut x, a, None)?;
            for b in 0..n {
                if a != b {
                    moved |= search.line_search(&mut x, a, Some(b))?;
                }
            }
        }
        if !moved {
            break;
        }
    }
    let e_sell = search.offer(&x).max(0.0);
    Ok(LocalNumeric {
        objective: search.value(&x)?,
        e_gen: x[0],
        e_sell,
        e_buy: x[1..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSolution {
    /// `trades[i][j]`: energy sent from `i` to `j`.
    pub trades: Vec<Vec<f64>>,
    pub generations: Vec<f64>,
    pub total_cost: f64,
    pub iterations: usize,
}

struct GlobalProblem<'s> {
    s: &'s Scenario,
    edges: Vec<(NodeId, NodeId)>,
}

impl GlobalProblem<'_> {
    fn generations(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.s.demands.clone();
        for (&(i, j), &e) in self.edges.iter().zip(x) {
            g[i] += e;
            g[j] -= e;
        }
        g
    }

    fn cost(&self, x: &[f64]) -> Result<f64, OracleError> {
        let g = self.generations(x);
        if g.iter().any(|&v| v < 0.0) {
            return Ok(f64::INFINITY);
        }
        let mut c = 0.0;
        for (cm, &gi) in self.s.gen_costs.iter().zip(&g) {
            c += cm.value(gi)?;
        }
        for &e in x {
            c += self.s.transfer_cost.value(e)?;
        }
        Ok(c)
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let g = self.generations(x);
        let mc: Vec<f64> = self
            .s
            .gen_costs
            .iter()
            .zip(&g)
            .map(|(cm, &gi)| cm.marginal(gi.max(0.0)))
            .collect::<Result<_, _>>()?;
        self.edges
            .iter()
            .zip(x)
            .map(|(&(i, j), &e)| Ok(mc[i] - mc[j] + self.s.transfer_cost.marginal(e)?))
            .collect()
    }
}

fn project(x: &[f64], d: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| (xi - t * di).max(0.0)).collect()
}

fn projected_residual(x: &[f64], grad: &[f64]) -> f64 {
    x.iter()
        .zip(project(x, grad, 1.0))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Solves the centralized cost-minimization problem by projected gradient
/// descent with Barzilai-Borwein step guesses and Armijo backtracking.
pub fn solve_global_numeric(s: &Scenario) -> Result<GlobalSolution, OracleError> {
    const MAX_ITERS: usize = 500_000;
    let m = s.m();
    if m > MAX_GLOBAL_NODES {
        return Err(OracleError::TooLarge {
            m,
            max: MAX_GLOBAL_NODES,
        });
    }
    let gp = GlobalProblem {
        s,
        edges: s.topology.edges().collect(),
    };
    let mut x = vec![0.0; gp.edges.len()];
    let mut f = gp.cost(&x)?;
    let mut grad = gp.grad(&x)?;
    let mut step = 1e-3;
    let mut residual = projected_residual(&x, &grad);
    let mut iterations = 0;
    while residual > GLOBAL_TOL {
        if iterations >= MAX_ITERS {
            return Err(OracleError::NotConverged {
                iterations,
                residual,
            });
        }
        iterations += 1;
        let mut t = step;
        let (x_new, f_new) = loop {
            let y = project(&x, &grad, t);
            let fy = gp.cost(&y)?;
            let decrease: f64 = grad.iter().zip(&x).zip(&y).map(|((g, a), b)| g * (a - b)).sum();
            if fy <= f - 1e-4 * decrease {
                break (y, fy);
            }
            t *= 0.5;
            if t < 1e-300 {
                return Err(OracleError::NotConverged {
                    iterations,
                    residual,
                });
            }
        };
        if x_new == x {
            // Rounding floor: the projected step no longer moves x. Accept
            // if the residual is already small, which happens near soft caps
            // where the gradient carries large curvature times rounding.
            if residual <= STALL_TOL {
                break;
            }
            return Err(OracleError::NotConverged {
                iterations,
                residual,
            });
        }
        let g_new = gp.grad(&x_new)?;
        let sy: f64 = x_new
            .iter()
            .zip(&x)
            .zip(g_new.iter().zip(&grad))
            .map(|((a, b), (c, d))| (a - b) * (c - d))
            .sum();
        let ss: f64 = x_new.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e3) } else { (t * 2.0).min(1e3) };
        x = x_new;
        f = f_new;
        grad = g_new;
        residual = projected_residual(&x, &grad);
    }
    let mut trades = vec![vec![0.0; m]; m];
    for (&(i, j), &e) in gp.edges.iter().zip(&x) {
        trades[i][j] = e;
    }
    Ok(GlobalSolution {
        trades,
        generations: gp.generations(&x),
        total_cost: f,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_models::CostModel;
    use crate::local_solver::SellerPrice;
    use crate::topology::{Topology, TopologyKind};

    fn problem<'a>(g: &'a CostModel, t: &'a CostModel, demand: f64, own: f64, sellers: &[f64]) -> LocalProblem<'a> {
        LocalProblem {
            node: 0,
            demand,
            gen_cost: g,
            transfer_cost: t,
            sellers: sellers
                .iter()
                .enumerate()
                .map(|(k, &price)| SellerPrice { node: k + 1, price })
                .collect(),
            own_price: own,
        }
    }

    #[test]
    fn local_examples() {
        let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
        let r = solve_local_numeric(&problem(&g, &t, 4.0, 55.0, &[58.5])).unwrap();
        assert!(r.e_sell < 1e-9 && r.e_buy[0] < 1e-9);
        assert!((r.objective - 317.8956000000155).abs() < 1e-6);

        let r = solve_local_numeric(&problem(&g, &t, 1.0, 56.0, &[43.0])).unwrap();
        assert!((r.objective - 126.3852).abs() < 1e-4);
        assert!((r.e_buy[0] - 2.0).abs() < 1e-4);

        let r = solve_local_numeric(&problem(&g, &t, 0.0, 40.0, &[70.0, 80.0])).unwrap();
        assert!((r.objective - 86.3852).abs() < 1e-9);
        assert!(r.e_sell == 0.0 && r.e_buy.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn local_rejects_bad_input() {
        let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
        assert!(solve_local_numeric(&problem(&g, &t, 4.0, 55.0, &[60.0; 9])).is_err());
        assert!(solve_local_numeric(&problem(&g, &t, 20.0, 55.0, &[60.0])).is_err());
    }

    #[test]
    fn global_examples() {
        let sym = Scenario::new(Topology::build(TopologyKind::Full, 3).unwrap(), vec![6.0; 3]).unwrap();
        let r = solve_global_numeric(&sym).unwrap();
        assert!(r.trades.iter().flatten().all(|&e| e == 0.0));

        let one = Scenario::new(Topology::build(TopologyKind::Full, 1).unwrap(), vec![5.0]).unwrap();
        let r = solve_global_numeric(&one).unwrap();
        assert!((r.total_cost - 377.4152000149).abs() < 1e-9);

        let two = Scenario::new(Topology::build(TopologyKind::Line, 2).unwrap(), vec![2.0, 10.0]).unwrap();
        let r = solve_global_numeric(&two).unwrap();
        // frozen from an independent high-precision solve
        assert!((r.total_cost - 883.8153485134033).abs() < 1e-8 * 883.8);
        assert!((r.trades[0][1] - 1.22119125).abs() < 1e-6);
        assert_eq!(r.trades[1][0], 0.0);
        assert!(r.total_cost < 914.7242290903878);
        let balance = r.generations[0] - (2.0 + r.trades[0][1]);
        assert!(balance.abs() < 1e-12);
    }

    #[test]
    fn global_rejects_large_networks() {
        let big = Scenario::new(Topology::build(TopologyKind::Ring, 7).unwrap(), vec![5.0; 7]).unwrap();
        assert!(matches!(solve_global_numeric(&big), Err(OracleError::TooLarge { .. })));
    }
}
