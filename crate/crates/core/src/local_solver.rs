//! Closed-form solution of one microgrid's pricing subproblem.
//!
//! For fixed prices the microgrid minimizes its net expenditure
//!
//! ```text
//!   C(E_c + s - Σ b_j) + Σ γ(b_j) + Σ λ_j b_j - λ_i s
//! ```
//!
//! over the offered energy `s >= 0` and the purchases `b_j >= 0`, with
//! non-negative generation. The optimum falls in exactly one of six operating
//! regimes (see [`Case`]), each identified by inequalities between the prices
//! and the marginal costs `C'(0)`, `C'(E_c)`, `γ'(0)`. Regimes 2 and 3 also
//! need the shadow price `η` of the no-sale constraint, found by a scalar
//! root search over the piecewise-smooth breakpoint structure.

use std::fmt;

use thiserror::Error;

use crate::cost_models::{CostError, CostFunction, CostModel};
use crate::topology::NodeId;
use crate::Fault;

/// Boundary tolerance applied to every case inequality.
pub const CASE_EPS: f64 = 1e-9;

const ENERGY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid local problem: {0}")]
    InvalidProblem(String),
    #[error("node {node}: no operating case matched (own price {own_price}, sellers {sellers:?}, slacks {slacks:?})")]
    NoCaseMatched {
        node: NodeId,
        own_price: f64,
        sellers: Vec<(NodeId, f64)>,
        slacks: [f64; 6],
    },
    #[error("node {node}: {case} shadow-price equation has no root in [{lo}, {hi}] (residuals {f_lo}, {f_hi})")]
    EtaNoRoot {
        node: NodeId,
        case: Case,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("infeasible local solution: {0}")]
    Infeasible(String),
}

/// Operating regime of a microgrid at given prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Case {
    /// Neither sells nor buys; generates its own demand.
    SelfSufficient = 1,
    /// Buys its whole demand; neither generates nor sells.
    BuyOnly = 2,
    /// Generates and buys, does not sell.
    GenerateAndBuy = 3,
    /// Generates and sells, does not buy.
    GenerateAndSell = 4,
    /// Buys and resells, does not generate.
    BuyAndResell = 5,
    /// Generates, buys and sells.
    GenerateBuyAndSell = 6,
}

impl Case {
    pub const ALL: [Case; 6] = [
        Case::SelfSufficient,
        Case::BuyOnly,
        Case::GenerateAndBuy,
        Case::GenerateAndSell,
        Case::BuyAndResell,
        Case::GenerateBuyAndSell,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Case> {
        Case::ALL.get((id as usize).checked_sub(1)?).copied()
    }

    pub fn sells(self) -> bool {
        matches!(
            self,
            Case::GenerateAndSell | Case::BuyAndResell | Case::GenerateBuyAndSell
        )
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case {}", self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SellerPrice {
    pub node: NodeId,
    pub price: f64,
}

/// One microgrid's subproblem. Only connected sellers are listed; a missing
/// link is equivalent to an unaffordable price.
#[derive(Debug, Clone)]
pub struct LocalProblem<'a> {
    pub node: NodeId,
    pub demand: f64,
    pub gen_cost: &'a CostModel,
    pub transfer_cost: &'a CostModel,
    pub sellers: Vec<SellerPrice>,
    pub own_price: f64,
}

impl LocalProblem<'_> {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.demand.is_finite() && self.demand >= 0.0) {
            return Err(SolverError::InvalidProblem(format!(
                "demand must be finite and >= 0, got {}",
                self.demand
            )));
        }
        if !self.own_price.is_finite() {
            return Err(SolverError::InvalidProblem(format!(
                "own price must be finite, got {}",
                self.own_price
            )));
        }
        for s in &self.sellers {
            if !s.price.is_finite() {
                return Err(SolverError::InvalidProblem(format!(
                    "price of seller {} must be finite, got {}",
                    s.node, s.price
                )));
            }
            if s.node == self.node {
                return Err(SolverError::InvalidProblem(format!(
                    "node {} cannot buy from itself",
                    s.node
                )));
            }
        }
        Ok(())
    }

    fn min_seller_price(&self) -> f64 {
        self.sellers
            .iter()
            .map(|s| s.price)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Purchase {
    pub seller: NodeId,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub node: NodeId,
    pub case: Case,
    pub e_gen: f64,
    pub e_sell: f64,
    /// One entry per listed seller, in the problem's seller order.
    pub e_buy: Vec<Purchase>,
    pub active_sellers: Vec<NodeId>,
    /// Shadow price of the no-sale constraint; zero outside cases 2 and 3.
    pub eta: f64,
}

impl LocalSolution {
    pub fn total_bought(&self) -> f64 {
        self.e_buy.iter().map(|p| p.energy).sum()
    }

    pub fn bought_from(&self, seller: NodeId) -> f64 {
        self.e_buy
            .iter()
            .find(|p| p.seller == seller)
            .map_or(0.0, |p| p.energy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub case: Case,
    pub active_sellers: Vec<NodeId>,
    pub eta: f64,
}

/// Per-case condition check: `holds[k]` is true when every inequality of
/// case `k + 1` holds within the tolerance; `slack[k]` is the smallest signed
/// slack among them (negative means violated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseConditions {
    pub holds: [bool; 6],
    pub slack: [f64; 6],
}

impl CaseConditions {
    pub fn count(&self) -> usize {
        self.holds.iter().filter(|&&h| h).count()
    }

    pub fn matching(&self) -> impl Iterator<Item = Case> + '_ {
        Case::ALL
            .into_iter()
            .zip(self.holds)
            .filter(|(_, h)| *h)
            .map(|(c, _)| c)
    }

    /// True when some case sits within `band` of its boundary.
    pub fn near_boundary(&self, band: f64) -> bool {
        self.slack.iter().any(|s| s.abs() < band)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub eps: f64,
    #[doc(hidden)]
    pub fault: Fault,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps: CASE_EPS,
            fault: Fault::None,
        }
    }
}

type Residual<'r> = Box<dyn Fn(f64) -> Result<f64, SolverError> + 'r>;

/// Cached marginal quantities shared by classification and solution.
struct Marginals<'p, 'a> {
    p: &'p LocalProblem<'a>,
    opts: SolverOptions,
    /// C'(0)
    gen_floor: f64,
    /// C'(E_c)
    gen_at_demand: f64,
    /// γ'(0)
    transfer_floor: f64,
    min_price: f64,
}

impl<'p, 'a> Marginals<'p, 'a> {
    fn new(p: &'p LocalProblem<'a>, opts: SolverOptions) -> Result<Self, SolverError> {
        p.validate()?;
        Ok(Marginals {
            p,
            opts,
            gen_floor: p.gen_cost.marginal(0.0)?,
            gen_at_demand: p.gen_cost.marginal(p.demand)?,
            transfer_floor: p.transfer_cost.marginal(0.0)?,
            min_price: p.min_seller_price(),
        })
    }

    /// χ(ν): generation at marginal value ν.
    fn generation_at(&self, nu: f64) -> Result<f64, SolverError> {
        Ok(self.p.gen_cost.inverse_marginal(nu)?)
    }

    /// Σ_j Γ(ν - λ_j): purchases when energy is worth ν at this node.
    fn purchases_at(&self, nu: f64) -> Result<f64, SolverError> {
        let mut total = 0.0;
        for s in &self.p.sellers {
            total += self.p.transfer_cost.inverse_marginal(nu - s.price)?;
        }
        Ok(total)
    }

    /// Shadow price at which seller `j` starts supplying.
    fn breakpoint(&self, price: f64) -> f64 {
        price - self.p.own_price + self.transfer_floor
    }

    fn conditions(&self) -> Result<CaseConditions, SolverError> {
        let p = self.p;
        let e_c = p.demand;
        let own = p.own_price;
        let cp0 = self.gen_floor;
        let cpe = self.gen_at_demand;
        let g0 = self.transfer_floor;
        let lmin = self.min_price;
        let bought_own = self.purchases_at(own)?;
        let gen_own = self.generation_at(own)?;
        let zero_demand = e_c <= 0.0;

        let min_of = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let mut slack = [f64::NEG_INFINITY; 6];
        slack[0] = if zero_demand {
            min_of(&[cp0 - own, lmin - (own - g0)])
        } else {
            min_of(&[cpe - own, lmin - (cpe - g0)])
        };
        if !zero_demand {
            let bought_floor = self.purchases_at(cp0)?;
            slack[1] = min_of(&[cp0 - own, e_c - bought_own, bought_floor - e_c]);
            slack[2] = min_of(&[
                cpe - own,
                (cpe - g0) - lmin,
                e_c - bought_floor,
                e_c - gen_own - bought_own,
            ]);
        }
        slack[3] = min_of(&[own - cpe, lmin - (own - g0)]);
        slack[4] = min_of(&[cp0 - own, (own - g0) - lmin, bought_own - e_c]);
        slack[5] = min_of(&[own - cp0, (own - g0) - lmin, gen_own + bought_own - e_c]);

        let eps = self.opts.eps;
        let mut holds = [false; 6];
        for (h, s) in holds.iter_mut().zip(slack) {
            *h = s >= -eps;
        }
        // Purchases grow like a square root past their onset price, so an
        // ε-wide overlap on the no-purchase side of cases 1 and 4 would cut
        // off up to sqrt(ε/γ''') MWh. The buying cases take the overlap
        // instead; their formulas clamp to zero purchases there.
        let onset = if zero_demand { own - g0 } else { cpe - g0 };
        holds[0] &= lmin - onset >= 0.0;
        holds[3] &= lmin - (own - g0) >= 0.0;
        Ok(CaseConditions { holds, slack })
    }

    fn active_set(&self, eta: f64) -> Vec<NodeId> {
        self.p
            .sellers
            .iter()
            .filter(|s| eta > self.breakpoint(s.price))
            .map(|s| s.node)
            .collect()
    }

    fn solve_eta(&self, case: Case) -> Result<(f64, Vec<NodeId>), SolverError> {
        let p = self.p;
        let own = p.own_price;
        let e_c = p.demand;
        let fault = self.opts.fault;
        // Both equations are written as an increasing function of η whose
        // root is the shadow price.
        let (hi, residual): (f64, Residual<'_>) = match case
        {
            Case::BuyOnly => (
                self.gen_floor - own,
                Box::new(move |eta| Ok(self.purchases_at(own + eta)? - e_c)),
            ),
            Case::GenerateAndBuy => (
                self.gen_at_demand - own,
                Box::new(move |eta| {
                    let bought = if fault == Fault::Case3SumSign {
                        let mut t = 0.0;
                        for s in &p.sellers {
                            t += p.transfer_cost.inverse_marginal(eta + own + s.price)?;
                        }
                        t
                    } else {
                        self.purchases_at(own + eta)?
                    };
                    let gen = e_c - bought;
                    if gen < 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    Ok(own + eta - p.gen_cost.marginal(gen)?)
                }),
            ),
            _ => {
                return Err(SolverError::InvalidProblem(format!(
                    "{case} has no shadow-price equation"
                )))
            }
        };
        let lo = 0.0_f64;
        let hi = hi.max(lo);

        let f_lo = residual(lo)?;
        if f_lo >= 0.0 {
            return Ok((lo, self.active_set(lo)));
        }
        let mut cuts: Vec<f64> = p
            .sellers
            .iter()
            .map(|s| self.breakpoint(s.price))
            .filter(|&b| b > lo && b < hi)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.push(hi);

        let mut left = lo;
        let mut f_left = f_lo;
        for right in cuts {
            let f_right = residual(right)?;
            if f_right >= 0.0 {
                let eta = bisect(&residual, left, right, f_left, f_right)?;
                return Ok((eta, self.active_set(eta)));
            }
            left = right;
            f_left = f_right;
        }
        // The equation ends slightly short of zero only on an ε-boundary,
        // where the clamped upper end is the continuous limit.
        let scale = e_c.max(1.0).max(hi.abs());
        if f_left.is_finite() && f_left.abs() <= 1e-6 * scale {
            return Ok((hi, self.active_set(hi)));
        }
        Err(SolverError::EtaNoRoot {
            node: p.node,
            case,
            lo,
            hi,
            f_lo,
            f_hi: f_left,
        })
    }

    fn classify(&self) -> Result<(Case, CaseConditions), SolverError> {
        let cond = self.conditions()?;
        let first = cond.matching().next();
        match first {
            Some(case) => Ok((case, cond)),
            None => Err(SolverError::NoCaseMatched {
                node: self.p.node,
                own_price: self.p.own_price,
                sellers: self.p.sellers.iter().map(|s| (s.node, s.price)).collect(),
                slacks: cond.slack,
            }),
        }
    }

    fn purchases_with_shadow(&self, eta: f64) -> Result<Vec<Purchase>, SolverError> {
        let own = self.p.own_price;
        self.p
            .sellers
            .iter()
            .map(|s| {
                Ok(Purchase {
                    seller: s.node,
                    energy: self.p.transfer_cost.inverse_marginal(eta + own - s.price)?,
                })
            })
            .collect()
    }

    fn solve_as(&self, case: Case) -> Result<LocalSolution, SolverError> {
        let p = self.p;
        let e_c = p.demand;
        let own = p.own_price;
        let no_purchases = || {
            p.sellers
                .iter()
                .map(|s| Purchase {
                    seller: s.node,
                    energy: 0.0,
                })
                .collect::<Vec<_>>()
        };
        let (e_gen, e_sell, e_buy, active, eta) = match case {
            Case::SelfSufficient => (e_c, 0.0, no_purchases(), Vec::new(), 0.0),
            Case::BuyOnly | Case::GenerateAndBuy => {
                let (eta, active) = self.solve_eta(case)?;
                let e_buy = self.purchases_with_shadow(eta)?;
                let bought: f64 = e_buy.iter().map(|b| b.energy).sum();
                (f64::max(e_c - bought, 0.0), 0.0, e_buy, active, eta)
            }
            Case::GenerateAndSell => {
                let gen = self.generation_at(own)?;
                if gen >= e_c {
                    (gen, gen - e_c, no_purchases(), Vec::new(), 0.0)
                } else {
                    (e_c, 0.0, no_purchases(), Vec::new(), 0.0)
                }
            }
            Case::BuyAndResell | Case::GenerateBuyAndSell => {
                let e_buy = self.purchases_with_shadow(0.0)?;
                let bought: f64 = e_buy.iter().map(|b| b.energy).sum();
                let gen = if case == Case::BuyAndResell {
                    0.0
                } else {
                    self.generation_at(own)?
                };
                let active = self.active_set(0.0);
                let surplus = gen + bought - e_c;
                if surplus >= 0.0 {
                    (gen, surplus, e_buy, active, 0.0)
                } else {
                    (e_c - bought, 0.0, e_buy, active, 0.0)
                }
            }
        };
        Ok(LocalSolution {
            node: p.node,
            case,
            e_gen,
            e_sell,
            e_buy,
            active_sellers: active,
            eta,
        })
    }
}

/// Bisection of an increasing function on a bracket with `f(lo) < 0 <= f(hi)`.
fn bisect<F>(f: &F, mut lo: f64, mut hi: f64, mut f_lo: f64, mut f_hi: f64) -> Result<f64, SolverError>
where
    F: Fn(f64) -> Result<f64, SolverError> + ?Sized,
{
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm > 0.0 {
            hi = mid;
            f_hi = fm;
        } else {
            lo = mid;
            f_lo = fm;
        }
    }
    Ok(if f_hi.is_finite() && f_hi.abs() <= f_lo.abs() { hi } else { lo })
}

pub fn case_conditions(p: &LocalProblem) -> Result<CaseConditions, SolverError> {
    Marginals::new(p, SolverOptions::default())?.conditions()
}

/// Identifies the operating case; cases are tried in order 1..=6 and the
/// first whose conditions hold within [`CASE_EPS`] wins.
pub fn classify(p: &LocalProblem) -> Result<Classification, SolverError> {
    classify_with(p, SolverOptions::default())
}

pub fn classify_with(p: &LocalProblem, opts: SolverOptions) -> Result<Classification, SolverError> {
    let m = Marginals::new(p, opts)?;
    let (case, _) = m.classify()?;
    let (eta, active_sellers) = match case {
        Case::BuyOnly | Case::GenerateAndBuy => m.solve_eta(case)?,
        Case::BuyAndResell | Case::GenerateBuyAndSell => (0.0, m.active_set(0.0)),
        _ => (0.0, Vec::new()),
    };
    Ok(Classification {
        case,
        active_sellers,
        eta,
    })
}

/// Solves the shadow-price equation of case 2 or 3.
pub fn solve_eta(case: Case, p: &LocalProblem) -> Result<(f64, Vec<NodeId>), SolverError> {
    Marginals::new(p, SolverOptions::default())?.solve_eta(case)
}

pub fn solve_local(p: &LocalProblem) -> Result<LocalSolution, SolverError> {
    solve_local_with(p, SolverOptions::default())
}

pub fn solve_local_with(p: &LocalProblem, opts: SolverOptions) -> Result<LocalSolution, SolverError> {
    let m = Marginals::new(p, opts)?;
    let (case, _) = m.classify()?;
    m.solve_as(case)
}

/// Evaluates the closed-form expressions of `case` regardless of whether its
/// conditions hold. Used to compare neighbouring cases on region boundaries.
pub fn solve_as_case(p: &LocalProblem, case: Case) -> Result<LocalSolution, SolverError> {
    Marginals::new(p, SolverOptions::default())?.solve_as(case)
}

fn check_feasible(p: &LocalProblem, s: &LocalSolution) -> Result<f64, SolverError> {
    if s.e_sell < -ENERGY_TOL || !s.e_sell.is_finite() {
        return Err(SolverError::Infeasible(format!("offered energy {}", s.e_sell)));
    }
    for b in &s.e_buy {
        if b.energy < -ENERGY_TOL || !b.energy.is_finite() {
            return Err(SolverError::Infeasible(format!(
                "purchase of {} from node {}",
                b.energy, b.seller
            )));
        }
        if b.energy > 0.0 && !p.sellers.iter().any(|sp| sp.node == b.seller) {
            return Err(SolverError::Infeasible(format!(
                "node {} is not connected to seller {}",
                p.node, b.seller
            )));
        }
    }
    let gen = p.demand + s.e_sell - s.total_bought();
    if gen < -ENERGY_TOL {
        return Err(SolverError::Infeasible(format!("negative generation {gen}")));
    }
    Ok(gen.max(0.0))
}

fn seller_price(p: &LocalProblem, node: NodeId) -> f64 {
    p.sellers
        .iter()
        .find(|s| s.node == node)
        .map_or(f64::INFINITY, |s| s.price)
}

/// Net expenditure of the microgrid: generation + transfer + purchase
/// payments - sale income.
pub fn net_expenditure(p: &LocalProblem, s: &LocalSolution) -> Result<f64, SolverError> {
    let gen = check_feasible(p, s)?;
    let mut total = p.gen_cost.value(gen)?;
    for b in &s.e_buy {
        let e = b.energy.max(0.0);
        if e > 0.0 {
            total += p.transfer_cost.value(e)? + seller_price(p, b.seller) * e;
        }
    }
    Ok(total - p.own_price * s.e_sell.max(0.0))
}

/// Largest violation of the optimality system at `s`, with the multipliers
/// rebuilt from the solution's case: stationarity in the offer and in each
/// purchase, multiplier signs, complementary slackness and primal
/// feasibility.
pub fn verify_kkt(p: &LocalProblem, s: &LocalSolution) -> Result<f64, SolverError> {
    let g0 = p.transfer_cost.marginal(0.0)?;
    let own = p.own_price;
    let bought = s.total_bought();
    let gen_raw = p.demand + s.e_sell - bought;
    let gen = gen_raw.max(0.0);
    let cg = p.gen_cost.marginal(gen)?;
    let cp0 = p.gen_cost.marginal(0.0)?;

    // (η, ω) by case; ν = λ_i + η is the node's marginal value of energy.
    let (eta, omega) = match s.case {
        // with no load the generation bound is the one that binds
        Case::SelfSufficient if gen <= 0.0 => (0.0, cp0 - own),
        Case::SelfSufficient => (cg - own, 0.0),
        Case::BuyOnly => (s.eta, cp0 - own - s.eta),
        Case::GenerateAndBuy => (s.eta, 0.0),
        Case::GenerateAndSell | Case::GenerateBuyAndSell => (0.0, 0.0),
        Case::BuyAndResell => (0.0, cp0 - own),
    };
    let mut worst: f64 = 0.0;
    let mut bump = |v: f64| {
        if v.is_nan() {
            worst = f64::INFINITY;
        } else {
            worst = worst.max(v.abs());
        }
    };

    // primal feasibility
    bump(gen_raw.min(0.0));
    bump(s.e_sell.min(0.0));
    // stationarity in the offer
    bump(cg - own - eta - omega);
    bump(eta.min(0.0));
    bump(omega.min(0.0));
    bump(eta * s.e_sell);
    bump(omega * gen);

    for b in &s.e_buy {
        let lam = seller_price(p, b.seller);
        bump(b.energy.min(0.0));
        let gp = p.transfer_cost.marginal(b.energy.max(0.0))?;
        if b.energy > 0.0 {
            // μ_j = 0
            bump(cg - gp - lam - omega);
        } else {
            let mu = -(cg - g0 - lam - omega);
            bump(mu.min(0.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_models::CubicTransfer;

    fn u12() -> CostModel {
        CostModel::u12()
    }

    fn gamma() -> CostModel {
        CostModel::unit_cubic()
    }

    fn problem<'a>(
        gen: &'a CostModel,
        tr: &'a CostModel,
        demand: f64,
        own: f64,
        sellers: &[f64],
    ) -> LocalProblem<'a> {
        LocalProblem {
            node: 0,
            demand,
            gen_cost: gen,
            transfer_cost: tr,
            sellers: sellers
                .iter()
                .enumerate()
                .map(|(k, &price)| SellerPrice { node: k + 1, price })
                .collect(),
            own_price: own,
        }
    }

    // Case-3 reference: with one active seller the balance gives
    // C'(g) = λ_j + γ'(E_c - g); bisect in g, a different unknown than η.
    fn case3_single_seller_oracle(demand: f64, own: f64, seller: f64) -> (f64, f64) {
        let c = SoftCappedQuadratic::U12;
        let t = CubicTransfer::UNIT;
        let f = |g: f64| c.marginal(g).unwrap() - seller - t.marginal(demand - g).unwrap();
        let (mut lo, mut hi) = (0.0, demand);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let g = 0.5 * (lo + hi);
        (c.marginal(g).unwrap() - own, demand - g)
    }

    use crate::cost_models::SoftCappedQuadratic;

    #[test]
    fn case1_example() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 4.0, 55.0, &[58.5]);
        assert_eq!(classify(&p).unwrap().case, Case::SelfSufficient);
        let s = solve_local(&p).unwrap();
        assert_eq!((s.e_gen, s.e_sell, s.total_bought()), (4.0, 0.0, 0.0));
        assert!(verify_kkt(&p, &s).unwrap() <= 1e-9);
    }

    #[test]
    fn case2_example() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 1.0, 50.0, &[52.0]);
        let c = classify(&p).unwrap();
        assert_eq!(c.case, Case::BuyOnly);
        assert!((c.eta - 6.0).abs() < 1e-10);
        assert_eq!(c.active_sellers, vec![1]);
        let s = solve_local(&p).unwrap();
        assert!((s.bought_from(1) - 1.0).abs() < 1e-10);
        assert_eq!(s.e_gen, 0.0);
    }

    #[test]
    fn case2_equal_prices_split_evenly() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 2.0, 50.0, &[52.0, 52.0]);
        let (eta, active) = solve_eta(Case::BuyOnly, &p).unwrap();
        assert!((eta - 6.0).abs() < 1e-10);
        assert_eq!(active, vec![1, 2]);
        let s = solve_local(&p).unwrap();
        assert_eq!(s.case, Case::BuyOnly);
        assert!((s.bought_from(1) - 1.0).abs() < 1e-10);
        assert!((s.bought_from(2) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn case3_example() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 4.0, 50.0, &[55.0]);
        let (eta_ref, buy_ref) = case3_single_seller_oracle(4.0, 50.0, 55.0);
        // frozen from an independent high-precision solve
        assert!((eta_ref - 8.581886136555587).abs() < 1e-9);
        let (eta, active) = solve_eta(Case::GenerateAndBuy, &p).unwrap();
        assert!((eta - eta_ref).abs() < 1e-9);
        assert_eq!(active, vec![1]);
        let s = solve_local(&p).unwrap();
        assert_eq!(s.case, Case::GenerateAndBuy);
        assert!((s.bought_from(1) - buy_ref).abs() < 1e-9);
        assert!((s.bought_from(1) - 0.928).abs() < 1e-3);
        assert!((s.e_gen - 3.072).abs() < 1e-3);
        assert_eq!(s.e_sell, 0.0);
        // past the activation breakpoint λ_j - λ_i + γ'(0) = 6
        assert!(eta > 6.0);
        // the shadow-price equation is met
        let resid = g.marginal(4.0 - s.bought_from(1)).unwrap() - (eta + 50.0);
        assert!(resid.abs() < 1e-8);
    }

    #[test]
    fn case4_example() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 4.0, 61.0, &[60.5, 60.5, 60.5]);
        let s = solve_local(&p).unwrap();
        assert_eq!(s.case, Case::GenerateAndSell);
        assert!((s.e_gen - 6.752865818891805).abs() < 1e-9);
        assert!((s.e_sell - 2.752865818891805).abs() < 1e-9);
        assert_eq!(s.total_bought(), 0.0);
    }

    #[test]
    fn case5_example() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 1.0, 56.0, &[43.0]);
        let s = solve_local(&p).unwrap();
        assert_eq!(s.case, Case::BuyAndResell);
        assert!((s.bought_from(1) - 2.0).abs() < 1e-12);
        assert!((s.e_sell - 1.0).abs() < 1e-12);
        assert_eq!(s.e_gen, 0.0);
        assert!((net_expenditure(&p, &s).unwrap() - 126.3852).abs() < 1e-9);
        assert!(verify_kkt(&p, &s).unwrap() <= 1e-9);
    }

    #[test]
    fn case6_example() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 1.0, 58.0, &[43.0]);
        let c = classify(&p).unwrap();
        assert_eq!(c.case, Case::GenerateBuyAndSell);
        assert_eq!(c.active_sellers, vec![1]);
        let s = solve_local(&p).unwrap();
        // χ(58) + Γ(15) - 1
        assert!((s.e_sell - 3.346604999347484).abs() < 1e-9);
        assert!((s.e_gen - 2.186358099878197).abs() < 1e-9);
    }

    #[test]
    fn net_expenditure_examples() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 4.0, 55.0, &[58.5]);
        let s = solve_local(&p).unwrap();
        assert!((net_expenditure(&p, &s).unwrap() - 317.8956).abs() < 1e-3);

        let p0 = problem(&g, &t, 0.0, 50.0, &[60.0]);
        let zero = LocalSolution {
            node: 0,
            case: Case::SelfSufficient,
            e_gen: 0.0,
            e_sell: 0.0,
            e_buy: vec![Purchase { seller: 1, energy: 0.0 }],
            active_sellers: vec![],
            eta: 0.0,
        };
        assert_eq!(net_expenditure(&p0, &zero).unwrap(), 86.3852);
    }

    #[test]
    fn net_expenditure_rejects_infeasible() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 1.0, 56.0, &[43.0]);
        let mut s = solve_local(&p).unwrap();
        s.e_buy[0].energy += 5.0; // more than it can absorb without generating below zero
        assert!(matches!(net_expenditure(&p, &s), Err(SolverError::Infeasible(_))));
        let mut s = solve_local(&p).unwrap();
        s.e_buy.push(Purchase { seller: 7, energy: 1.0 });
        assert!(matches!(net_expenditure(&p, &s), Err(SolverError::Infeasible(_))));
    }

    #[test]
    fn kkt_flags_perturbed_purchase() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 1.0, 56.0, &[43.0]);
        let mut s = solve_local(&p).unwrap();
        s.e_buy[0].energy += 0.1;
        s.e_sell += 0.1;
        assert!(verify_kkt(&p, &s).unwrap() > 1e-3);
    }

    #[test]
    fn zero_demand_never_uses_shadow_cases() {
        let (g, t) = (u12(), gamma());
        for own in [40.0, 50.0, 56.0, 56.564, 57.0, 70.0] {
            for lam in [40.0, 50.0, 55.0, 60.0, 80.0] {
                let p = problem(&g, &t, 0.0, own, &[lam]);
                let c = classify(&p).unwrap();
                assert!(!matches!(c.case, Case::BuyOnly | Case::GenerateAndBuy));
                if own <= 56.564 && lam >= own - 1.0 {
                    assert_eq!(c.case, Case::SelfSufficient, "own={own} lam={lam}");
                }
            }
        }
    }

    #[test]
    fn isolated_node_only_self_supplies_or_sells() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, 5.0, 50.0, &[]);
        assert_eq!(solve_local(&p).unwrap().case, Case::SelfSufficient);
        let p = problem(&g, &t, 5.0, 70.0, &[]);
        let s = solve_local(&p).unwrap();
        assert_eq!(s.case, Case::GenerateAndSell);
        assert!((g.marginal(s.e_gen).unwrap() - 70.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_problems() {
        let (g, t) = (u12(), gamma());
        let p = problem(&g, &t, -1.0, 50.0, &[52.0]);
        assert!(matches!(solve_local(&p), Err(SolverError::InvalidProblem(_))));
        let p = problem(&g, &t, 1.0, f64::NAN, &[52.0]);
        assert!(matches!(solve_local(&p), Err(SolverError::InvalidProblem(_))));
        let p = problem(&g, &t, 1.0, 50.0, &[f64::INFINITY]);
        assert!(matches!(classify(&p), Err(SolverError::InvalidProblem(_))));
        let p = problem(&g, &t, 1.0, 50.0, &[52.0]);
        assert!(solve_eta(Case::GenerateAndSell, &p).is_err());
    }

    #[test]
    fn case_ids_roundtrip() {
        for c in Case::ALL {
            assert_eq!(Case::from_id(c.id()), Some(c));
        }
        assert_eq!(Case::from_id(0), None);
        assert_eq!(Case::from_id(7), None);
    }
}
