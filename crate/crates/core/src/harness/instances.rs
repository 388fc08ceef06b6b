//! Seeded random instances for property checks.

use rand::Rng;

use crate::cost_models::CostModel;
use crate::local_solver::{LocalProblem, SellerPrice};
use crate::market::Scenario;
use crate::topology::{Topology, TopologyKind};

pub const PRICE_RANGE: (f64, f64) = (40.0, 80.0);
pub const LOCAL_LOAD_RANGE: (f64, f64) = (0.5, 11.0);
pub const SCENARIO_LOAD_RANGE: (f64, f64) = (1.0, 11.0);

/// Owned data of a local subproblem with sellers numbered `1..=n`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LocalInstance {
    pub demand: f64,
    pub own_price: f64,
    pub seller_prices: Vec<f64>,
}

impl LocalInstance {
    pub fn problem<'a>(&self, gen: &'a CostModel, transfer: &'a CostModel) -> LocalProblem<'a> {
        LocalProblem {
            node: 0,
            demand: self.demand,
            gen_cost: gen,
            transfer_cost: transfer,
            sellers: self
                .seller_prices
                .iter()
                .enumerate()
                .map(|(k, &price)| SellerPrice { node: k + 1, price })
                .collect(),
            own_price: self.own_price,
        }
    }
}

/// Prices uniform over [`PRICE_RANGE`], load uniform over
/// [`LOCAL_LOAD_RANGE`], one to three sellers.
pub fn random_local_instance<R: Rng>(rng: &mut R) -> LocalInstance {
    let n = rng.gen_range(1..=3);
    LocalInstance {
        demand: rng.gen_range(LOCAL_LOAD_RANGE.0..LOCAL_LOAD_RANGE.1),
        own_price: rng.gen_range(PRICE_RANGE.0..PRICE_RANGE.1),
        seller_prices: (0..n)
            .map(|_| rng.gen_range(PRICE_RANGE.0..PRICE_RANGE.1))
            .collect(),
    }
}

pub const KINDS: [TopologyKind; 3] = [TopologyKind::Full, TopologyKind::Ring, TopologyKind::Line];

/// Default-cost scenario with two to four nodes, a random canonical
/// topology and loads uniform over [`SCENARIO_LOAD_RANGE`].
pub fn random_scenario<R: Rng>(rng: &mut R) -> Scenario {
    let m = rng.gen_range(2..=4);
    let kind = KINDS[rng.gen_range(0..KINDS.len())];
    random_scenario_with(rng, m, kind)
}

/// Default-cost scenario of the given shape with random loads.
pub fn random_scenario_with<R: Rng>(rng: &mut R, m: usize, kind: TopologyKind) -> Scenario {
    let demands = (0..m)
        .map(|_| rng.gen_range(SCENARIO_LOAD_RANGE.0..SCENARIO_LOAD_RANGE.1))
        .collect();
    Scenario::new(Topology::build(kind, m).expect("m >= 1"), demands).expect("valid by construction")
}
