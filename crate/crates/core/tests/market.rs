use std::time::Duration;

use gridclear_core::harness::experiments::{run_sweep, write_sweep_csv};
use gridclear_core::harness::instances::random_scenario;
use gridclear_core::harness::SweepSpec;
use gridclear_core::market::{self, dual_value, write_trace_csv, Scenario, StepSchedule};
use gridclear_core::{Case, CostFunction, Topology, TopologyKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(kind: TopologyKind, demands: &[f64]) -> Scenario {
    Scenario::new(Topology::build(kind, demands.len()).unwrap(), demands.to_vec()).unwrap()
}

#[test]
fn four_node_full_converges_with_expected_ordering() {
    let s = scenario(TopologyKind::Full, &[8.0, 11.0, 11.0, 6.0]);
    let out = market::run(&s).unwrap();
    assert!(out.converged);
    let last = out.last();
    assert!(last.relative_gap() <= 1e-3 && last.max_mismatch() <= 1e-3);
    let p = &out.prices;
    assert!(p[3] < p[0] && p[0] < p[1], "{p:?}");
    assert!((p[1] - p[2]).abs() <= 1e-3);
}

#[test]
fn equal_loads_do_not_trade() {
    let out = market::run(&scenario(TopologyKind::Full, &[11.0; 4])).unwrap();
    assert!(out.converged);
    assert!(out.trades.iter().flatten().all(|&e| e <= 1e-3));
}

#[test]
fn ring_has_an_intermediary() {
    let out = market::run(&scenario(TopologyKind::Ring, &[11.0, 11.0, 11.0, 1.0])).unwrap();
    assert!(out.converged);
    let relays = out.solutions[1..3]
        .iter()
        .filter(|s| s.case == Case::GenerateBuyAndSell && s.e_sell > 0.01 && s.total_bought() > 0.01)
        .count();
    assert!(relays >= 1);
}

#[test]
fn runs_are_bit_reproducible() {
    let s = scenario(TopologyKind::Line, &[3.0, 9.0, 6.5]);
    let csv = |s: &Scenario| {
        let out = market::run(s).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&out.trace, s.m(), &mut buf).unwrap();
        buf
    };
    assert_eq!(csv(&s), csv(&s));
}

#[test]
fn tcp_trace_matches_loopback() {
    let s = scenario(TopologyKind::Ring, &[8.0, 11.0, 11.0, 6.0]);
    let a = market::run(&s).unwrap();
    let b = market::run_tcp(&s, None, Duration::from_secs(10)).unwrap();
    assert_eq!(a.trace.rows.len(), b.trace.rows.len());
    for (x, y) in a.trace.rows.iter().zip(&b.trace.rows) {
        assert_eq!(x.prices, y.prices);
        assert_eq!(x.bids, y.bids);
        assert_eq!(x.dual.to_bits(), y.dual.to_bits());
    }
    assert_eq!(a.prices, b.prices);
}

#[test]
fn reversed_price_update_does_not_converge() {
    let mut s = scenario(TopologyKind::Full, &[8.0, 11.0, 11.0, 6.0]);
    s.max_iters = 2000;
    s.fault = gridclear_core::Fault::PriceUpdateSign;
    assert!(!market::run(&s).unwrap().converged);
}

#[test]
fn sweep_has_one_row_per_node_and_point() {
    let mut s = scenario(TopologyKind::Line, &[11.0; 4]);
    s.step = StepSchedule { alpha0: 5.0, kappa: 1000.0 };
    let spec = SweepSpec { node: 3, values: vec![1.0, 2.0, 3.0, 11.0] };
    let rows = run_sweep(&s, &spec).unwrap();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.converged));
    assert!(rows.iter().all(|r| r.local_cost <= r.disconnected_cost + 1e-6));
    // the middle of the line gains most when the end node is lightly loaded
    for point in rows.chunks(4).take(3) {
        assert!(point[2].benefit() > point[0].benefit());
        assert!(point[2].benefit() > point[1].benefit());
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_sweep_csv(&rows, &mut a).unwrap();
    write_sweep_csv(&run_sweep(&s, &spec).unwrap(), &mut b).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dual_bounds_and_subgradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = random_scenario(&mut rng);
        s.max_iters = 400;
        let out = market::run(&s).unwrap();
        let mut best = f64::NEG_INFINITY;
        for r in &out.trace.rows {
            prop_assert!(r.dual <= r.primal + 1e-9);
            prop_assert!(r.best_dual >= best);
            best = r.best_dual;
        }
        let rows = &out.trace.rows;
        for (a, b) in rows.iter().zip(rows.iter().rev()).take(20) {
            let lin: f64 = a.subgradient.iter().zip(&b.prices).zip(&a.prices).map(|((g, x), y)| g * (x - y)).sum();
            prop_assert!(dual_value(&b.prices, &s).unwrap() <= a.dual + lin + 1e-6);
        }
    }

    #[test]
    fn converged_nodes_never_lose(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_scenario(&mut rng);
        let out = market::run(&s).unwrap();
        prop_assume!(out.converged);
        for i in 0..s.m() {
            let alone = s.gen_costs[i].value(s.demands[i]).unwrap() + s.transfer_cost.value(0.0).unwrap();
            prop_assert!(out.net_expenditures[i] <= alone + 1e-6);
        }
    }
}
