use gridclear_core::local_solver::{
    case_conditions, classify, net_expenditure, solve_as_case, solve_local, verify_kkt, SellerPrice,
};
use gridclear_core::oracle::solve_local_numeric;
use gridclear_core::{Case, CostFunction, CostModel, LocalProblem, LocalSolution};
use proptest::prelude::*;

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

fn energies(s: &LocalSolution) -> Vec<f64> {
    let mut v = vec![s.e_gen, s.e_sell];
    v.extend(s.e_buy.iter().map(|b| b.energy));
    v
}

fn instance() -> impl Strategy<Value = (f64, f64, Vec<f64>)> {
    (0.5..11.0f64, 40.0..80.0f64, prop::collection::vec(40.0..80.0f64, 1..=3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn solution_is_feasible_and_optimal((demand, own, sellers) in instance()) {
        let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
        let p = problem(&g, &t, demand, own, &sellers);
        let s = solve_local(&p).unwrap();
        let residual = s.e_gen - (demand + s.e_sell - s.total_bought());
        prop_assert!(residual.abs() <= 1e-9);
        prop_assert!(energies(&s).iter().all(|&e| e >= 0.0));
        prop_assert!(verify_kkt(&p, &s).unwrap() <= 1e-6);

        let f = net_expenditure(&p, &s).unwrap();
        let o = solve_local_numeric(&p).unwrap();
        prop_assert!((f - o.objective).abs() <= 1e-6 * (1.0 + f.abs()), "{} vs {}", f, o.objective);
    }

    #[test]
    fn exactly_one_case_away_from_boundaries((demand, own, sellers) in instance()) {
        let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
        let p = problem(&g, &t, demand, own, &sellers);
        let c = case_conditions(&p).unwrap();
        prop_assert!(c.count() >= 1);
        if !c.near_boundary(1e-7) {
            prop_assert_eq!(c.count(), 1);
        }
    }

    #[test]
    fn offer_grows_with_own_price((demand, own, sellers) in instance(), bump in 0.0..5.0f64) {
        let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
        let lo = solve_local(&problem(&g, &t, demand, own, &sellers)).unwrap();
        let hi = solve_local(&problem(&g, &t, demand, own + bump, &sellers)).unwrap();
        prop_assert!(hi.e_sell >= lo.e_sell - 1e-9);
    }

    #[test]
    fn purchase_shrinks_with_seller_price((demand, own, sellers) in instance(), bump in 0.0..5.0f64) {
        let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
        let lo = solve_local(&problem(&g, &t, demand, own, &sellers)).unwrap();
        let mut dearer = sellers.clone();
        dearer[0] += bump;
        let hi = solve_local(&problem(&g, &t, demand, own, &dearer)).unwrap();
        prop_assert!(hi.e_buy[0].energy <= lo.e_buy[0].energy + 1e-9);
    }

    #[test]
    fn zero_load_never_uses_shadow_price_cases(own in 40.0..80.0f64, sellers in prop::collection::vec(40.0..80.0f64, 1..=3)) {
        let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
        let s = solve_local(&problem(&g, &t, 0.0, own, &sellers)).unwrap();
        prop_assert!(!matches!(s.case, Case::BuyOnly | Case::GenerateAndBuy));
        prop_assert!(verify_kkt(&problem(&g, &t, 0.0, own, &sellers), &s).unwrap() <= 1e-6);
    }
}

/// Walks the own price across [40, 80] and checks every case switch by
/// bisection: the two cases must agree on the energies where they meet.
#[test]
fn case_switches_are_continuous() {
    let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
    let mut switches = 0;
    for demand in [0.0, 1.0, 4.0, 8.0, 10.8] {
        for sellers in [vec![50.0], vec![45.0, 62.0], vec![58.0, 61.0, 77.0]] {
            let case_at = |own: f64| classify(&problem(&g, &t, demand, own, &sellers)).unwrap().case;
            let mut prev = 40.0;
            for k in 1..=160 {
                let next = 40.0 + 0.25 * k as f64;
                let (a, b) = (case_at(prev), case_at(next));
                if a != b {
                    let (mut lo, mut hi) = (prev, next);
                    while hi - lo > 1e-13 {
                        let mid = 0.5 * (lo + hi);
                        if case_at(mid) == a {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let below = solve_as_case(&problem(&g, &t, demand, lo, &sellers), a).unwrap();
                    let above = solve_as_case(&problem(&g, &t, demand, hi, &sellers), case_at(hi)).unwrap();
                    let gap = energies(&below)
                        .iter()
                        .zip(energies(&above))
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                    assert!(gap <= 1e-5, "E_c={demand} sellers={sellers:?} {a}->{b} at {lo}: {gap:e}");
                    switches += 1;
                }
                prev = next;
            }
        }
    }
    assert!(switches >= 10, "only {switches} switches exercised");
}

#[test]
fn every_case_is_reachable() {
    let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
    let cases = [
        problem(&g, &t, 4.0, 55.0, &[58.5]),
        problem(&g, &t, 4.0, 45.0, &[40.0, 41.0]),
        problem(&g, &t, 4.0, 50.0, &[55.0]),
        problem(&g, &t, 4.0, 61.0, &[60.5]),
        problem(&g, &t, 1.0, 56.0, &[43.0]),
        problem(&g, &t, 1.0, 58.0, &[43.0]),
    ];
    for (want, p) in Case::ALL.iter().zip(&cases) {
        assert_eq!(solve_local(p).unwrap().case, *want);
    }
}

#[test]
fn sellers_match_marginal_cost() {
    let (g, t) = (CostModel::u12(), CostModel::unit_cubic());
    for p in [problem(&g, &t, 4.0, 61.0, &[60.5]), problem(&g, &t, 1.0, 58.0, &[43.0])] {
        let s = solve_local(&p).unwrap();
        assert!(s.case.sells());
        let mc = g.marginal(s.e_gen).unwrap();
        assert!((mc - p.own_price).abs() < 1e-9);
    }
}
