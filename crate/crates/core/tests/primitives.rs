use std::time::Duration;

use gridclear_core::transport::{decode, encode, loopback_network, Exchanger, Message, MessageKind, TransportError};
use gridclear_core::{CostFunction, CostModel, CubicTransfer, SoftCappedQuadratic, Topology, TopologyKind};
use proptest::prelude::*;

fn u12() -> SoftCappedQuadratic {
    SoftCappedQuadratic::U12
}

proptest! {
    #[test]
    fn generator_inverse_roundtrip(x in 0.0..10.5f64) {
        let c = u12();
        prop_assert!((c.inverse_marginal(c.marginal(x).unwrap()).unwrap() - x).abs() <= 1e-6);
    }

    #[test]
    fn transfer_inverse_roundtrip(x in 0.0..20.0f64, lin in 0.1..5.0f64, cub in 0.1..5.0f64) {
        let t = CubicTransfer { lin, cub };
        prop_assert!((t.inverse_marginal(t.marginal(x).unwrap()).unwrap() - x).abs() <= 1e-6);
    }

    #[test]
    fn marginals_are_increasing(x in 0.0..10.8f64, dx in 1e-3..1.0f64) {
        let c = u12();
        prop_assert!(c.marginal(x + dx).unwrap() > c.marginal(x).unwrap());
        let t = CubicTransfer::UNIT;
        prop_assert!(t.marginal(x + dx).unwrap() > t.marginal(x).unwrap());
    }

    #[test]
    fn marginal_matches_difference_quotient(x in 0.1..9.9f64) {
        let h = 1e-5;
        for c in [CostModel::u12(), CostModel::unit_cubic()] {
            let fd = (c.value(x + h).unwrap() - c.value(x - h).unwrap()) / (2.0 * h);
            prop_assert!((c.marginal(x).unwrap() - fd).abs() <= 1e-4);
        }
    }

    #[test]
    fn frames_roundtrip(round in any::<u32>(), from in any::<u16>(), to in any::<u16>(), bid in any::<bool>(), value in 0.0..1e6f64) {
        let m = if bid { Message::bid(round, from.into(), to.into(), value) } else { Message::price(round, from.into(), to.into(), value) };
        let bytes = encode(&m).unwrap();
        prop_assert_eq!(bytes[12], if bid { 2 } else { 1 });
        prop_assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn adjacency_views_agree(kind in prop::sample::select(vec![TopologyKind::Full, TopologyKind::Ring, TopologyKind::Line]), m in 1usize..8) {
        let t = Topology::build(kind, m).unwrap();
        prop_assert!(t.is_symmetric());
        for i in 0..m {
            prop_assert!(!t.connected(i, i));
            for j in t.in_sellers(i).unwrap() {
                prop_assert!(t.out_buyers(j).unwrap().contains(&i));
            }
        }
        prop_assert_eq!(t.edges().count(), t.edge_count());
    }
}

#[test]
fn u12_reference_values() {
    let c = u12();
    assert!((c.value(5.0).unwrap() - 377.4152000149).abs() < 1e-9);
    assert!((c.marginal(11.0).unwrap() - 1620.619014821651).abs() < 1e-9);
    assert!((c.marginal(8.0).unwrap() - 61.93183051706637).abs() < 1e-11);
}

#[test]
fn canonical_edge_counts() {
    assert_eq!(Topology::build(TopologyKind::Full, 4).unwrap().edge_count(), 12);
    assert_eq!(Topology::build(TopologyKind::Ring, 4).unwrap().edge_count(), 8);
    assert_eq!(Topology::build(TopologyKind::Line, 4).unwrap().edge_count(), 6);
}

#[test]
fn exchanger_rejects_stale_and_duplicate_messages() {
    let t = Topology::build(TopologyKind::Line, 2).unwrap();
    let mut net = loopback_network(2);
    let b = net.pop().unwrap();
    let a = net.pop().unwrap();
    let mut xa = Exchanger::new(0, a, &t, Duration::from_millis(200));
    let mut xb = Exchanger::new(1, b, &t, Duration::from_millis(200));

    xb.send(&[Message::price(0, 1, 0, 60.0), Message::price(1, 1, 0, 61.0)]).unwrap();
    assert_eq!(xa.collect(0, MessageKind::Price).unwrap()[0].value, 60.0);
    // round 1 was buffered early and is delivered in order
    assert_eq!(xa.collect(1, MessageKind::Price).unwrap()[0].value, 61.0);

    xb.send(&[Message::price(0, 1, 0, 60.0)]).unwrap();
    assert!(matches!(xa.collect(2, MessageKind::Price), Err(TransportError::Protocol { .. })));

    // a repeated bid surfaces as soon as the next phase reads it
    xb.send(&[Message::bid(3, 1, 0, 1.0), Message::bid(3, 1, 0, 1.0)]).unwrap();
    assert_eq!(xa.collect(3, MessageKind::Bid).unwrap().len(), 1);
    assert!(matches!(xa.collect(4, MessageKind::Price), Err(TransportError::Protocol { .. })));
}

#[test]
fn exchanger_times_out_naming_the_missing_peer() {
    let t = Topology::build(TopologyKind::Line, 2).unwrap();
    let mut net = loopback_network(2);
    let _b = net.pop().unwrap();
    let mut xa = Exchanger::new(0, net.pop().unwrap(), &t, Duration::from_millis(50));
    match xa.collect(0, MessageKind::Price) {
        Err(TransportError::Timeout { missing, .. }) => assert_eq!(missing, vec![1]),
        other => panic!("{other:?}"),
    }
}
