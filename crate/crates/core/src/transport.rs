//! Round-synchronous message passing between microgrid agents.
//!
//! Every round has two phases: each node first sends its price to the nodes
//! that may buy from it, then sends its bids to the nodes it may buy from.
//! An [`Exchanger`] wraps an [`Endpoint`] and blocks until every message a
//! node expects in the current phase has arrived, buffering early arrivals
//! from faster peers.
//!
//! Wire frame (little-endian, 21 bytes):
//!
//! ```text
//! len:u32 (=17) | round:u32 | from:u16 | to:u16 | kind:u8 | value:f64
//! ```

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::topology::{NodeId, Topology};

pub const FRAME_LEN: usize = 21;
const BODY_LEN: u32 = 17;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("malformed frame: {0}")]
    Decode(String),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("node {node}, round {round}: protocol error: {detail}")]
    Protocol {
        node: NodeId,
        round: u32,
        detail: String,
    },
    #[error("node {node}: timed out after {waited:?} in round {round} waiting for {kind:?} from {missing:?}")]
    Timeout {
        node: NodeId,
        round: u32,
        kind: MessageKind,
        missing: Vec<NodeId>,
        waited: Duration,
    },
    #[error("node {node}: all peers disconnected")]
    Disconnected { node: NodeId },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Price = 1,
    Bid = 2,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(MessageKind::Price),
            2 => Some(MessageKind::Bid),
            _ => None,
        }
    }
}

/// A price announcement (`value` = sender's price) or a bid (`value` = MWh
/// the sender wants to buy from the receiver).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub round: u32,
    pub from: u16,
    pub to: u16,
    pub kind: MessageKind,
    pub value: f64,
}

impl Message {
    pub fn price(round: u32, from: NodeId, to: NodeId, value: f64) -> Self {
        Message {
            round,
            from: from as u16,
            to: to as u16,
            kind: MessageKind::Price,
            value,
        }
    }

    pub fn bid(round: u32, from: NodeId, to: NodeId, value: f64) -> Self {
        Message {
            round,
            from: from as u16,
            to: to as u16,
            kind: MessageKind::Bid,
            value,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if !self.value.is_finite() {
            return Err(TransportError::InvalidMessage(format!(
                "non-finite value {} from {}",
                self.value, self.from
            )));
        }
        if self.kind == MessageKind::Bid && self.value < 0.0 {
            return Err(TransportError::InvalidMessage(format!(
                "negative bid {} from {}",
                self.value, self.from
            )));
        }
        Ok(())
    }
}

pub fn encode(m: &Message) -> Result<[u8; FRAME_LEN], TransportError> {
    m.validate()?;
    let mut buf = [0u8; FRAME_LEN];
    buf[0..4].copy_from_slice(&BODY_LEN.to_le_bytes());
    buf[4..8].copy_from_slice(&m.round.to_le_bytes());
    buf[8..10].copy_from_slice(&m.from.to_le_bytes());
    buf[10..12].copy_from_slice(&m.to.to_le_bytes());
    buf[12] = m.kind as u8;
    buf[13..21].copy_from_slice(&m.value.to_le_bytes());
    Ok(buf)
}

pub fn decode(buf: &[u8]) -> Result<Message, TransportError> {
    if buf.len() != FRAME_LEN {
        return Err(TransportError::Decode(format!(
            "expected {FRAME_LEN} bytes, got {}",
            buf.len()
        )));
    }
    let len = u32::from_le_bytes(buf[0..4].try_into().unwrap());
    if len != BODY_LEN {
        return Err(TransportError::Decode(format!("length field {len}, expected {BODY_LEN}")));
    }
    let kind = MessageKind::from_byte(buf[12])
        .ok_or_else(|| TransportError::Decode(format!("unknown kind byte {}", buf[12])))?;
    let m = Message {
        round: u32::from_le_bytes(buf[4..8].try_into().unwrap()),
        from: u16::from_le_bytes(buf[8..10].try_into().unwrap()),
        to: u16::from_le_bytes(buf[10..12].try_into().unwrap()),
        kind,
        value: f64::from_le_bytes(buf[13..21].try_into().unwrap()),
    };
    m.validate()?;
    Ok(m)
}

/// One node's connection to the rest of the network.
pub trait Endpoint: Send {
    fn send(&mut self, m: &Message) -> Result<(), TransportError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError>;
}

/// In-process endpoint backed by channels.
pub struct LoopbackEndpoint {
    node: NodeId,
    peers: Vec<Sender<Message>>,
    inbox: Receiver<Message>,
}

/// Creates `m` connected loopback endpoints.
pub fn loopback_network(m: usize) -> Vec<LoopbackEndpoint> {
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..m).map(|_| mpsc::channel()).unzip();
    receivers
        .into_iter()
        .enumerate()
        .map(|(node, inbox)| LoopbackEndpoint {
            node,
            peers: senders.clone(),
            inbox,
        })
        .collect()
}

impl Endpoint for LoopbackEndpoint {
    fn send(&mut self, m: &Message) -> Result<(), TransportError> {
        m.validate()?;
        let peer = self.peers.get(m.to as usize).ok_or_else(|| {
            TransportError::InvalidMessage(format!("no such node {}", m.to))
        })?;
        peer.send(*m)
            .map_err(|_| TransportError::Disconnected { node: self.node })
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        self.inbox.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout {
                node: self.node,
                round: 0,
                kind: MessageKind::Price,
                missing: Vec::new(),
                waited: timeout,
            },
            RecvTimeoutError::Disconnected => TransportError::Disconnected { node: self.node },
        })
    }
}

/// Socket endpoint: a send-only stream to every neighbour and a reader
/// thread per accepted incoming stream.
pub struct TcpEndpoint {
    node: NodeId,
    outgoing: Vec<(NodeId, TcpStream)>,
    inbox: Receiver<Result<Message, TransportError>>,
}

impl TcpEndpoint {
    /// Connects node `node` to its topology neighbours. `listener` must
    /// already be bound to `addrs[node]`; peers are retried until `timeout`.
    pub fn connect(
        node: NodeId,
        listener: TcpListener,
        addrs: &[SocketAddr],
        topology: &Topology,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let peers = topology
            .neighbors(node)
            .map_err(|e| TransportError::InvalidMessage(e.to_string()))?;
        if addrs.len() != topology.m() {
            return Err(TransportError::InvalidMessage(format!(
                "{} addresses for {} nodes",
                addrs.len(),
                topology.m()
            )));
        }
        let (tx, inbox) = mpsc::channel();
        let expected_incoming = peers.len();
        thread::spawn(move || accept_loop(listener, expected_incoming, tx));

        let deadline = Instant::now() + timeout;
        let mut outgoing = Vec::with_capacity(peers.len());
        for &peer in &peers {
            let stream = connect_with_retry(addrs[peer], deadline)?;
            stream.set_nodelay(true)?;
            outgoing.push((peer, stream));
        }
        Ok(TcpEndpoint {
            node,
            outgoing,
            inbox,
        })
    }
}

fn connect_with_retry(addr: SocketAddr, deadline: Instant) -> Result<TcpStream, TransportError> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(TransportError::Io(e)),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn accept_loop(listener: TcpListener, expected: usize, tx: Sender<Result<Message, TransportError>>) {
    for _ in 0..expected {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                thread::spawn(move || read_frames(stream, tx));
            }
            Err(e) => {
                let _ = tx.send(Err(TransportError::Io(e)));
                return;
            }
        }
    }
}

fn read_frames(mut stream: TcpStream, tx: Sender<Result<Message, TransportError>>) {
    let mut buf = [0u8; FRAME_LEN];
    loop {
        match stream.read_exact(&mut buf) {
            Ok(()) => {
                if tx.send(decode(&buf)).is_err() {
                    return;
                }
            }
            // A closed stream is only a problem if messages are still
            // expected, which the receiver notices through its timeout.
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return,
            Err(e) => {
                let _ = tx.send(Err(TransportError::Io(e)));
                return;
            }
        }
    }
}

impl Endpoint for TcpEndpoint {
    fn send(&mut self, m: &Message) -> Result<(), TransportError> {
        let frame = encode(m)?;
        let stream = self
            .outgoing
            .iter_mut()
            .find(|(p, _)| *p == m.to as usize)
            .map(|(_, s)| s)
            .ok_or_else(|| {
                TransportError::InvalidMessage(format!(
                    "node {} has no link to {}",
                    self.node, m.to
                ))
            })?;
        stream.write_all(&frame)?;
        Ok(())
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        match self.inbox.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout {
                node: self.node,
                round: 0,
                kind: MessageKind::Price,
                missing: Vec::new(),
                waited: timeout,
            }),
            Err(RecvTimeoutError::Disconnected) => {
                Err(TransportError::Disconnected { node: self.node })
            }
        }
    }
}

/// Phase-aware wrapper enforcing the round protocol for one node.
pub struct Exchanger<E> {
    node: NodeId,
    endpoint: E,
    price_from: Vec<NodeId>,
    bid_from: Vec<NodeId>,
    pending: Vec<Message>,
    timeout: Duration,
}

impl<E: Endpoint> Exchanger<E> {
    pub fn new(node: NodeId, endpoint: E, topology: &Topology, timeout: Duration) -> Self {
        Exchanger {
            node,
            endpoint,
            price_from: topology.in_sellers(node).unwrap_or_default(),
            bid_from: topology.out_buyers(node).unwrap_or_default(),
            pending: Vec::new(),
            timeout,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn expected_senders(&self, kind: MessageKind) -> &[NodeId] {
        match kind {
            MessageKind::Price => &self.price_from,
            MessageKind::Bid => &self.bid_from,
        }
    }

    pub fn send(&mut self, outbox: &[Message]) -> Result<(), TransportError> {
        for m in outbox {
            if m.from as usize != self.node {
                return Err(TransportError::InvalidMessage(format!(
                    "node {} cannot send on behalf of {}",
                    self.node, m.from
                )));
            }
            self.endpoint.send(m)?;
        }
        Ok(())
    }

    /// Blocks until one message of `kind` for `round` arrived from every
    /// expected sender. Returned messages are ordered by sender.
    pub fn collect(&mut self, round: u32, kind: MessageKind) -> Result<Vec<Message>, TransportError> {
        let expected = self.expected_senders(kind).to_vec();
        let mut got: Vec<Message> = Vec::with_capacity(expected.len());
        let protocol = |detail: String| TransportError::Protocol {
            node: self.node,
            round,
            detail,
        };

        let mut i = 0;
        while i < self.pending.len() {
            let m = self.pending[i];
            if m.round == round && m.kind == kind {
                self.pending.swap_remove(i);
                accept(&mut got, m, &expected).map_err(protocol)?;
            } else {
                i += 1;
            }
        }

        let start = Instant::now();
        while got.len() < expected.len() {
            let left = self.timeout.saturating_sub(start.elapsed());
            let m = match self.endpoint.recv_timeout(left) {
                Ok(m) => m,
                Err(TransportError::Timeout { .. }) => {
                    let missing = expected
                        .iter()
                        .copied()
                        .filter(|&e| !got.iter().any(|g| g.from as usize == e))
                        .collect();
                    return Err(TransportError::Timeout {
                        node: self.node,
                        round,
                        kind,
                        missing,
                        waited: start.elapsed(),
                    });
                }
                Err(e) => return Err(e),
            };
            if m.to as usize != self.node {
                return Err(protocol(format!("received message addressed to {}", m.to)));
            }
            let stale = m.round < round || (m.round == round && m.kind == MessageKind::Price && kind == MessageKind::Bid);
            if stale {
                return Err(protocol(format!(
                    "stale {:?} for round {} from {}",
                    m.kind, m.round, m.from
                )));
            }
            if m.round == round && m.kind == kind {
                accept(&mut got, m, &expected).map_err(protocol)?;
            } else {
                self.pending.push(m);
            }
        }
        got.sort_by_key(|m| m.from);
        Ok(got)
    }

    pub fn exchange_phase(
        &mut self,
        round: u32,
        kind: MessageKind,
        outbox: &[Message],
    ) -> Result<Vec<Message>, TransportError> {
        for m in outbox {
            if m.round != round || m.kind != kind {
                return Err(TransportError::Protocol {
                    node: self.node,
                    round,
                    detail: format!("outbox holds {:?} for round {}", m.kind, m.round),
                });
            }
        }
        self.send(outbox)?;
        self.collect(round, kind)
    }
}

fn accept(got: &mut Vec<Message>, m: Message, expected: &[NodeId]) -> Result<(), String> {
    if !expected.contains(&(m.from as usize)) {
        return Err(format!("unexpected {:?} from {}", m.kind, m.from));
    }
    if got.iter().any(|g| g.from == m.from) {
        return Err(format!("duplicate {:?} from {}", m.kind, m.from));
    }
    got.push(m);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::TopologyKind;
    use proptest::prelude::*;

    #[test]
    fn frame_layout() {
        let f = encode(&Message::price(0, 0, 1, 0.0)).unwrap();
        assert_eq!(f.len(), 21);
        assert_eq!(&f[0..4], &[0x11, 0, 0, 0]);
        assert_eq!(f[12], 1);
        assert!(f[13..].iter().all(|&b| b == 0));
        let f = encode(&Message::bid(7, 3, 2, 1.5)).unwrap();
        assert_eq!(f[12], 2);
        assert_eq!(&f[4..8], &[7, 0, 0, 0]);
        assert_eq!(&f[8..10], &[3, 0]);
        assert_eq!(&f[10..12], &[2, 0]);
    }

    #[test]
    fn rejects_bad_frames() {
        let mut f = encode(&Message::price(0, 0, 1, 2.0)).unwrap();
        f[12] = 9;
        assert!(matches!(decode(&f), Err(TransportError::Decode(_))));
        let mut f = encode(&Message::price(0, 0, 1, 2.0)).unwrap();
        f[0] = 16;
        assert!(matches!(decode(&f), Err(TransportError::Decode(_))));
        assert!(decode(&f[..20]).is_err());
        assert!(encode(&Message::bid(0, 0, 1, -1.0)).is_err());
        assert!(encode(&Message::price(0, 0, 1, f64::NAN)).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(round in any::<u32>(), from in any::<u16>(), to in any::<u16>(),
                     is_bid in any::<bool>(), value in 0.0f64..1e6) {
            let m = Message {
                round, from, to,
                kind: if is_bid { MessageKind::Bid } else { MessageKind::Price },
                value: if is_bid { value } else { value - 5e5 },
            };
            prop_assert_eq!(decode(&encode(&m).unwrap()).unwrap(), m);
        }
    }

    fn lockstep_counts(kind: TopologyKind) -> (usize, usize) {
        let t = Topology::build(kind, 4).unwrap();
        let mut ex: Vec<_> = loopback_network(4)
            .into_iter()
            .enumerate()
            .map(|(i, e)| Exchanger::new(i, e, &t, Duration::from_secs(1)))
            .collect();
        for (i, x) in ex.iter_mut().enumerate() {
            let out: Vec<_> = t
                .out_buyers(i)
                .unwrap()
                .into_iter()
                .map(|j| Message::price(0, i, j, 50.0 + i as f64))
                .collect();
            x.send(&out).unwrap();
        }
        let prices: Vec<_> = (0..4).map(|i| ex[i].collect(0, MessageKind::Price).unwrap()).collect();
        for (i, x) in ex.iter_mut().enumerate() {
            let out: Vec<_> = t
                .in_sellers(i)
                .unwrap()
                .into_iter()
                .map(|j| Message::bid(0, i, j, 1.0))
                .collect();
            x.send(&out).unwrap();
        }
        let bids = ex[0].collect(0, MessageKind::Bid).unwrap();
        (prices[0].len(), bids.len())
    }

    #[test]
    fn expected_message_counts() {
        assert_eq!(lockstep_counts(TopologyKind::Full), (3, 3));
        assert_eq!(lockstep_counts(TopologyKind::Line), (1, 1));
    }

    #[test]
    fn early_messages_are_buffered() {
        let t = Topology::build(TopologyKind::Line, 2).unwrap();
        let mut eps = loopback_network(2);
        let e1 = eps.pop().unwrap();
        let e0 = eps.pop().unwrap();
        let mut x0 = Exchanger::new(0, e0, &t, Duration::from_secs(1));
        let mut x1 = Exchanger::new(1, e1, &t, Duration::from_secs(1));
        x1.send(&[Message::price(1, 1, 0, 3.0), Message::bid(0, 1, 0, 2.0), Message::price(0, 1, 0, 4.0)])
            .unwrap();
        let p = x0.collect(0, MessageKind::Price).unwrap();
        assert_eq!(p[0].value, 4.0);
        let b = x0.collect(0, MessageKind::Bid).unwrap();
        assert_eq!(b[0].value, 2.0);
        let p = x0.collect(1, MessageKind::Price).unwrap();
        assert_eq!(p[0].value, 3.0);
    }

    #[test]
    fn stale_round_is_protocol_error() {
        let t = Topology::build(TopologyKind::Line, 2).unwrap();
        let mut eps = loopback_network(2);
        let e1 = eps.pop().unwrap();
        let e0 = eps.pop().unwrap();
        let mut x0 = Exchanger::new(0, e0, &t, Duration::from_secs(1));
        let mut x1 = Exchanger::new(1, e1, &t, Duration::from_secs(1));
        x1.send(&[Message::price(4, 1, 0, 3.0)]).unwrap();
        assert!(matches!(
            x0.collect(5, MessageKind::Price),
            Err(TransportError::Protocol { .. })
        ));
    }

    #[test]
    fn duplicate_and_unexpected_senders() {
        let t = Topology::build(TopologyKind::Line, 3).unwrap();
        let mut eps = loopback_network(3);
        let mut x0 = Exchanger::new(0, eps.remove(0), &t, Duration::from_secs(1));
        // node 2 is not adjacent to node 0 on the line
        let mut x2 = Exchanger::new(2, eps.pop().unwrap(), &t, Duration::from_secs(1));
        x2.send(&[Message::price(0, 2, 0, 1.0)]).unwrap();
        assert!(matches!(x0.collect(0, MessageKind::Price), Err(TransportError::Protocol { .. })));
    }

    #[test]
    fn missing_peer_times_out() {
        let t = Topology::build(TopologyKind::Line, 2).unwrap();
        let mut eps = loopback_network(2);
        let _keep = eps.pop();
        let mut x0 = Exchanger::new(0, eps.pop().unwrap(), &t, Duration::from_millis(50));
        match x0.collect(3, MessageKind::Bid) {
            Err(TransportError::Timeout { missing, round, .. }) => {
                assert_eq!(missing, vec![1]);
                assert_eq!(round, 3);
            }
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn tcp_pair_exchanges_a_round() {
        let t = Topology::build(TopologyKind::Line, 2).unwrap();
        let listeners: Vec<_> = (0..2).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
        let addrs: Vec<_> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let (t, addrs) = (t.clone(), addrs.clone());
                thread::spawn(move || {
                    let ep = TcpEndpoint::connect(i, l, &addrs, &t, Duration::from_secs(5)).unwrap();
                    let mut x = Exchanger::new(i, ep, &t, Duration::from_secs(5));
                    let j = 1 - i;
                    let p = x
                        .exchange_phase(0, MessageKind::Price, &[Message::price(0, i, j, 10.0 * i as f64)])
                        .unwrap();
                    let b = x
                        .exchange_phase(0, MessageKind::Bid, &[Message::bid(0, i, j, 1.0 + i as f64)])
                        .unwrap();
                    (p[0].value, b[0].value)
                })
            })
            .collect();
        let r: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(r, vec![(10.0, 2.0), (0.0, 1.0)]);
    }
}
