//! Deterministic discrete-event network simulator.
//!
//! Virtual time advances only by popping events. Events fire in
//! `(fire_at, seq)` order where `seq` is a global counter, so two runs with
//! the same inputs and seed replay identically. Every link is FIFO; loss and
//! duplication draws come from a dedicated seeded RNG.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::HybridTimestamp;
use crate::error::{Error, Result};
use crate::types::{DcIndex, Micros};

/// Physical clock readings start here so negative offsets stay positive.
pub const CLOCK_EPOCH: Micros = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Client { dc: DcIndex, idx: usize },
    Partition { dc: DcIndex, idx: usize },
    Eunomia { dc: DcIndex, replica: usize },
    Receiver { dc: DcIndex },
    Sequencer { dc: DcIndex, idx: usize },
    Stabilizer { dc: DcIndex },
    /// The harness itself: fault injection and failure detection.
    Control,
}

impl NodeId {
    pub fn dc(self) -> Option<DcIndex> {
        match self {
            NodeId::Client { dc, .. }
            | NodeId::Partition { dc, .. }
            | NodeId::Eunomia { dc, .. }
            | NodeId::Receiver { dc }
            | NodeId::Sequencer { dc, .. }
            | NodeId::Stabilizer { dc } => Some(dc),
            NodeId::Control => None,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NodeId::Client { dc, idx } => write!(f, "c{dc}.{idx}"),
            NodeId::Partition { dc, idx } => write!(f, "p{dc}.{idx}"),
            NodeId::Eunomia { dc, replica } => write!(f, "e{dc}.{replica}"),
            NodeId::Receiver { dc } => write!(f, "r{dc}"),
            NodeId::Sequencer { dc, idx } => write!(f, "s{dc}.{idx}"),
            NodeId::Stabilizer { dc } => write!(f, "g{dc}"),
            NodeId::Control => f.write_str("ctl"),
        }
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "ctl" {
            return Ok(NodeId::Control);
        }
        let bad = || format!("invalid node id `{s}`");
        let mut chars = s.chars();
        let kind = chars.next().ok_or_else(bad)?;
        let rest = chars.as_str();
        let (a, b) = match rest.split_once('.') {
            Some((a, b)) => (a, Some(b)),
            None => (rest, None),
        };
        let dc: usize = a.parse().map_err(|_| bad())?;
        let idx = || -> std::result::Result<usize, String> {
            b.ok_or_else(bad)?.parse().map_err(|_| bad())
        };
        Ok(match kind {
            'c' => NodeId::Client { dc, idx: idx()? },
            'p' => NodeId::Partition { dc, idx: idx()? },
            'e' => NodeId::Eunomia { dc, replica: idx()? },
            's' => NodeId::Sequencer { dc, idx: idx()? },
            'r' if b.is_none() => NodeId::Receiver { dc },
            'g' if b.is_none() => NodeId::Stabilizer { dc },
            _ => return Err(bad()),
        })
    }
}

/// Static network layout: one-way delays between and within datacenters.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub inter_dc: Vec<Vec<Micros>>,
    pub intra_dc: Micros,
}

impl Topology {
    pub fn delay(&self, src: NodeId, dst: NodeId) -> Micros {
        match (src.dc(), dst.dc()) {
            (Some(a), Some(b)) if a != b => self.inter_dc[a][b],
            (Some(_), Some(_)) => self.intra_dc,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub one_way_delay: Micros,
    pub loss_rate: f64,
    pub dup_rate: f64,
    pub active: bool,
}

/// Per-node physical clock: `reading = epoch + offset + drift * virtual_time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClockSpec {
    pub offset: i64,
    pub drift: f64,
}

impl Default for ClockSpec {
    fn default() -> Self {
        ClockSpec {
            offset: 0,
            drift: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ClockState {
    spec: ClockSpec,
    last: u64,
}

#[derive(Debug)]
struct LinkState<M> {
    loss_rate: f64,
    dup_rate: f64,
    extra_delay: Micros,
    active: bool,
    last_delivery: Micros,
    held: Vec<M>,
}

impl<M> Default for LinkState<M> {
    fn default() -> Self {
        LinkState {
            loss_rate: 0.0,
            dup_rate: 0.0,
            extra_delay: 0,
            active: true,
            last_delivery: 0,
            held: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload<M, T> {
    Message { from: NodeId, msg: M },
    Timer(T),
}

#[derive(Clone, Debug)]
pub struct SimEvent<M, T> {
    pub fire_at: Micros,
    pub seq: u64,
    pub target: NodeId,
    pub payload: Payload<M, T>,
}

impl<M, T> PartialEq for SimEvent<M, T> {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_at, self.seq) == (other.fire_at, other.seq)
    }
}

impl<M, T> Eq for SimEvent<M, T> {}

impl<M, T> PartialOrd for SimEvent<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M, T> Ord for SimEvent<M, T> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub duplicated: u64,
    pub dropped_at_crashed: u64,
}

pub struct Sim<M, T> {
    now: Micros,
    seq: u64,
    queue: BinaryHeap<SimEvent<M, T>>,
    topology: Topology,
    links: HashMap<(NodeId, NodeId), LinkState<M>>,
    clocks: HashMap<NodeId, ClockState>,
    crashed: HashSet<NodeId>,
    rng: ChaCha8Rng,
    stats: SimStats,
    digest: Sha256,
}

impl<M: Clone, T> Sim<M, T> {
    pub fn new(topology: Topology, seed: u64) -> Self {
        Sim {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            topology,
            links: HashMap::new(),
            clocks: HashMap::new(),
            crashed: HashSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D_u64),
            stats: SimStats::default(),
            digest: Sha256::new(),
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Hex digest over every processed `(fire_at, seq, target)` triple.
    pub fn trace_digest(&self) -> String {
        let d = self.digest.clone().finalize();
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn set_clock(&mut self, node: NodeId, spec: ClockSpec) {
        self.clocks.insert(node, ClockState { spec, last: 0 });
    }

    pub fn clock_spec(&self, node: NodeId) -> ClockSpec {
        self.clocks.get(&node).map(|c| c.spec).unwrap_or_default()
    }

    /// Physical clock of `node`. Successive readings are strictly increasing.
    pub fn clock(&mut self, node: NodeId) -> HybridTimestamp {
        let now = self.now;
        let c = self.clocks.entry(node).or_insert(ClockState {
            spec: ClockSpec::default(),
            last: 0,
        });
        let raw = CLOCK_EPOCH as i64 + c.spec.offset + (now as f64 * c.spec.drift).floor() as i64;
        let reading = (raw.max(0) as u64).max(c.last + 1);
        c.last = reading;
        HybridTimestamp(reading)
    }

    pub fn schedule(&mut self, fire_at: Micros, target: NodeId, payload: Payload<M, T>) -> Result<()> {
        if fire_at < self.now {
            return Err(Error::ScheduleInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(SimEvent {
            fire_at,
            seq,
            target,
            payload,
        });
        Ok(())
    }

    /// Timer measured on `node`'s own clock.
    pub fn set_timer(&mut self, node: NodeId, local_delay: Micros, timer: T) {
        let drift = self.clock_spec(node).drift;
        let virtual_delay = (local_delay as f64 / drift).ceil() as Micros;
        self.schedule(self.now + virtual_delay, node, Payload::Timer(timer))
            .expect("timers are never in the past");
    }

    pub fn link(&self, src: NodeId, dst: NodeId) -> LinkSpec {
        let base = self.topology.delay(src, dst);
        match self.links.get(&(src, dst)) {
            Some(l) => LinkSpec {
                src,
                dst,
                one_way_delay: base + l.extra_delay,
                loss_rate: l.loss_rate,
                dup_rate: l.dup_rate,
                active: l.active,
            },
            None => LinkSpec {
                src,
                dst,
                one_way_delay: base,
                loss_rate: 0.0,
                dup_rate: 0.0,
                active: true,
            },
        }
    }

    pub fn set_link_faults(&mut self, src: NodeId, dst: NodeId, loss_rate: f64, dup_rate: f64) {
        let l = self.links.entry((src, dst)).or_default();
        l.loss_rate = loss_rate;
        l.dup_rate = dup_rate;
    }

    pub fn set_link_extra_delay(&mut self, src: NodeId, dst: NodeId, extra: Micros) {
        self.links.entry((src, dst)).or_default().extra_delay = extra;
    }

    /// Deactivated links hold messages; reactivation sends them in order.
    pub fn set_link_active(&mut self, src: NodeId, dst: NodeId, active: bool) {
        let l = self.links.entry((src, dst)).or_default();
        l.active = active;
        if active {
            let held = std::mem::take(&mut l.held);
            for msg in held {
                self.send(src, dst, msg);
            }
        }
    }

    pub fn send(&mut self, src: NodeId, dst: NodeId, msg: M) {
        if self.crashed.contains(&src) {
            return;
        }
        self.stats.sent += 1;
        let base = self.topology.delay(src, dst);
        let now = self.now;
        let link = self.links.entry((src, dst)).or_default();
        if !link.active {
            link.held.push(msg);
            return;
        }
        if link.loss_rate > 0.0 && self.rng.random::<f64>() < link.loss_rate {
            self.stats.lost += 1;
            return;
        }
        let copies = if link.dup_rate > 0.0 && self.rng.random::<f64>() < link.dup_rate {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };
        let at = (now + base + link.extra_delay).max(link.last_delivery);
        link.last_delivery = at;
        for _ in 1..copies {
            self.schedule(at, dst, Payload::Message { from: src, msg: msg.clone() })
                .expect("delivery is in the future");
        }
        self.schedule(at, dst, Payload::Message { from: src, msg })
            .expect("delivery is in the future");
    }

    pub fn crash(&mut self, node: NodeId) {
        self.crashed.insert(node);
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.crashed.contains(&node)
    }

    /// Next event at or before `until`, skipping events addressed to crashed nodes.
    pub fn next_event(&mut self, until: Micros) -> Option<SimEvent<M, T>> {
        loop {
            if self.queue.peek()?.fire_at > until {
                return None;
            }
            let ev = self.queue.pop()?;
            self.now = ev.fire_at;
            if self.crashed.contains(&ev.target) {
                self.stats.dropped_at_crashed += 1;
                continue;
            }
            if matches!(ev.payload, Payload::Message { .. }) {
                self.stats.delivered += 1;
            }
            self.digest.update(ev.fire_at.to_le_bytes());
            self.digest.update(ev.seq.to_le_bytes());
            self.digest.update(ev.target.to_string().as_bytes());
            return Some(ev);
        }
    }

    /// Advances virtual time to `t` once the queue holds nothing earlier.
    pub fn advance_to(&mut self, t: Micros) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type TestSim = Sim<u32, &'static str>;

    fn topo() -> Topology {
        Topology {
            inter_dc: vec![vec![0, 40_000], vec![40_000, 0]],
            intra_dc: 100,
        }
    }

    fn p(dc: usize, idx: usize) -> NodeId {
        NodeId::Partition { dc, idx }
    }

    fn e(dc: usize) -> NodeId {
        NodeId::Eunomia { dc, replica: 0 }
    }

    fn drain(sim: &mut TestSim) -> Vec<(Micros, u32)> {
        let mut out = Vec::new();
        while let Some(ev) = sim.next_event(u64::MAX) {
            if let Payload::Message { msg, .. } = ev.payload {
                out.push((ev.fire_at, msg));
            }
        }
        out
    }

    #[test]
    fn same_time_events_fire_in_schedule_order() {
        let mut sim = TestSim::new(topo(), 1);
        sim.schedule(10, p(0, 0), Payload::Timer("a")).unwrap();
        sim.schedule(10, p(0, 1), Payload::Timer("b")).unwrap();
        let a = sim.next_event(u64::MAX).unwrap();
        let b = sim.next_event(u64::MAX).unwrap();
        assert!(a.seq < b.seq);
        assert_eq!(a.payload, Payload::Timer("a"));
        assert!(sim.next_event(u64::MAX).is_none());
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut sim = TestSim::new(topo(), 1);
        sim.schedule(10, p(0, 0), Payload::Timer("a")).unwrap();
        sim.next_event(u64::MAX).unwrap();
        assert_eq!(
            sim.schedule(5, p(0, 0), Payload::Timer("x")),
            Err(Error::ScheduleInPast { at: 5, now: 10 })
        );
    }

    #[test]
    fn delivery_uses_link_delay_and_is_fifo() {
        let mut sim = TestSim::new(topo(), 1);
        sim.send(p(0, 0), p(1, 0), 1);
        sim.send(p(0, 0), p(1, 0), 2);
        assert_eq!(drain(&mut sim), vec![(40_000, 1), (40_000, 2)]);
    }

    #[test]
    fn fifo_survives_a_delay_decrease() {
        let mut sim = TestSim::new(topo(), 1);
        sim.set_link_extra_delay(p(0, 0), e(0), 5_000);
        sim.send(p(0, 0), e(0), 1);
        sim.set_link_extra_delay(p(0, 0), e(0), 0);
        sim.send(p(0, 0), e(0), 2);
        let got: Vec<u32> = drain(&mut sim).into_iter().map(|(_, m)| m).collect();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn full_duplication_delivers_every_message_twice_in_order() {
        let mut sim = TestSim::new(topo(), 7);
        sim.set_link_faults(p(0, 0), e(0), 0.0, 1.0);
        for m in 0..5 {
            sim.send(p(0, 0), e(0), m);
        }
        let got: Vec<u32> = drain(&mut sim).into_iter().map(|(_, m)| m).collect();
        assert_eq!(got, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn loss_preserves_order_of_survivors() {
        let mut sim = TestSim::new(topo(), 3);
        sim.set_link_faults(p(0, 0), e(0), 0.5, 0.3);
        for m in 0..200 {
            sim.send(p(0, 0), e(0), m);
        }
        let got: Vec<u32> = drain(&mut sim).into_iter().map(|(_, m)| m).collect();
        assert!(got.len() < 260 && got.len() > 60);
        assert!(got.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn inactive_link_holds_until_reactivated() {
        let mut sim = TestSim::new(topo(), 1);
        sim.set_link_active(p(0, 0), e(0), false);
        sim.send(p(0, 0), e(0), 9);
        assert_eq!(sim.pending_events(), 0);
        sim.schedule(1_000, p(0, 0), Payload::Timer("t")).unwrap();
        sim.next_event(u64::MAX).unwrap();
        sim.set_link_active(p(0, 0), e(0), true);
        assert_eq!(drain(&mut sim), vec![(1_100, 9)]);
    }

    #[test]
    fn crashed_nodes_neither_send_nor_receive() {
        let mut sim = TestSim::new(topo(), 1);
        sim.send(p(0, 0), e(0), 1);
        sim.crash(e(0));
        sim.send(e(0), p(0, 0), 2);
        assert!(drain(&mut sim).is_empty());
        assert_eq!(sim.stats().dropped_at_crashed, 1);
    }

    #[test]
    fn clock_readings_are_strictly_monotone_even_with_negative_offset() {
        let mut sim = TestSim::new(topo(), 1);
        let n = p(0, 0);
        sim.set_clock(n, ClockSpec { offset: -900, drift: 1.0 - 1e-5 });
        let mut last = sim.clock(n);
        for t in [0u64, 0, 1, 1, 2, 1_000, 1_000, 50_000] {
            sim.advance_to(t);
            let r = sim.clock(n);
            assert!(r > last, "{r} <= {last}");
            last = r;
        }
    }

    #[test]
    fn timers_follow_local_clock_rate() {
        let mut sim = TestSim::new(topo(), 1);
        let n = p(0, 0);
        sim.set_clock(n, ClockSpec { offset: 0, drift: 0.5 });
        sim.set_timer(n, 1_000, "slow");
        assert_eq!(sim.next_event(u64::MAX).unwrap().fire_at, 2_000);
    }

    #[test]
    fn node_ids_round_trip_through_text() {
        for n in [
            NodeId::Client { dc: 1, idx: 15 },
            p(2, 3),
            e(0),
            NodeId::Receiver { dc: 2 },
            NodeId::Sequencer { dc: 0, idx: 2 },
            NodeId::Stabilizer { dc: 1 },
            NodeId::Control,
        ] {
            assert_eq!(n.to_string().parse::<NodeId>().unwrap(), n);
        }
        assert!("q1.2".parse::<NodeId>().is_err());
        assert!("p1".parse::<NodeId>().is_err());
    }

    #[test]
    fn same_seed_same_digest() {
        let run = |seed| {
            let mut sim = TestSim::new(topo(), seed);
            sim.set_link_faults(p(0, 0), e(0), 0.3, 0.3);
            for m in 0..50 {
                sim.send(p(0, 0), e(0), m);
            }
            drain(&mut sim);
            sim.trace_digest()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }
}
