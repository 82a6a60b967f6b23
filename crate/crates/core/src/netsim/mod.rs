//! Simulated inter-agent communication fabric.
//!
//! Every directed edge is a FIFO channel with its own sequence counter and its
//! own seeded random generator for loss draws, so per-edge statistics do not
//! depend on the order in which agents are scheduled. Time is virtual: the
//! owner advances the clock with [`Network::advance_to`] and messages become
//! visible once their latency has elapsed.
//!
//! Synchronous neighbor exchange uses round-tagged messages on the same
//! channels. A message lost in transit leaves a tombstone carrying its round,
//! so collectors learn about the loss instead of waiting for it.

pub mod codec;
mod shared;
mod topology;

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use shared::SharedNetwork;
pub use topology::{AgentId, Topology, TopologyGraph};

/// Delivery times within this window of `now` count as due.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("no edge {from} -> {to} at t = {time}")]
    NoEdge {
        from: AgentId,
        to: AgentId,
        time: f64,
    },
    #[error("{0} is not part of the network")]
    UnknownAgent(AgentId),
    #[error("round mismatch on {from} -> {to}: expected {expected}, found {found}")]
    RoundMismatch {
        from: AgentId,
        to: AgentId,
        expected: u64,
        found: u64,
    },
    #[error("invalid qos: {0}")]
    InvalidQos(String),
    #[error("clock cannot move backwards ({now} -> {requested})")]
    ClockReversal { now: f64, requested: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum QosMode {
    Reliable,
    Lossy { drop_probability: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosProfile {
    #[serde(flatten)]
    pub mode: QosMode,
    #[serde(default)]
    pub latency: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for QosProfile {
    fn default() -> Self {
        Self::reliable()
    }
}

impl QosProfile {
    pub fn reliable() -> Self {
        Self {
            mode: QosMode::Reliable,
            latency: 0.0,
            seed: 0,
        }
    }

    pub fn lossy(drop_probability: f64, seed: u64) -> Self {
        Self {
            mode: QosMode::Lossy { drop_probability },
            latency: 0.0,
            seed,
        }
    }

    pub fn with_latency(self, latency: f64) -> Self {
        Self { latency, ..self }
    }

    pub fn drop_probability(&self) -> f64 {
        match self.mode {
            QosMode::Reliable => 0.0,
            QosMode::Lossy { drop_probability } => drop_probability,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let p = self.drop_probability();
        if !(0.0..1.0).contains(&p) {
            return Err(NetError::InvalidQos(format!(
                "drop probability {p} outside [0, 1)"
            )));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(NetError::InvalidQos(format!(
                "latency {} must be >= 0",
                self.latency
            )));
        }
        Ok(())
    }
}

/// A serialized message as seen by the receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub sender: AgentId,
    /// Strictly increasing per (sender, receiver) channel.
    pub sequence: u64,
    /// Exchange round for synchronous messages, `None` for plain sends.
    pub round: Option<u64>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Entry {
    Message(Envelope),
    Lost { sequence: u64, round: Option<u64> },
}

impl Entry {
    fn round(&self) -> Option<u64> {
        match self {
            Entry::Message(e) => e.round,
            Entry::Lost { round, .. } => *round,
        }
    }
}

#[derive(Debug)]
struct Channel {
    next_sequence: u64,
    rng: ChaCha8Rng,
    in_flight: VecDeque<(f64, Entry)>,
    inbox: VecDeque<Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutcome {
    Delivered,
    Dropped,
}

/// One send decision, recorded at send time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub from: AgentId,
    pub to: AgentId,
    pub sequence: u64,
    pub round: Option<u64>,
    pub outcome: TraceOutcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub received: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceiveOutcome {
    Message(Envelope),
    Timeout,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn edge_seed(seed: u64, from: AgentId, to: AgentId) -> u64 {
    splitmix64(
        splitmix64(seed ^ splitmix64(from.0 as u64))
            ^ (to.0 as u64).wrapping_mul(0xA24B_AED4_963E_E407),
    )
}

pub struct Network {
    topology: Topology,
    default_qos: QosProfile,
    edge_qos: BTreeMap<(AgentId, AgentId), QosProfile>,
    now: f64,
    channels: BTreeMap<(AgentId, AgentId), Channel>,
    trace: Vec<TraceEvent>,
    record_trace: bool,
    stats: NetStats,
}

impl Network {
    pub fn new(topology: Topology, qos: QosProfile) -> Result<Self, NetError> {
        qos.validate()?;
        Ok(Self {
            topology,
            default_qos: qos,
            edge_qos: BTreeMap::new(),
            now: 0.0,
            channels: BTreeMap::new(),
            trace: Vec::new(),
            record_trace: true,
            stats: NetStats::default(),
        })
    }

    pub fn with_static(graph: TopologyGraph, qos: QosProfile) -> Result<Self, NetError> {
        Self::new(Topology::Static(graph), qos)
    }

    /// Overrides the QoS of one directed edge.
    pub fn set_edge_qos(
        &mut self,
        from: AgentId,
        to: AgentId,
        qos: QosProfile,
    ) -> Result<(), NetError> {
        qos.validate()?;
        self.edge_qos.insert((from, to), qos);
        self.channels.remove(&(from, to));
        Ok(())
    }

    pub fn set_trace_recording(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn len(&self) -> usize {
        self.topology.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topology.is_empty()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn graph(&self) -> &TopologyGraph {
        self.topology.graph_at(self.now)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    fn qos(&self, from: AgentId, to: AgentId) -> QosProfile {
        self.edge_qos
            .get(&(from, to))
            .copied()
            .unwrap_or(self.default_qos)
    }

    fn check_agent(&self, a: AgentId) -> Result<(), NetError> {
        if a.0 >= self.len() {
            return Err(NetError::UnknownAgent(a));
        }
        Ok(())
    }

    fn channel(&mut self, from: AgentId, to: AgentId) -> &mut Channel {
        let seed = self.qos(from, to).seed;
        self.channels.entry((from, to)).or_insert_with(|| Channel {
            next_sequence: 0,
            rng: ChaCha8Rng::seed_from_u64(edge_seed(seed, from, to)),
            in_flight: VecDeque::new(),
            inbox: VecDeque::new(),
        })
    }

    /// Advances the virtual clock and moves due messages into inboxes.
    pub fn advance_to(&mut self, t: f64) -> Result<(), NetError> {
        if t < self.now {
            return Err(NetError::ClockReversal {
                now: self.now,
                requested: t,
            });
        }
        self.now = t;
        let mut delivered = 0;
        for ch in self.channels.values_mut() {
            while ch
                .in_flight
                .front()
                .is_some_and(|(due, _)| *due <= t + TIME_EPS)
            {
                let (_, entry) = ch.in_flight.pop_front().expect("front checked");
                if matches!(entry, Entry::Message(_)) {
                    delivered += 1;
                }
                ch.inbox.push_back(entry);
            }
        }
        self.stats.delivered += delivered;
        Ok(())
    }

    fn send_tagged(
        &mut self,
        from: AgentId,
        to: AgentId,
        payload: Vec<u8>,
        round: Option<u64>,
    ) -> Result<(), NetError> {
        self.check_agent(from)?;
        self.check_agent(to)?;
        if !self.graph().has_edge(from, to) {
            return Err(NetError::NoEdge {
                from,
                to,
                time: self.now,
            });
        }
        let qos = self.qos(from, to);
        let now = self.now;
        let ch = self.channel(from, to);
        let sequence = ch.next_sequence;
        ch.next_sequence += 1;
        let p = qos.drop_probability();
        // reliable edges still draw so switching QoS does not shift other edges
        let dropped = ch.rng.gen::<f64>() < p;
        let entry = if dropped {
            Entry::Lost { sequence, round }
        } else {
            Entry::Message(Envelope {
                sender: from,
                sequence,
                round,
                payload,
            })
        };
        let due = now + qos.latency;
        ch.in_flight.push_back((due, entry));
        // zero latency: visible immediately
        let mut delivered = 0;
        while ch
            .in_flight
            .front()
            .is_some_and(|(d, _)| *d <= now + TIME_EPS)
        {
            let (_, e) = ch.in_flight.pop_front().expect("front checked");
            if matches!(e, Entry::Message(_)) {
                delivered += 1;
            }
            ch.inbox.push_back(e);
        }
        self.stats.delivered += delivered;
        self.stats.sent += 1;
        if dropped {
            self.stats.dropped += 1;
        }
        if self.record_trace {
            self.trace.push(TraceEvent {
                time: now,
                from,
                to,
                sequence,
                round,
                outcome: if dropped {
                    TraceOutcome::Dropped
                } else {
                    TraceOutcome::Delivered
                },
            });
        }
        Ok(())
    }

    /// Enqueues `payload` on the edge `from -> to` of the current graph.
    pub fn send(&mut self, from: AgentId, to: AgentId, payload: Vec<u8>) -> Result<(), NetError> {
        self.send_tagged(from, to, payload, None)
    }

    /// Takes the next message on `from -> at`.
    ///
    /// In virtual time a blocking wait is resolved immediately: a message still
    /// in flight that lands within `timeout` is returned (the caller is deemed
    /// to have waited for it), otherwise the result is [`ReceiveOutcome::Timeout`].
    pub fn receive(
        &mut self,
        at: AgentId,
        from: AgentId,
        timeout: f64,
    ) -> Result<ReceiveOutcome, NetError> {
        self.check_agent(at)?;
        self.check_agent(from)?;
        if !self.topology.all_edges().contains(&(from, at)) {
            return Err(NetError::NoEdge {
                from,
                to: at,
                time: self.now,
            });
        }
        let horizon = self.now + timeout.max(0.0);
        let Some(ch) = self.channels.get_mut(&(from, at)) else {
            return Ok(ReceiveOutcome::Timeout);
        };
        let pos = ch.inbox.iter().position(|e| matches!(e, Entry::Message(_)));
        let taken = match pos {
            Some(i) => {
                // losses ahead of the message are consumed with it
                let mut taken = None;
                for _ in 0..=i {
                    if let Some(Entry::Message(env)) = ch.inbox.pop_front() {
                        taken = Some(env);
                    }
                }
                taken
            }
            None => {
                ch.inbox.clear();
                let mut taken = None;
                while let Some((due, _)) = ch.in_flight.front() {
                    if *due > horizon + TIME_EPS {
                        break;
                    }
                    let (_, entry) = ch.in_flight.pop_front().expect("front checked");
                    if let Entry::Message(env) = entry {
                        self.stats.delivered += 1;
                        taken = Some(env);
                        break;
                    }
                }
                taken
            }
        };
        Ok(match taken {
            Some(env) => {
                self.stats.received += 1;
                ReceiveOutcome::Message(env)
            }
            None => ReceiveOutcome::Timeout,
        })
    }

    /// Drains every delivered message addressed to `at`, grouped by sender in
    /// FIFO order. Never blocks; may be empty.
    pub fn asynchronous_receive(&mut self, at: AgentId) -> BTreeMap<AgentId, Vec<Vec<u8>>> {
        let mut out: BTreeMap<AgentId, Vec<Vec<u8>>> = BTreeMap::new();
        let mut count = 0;
        for ((from, to), ch) in self.channels.iter_mut() {
            if *to != at {
                continue;
            }
            for entry in ch.inbox.drain(..) {
                if let Entry::Message(env) = entry {
                    out.entry(*from).or_default().push(env.payload);
                    count += 1;
                }
            }
        }
        self.stats.received += count;
        out
    }

    /// Like [`Network::asynchronous_receive`] but keeps envelope metadata.
    pub fn drain_envelopes(&mut self, at: AgentId) -> Vec<Envelope> {
        let mut out = Vec::new();
        for ((_, to), ch) in self.channels.iter_mut() {
            if *to != at {
                continue;
            }
            for entry in ch.inbox.drain(..) {
                if let Entry::Message(env) = entry {
                    out.push(env);
                }
            }
        }
        self.stats.received += out.len() as u64;
        out
    }

    /// First half of a synchronous exchange: sends `payload` to every out-neighbor.
    pub fn exchange_send(
        &mut self,
        at: AgentId,
        payload: &[u8],
        round: u64,
    ) -> Result<(), NetError> {
        self.check_agent(at)?;
        for to in self.graph().out_neighbors(at) {
            self.send_tagged(at, to, payload.to_vec(), Some(round))?;
        }
        Ok(())
    }

    /// Per-neighbor variant of [`Network::exchange_send`]. Every out-neighbor
    /// must have a payload.
    pub fn exchange_send_each(
        &mut self,
        at: AgentId,
        payloads: &BTreeMap<AgentId, Vec<u8>>,
        round: u64,
    ) -> Result<(), NetError> {
        self.check_agent(at)?;
        for (&to, payload) in payloads {
            self.send_tagged(at, to, payload.clone(), Some(round))?;
        }
        Ok(())
    }

    /// Second half of a synchronous exchange: one payload per in-neighbor for
    /// `round`. Lost or late messages show up as absent keys; stale entries
    /// from earlier rounds are discarded.
    pub fn exchange_collect(
        &mut self,
        at: AgentId,
        round: u64,
    ) -> Result<BTreeMap<AgentId, Vec<u8>>, NetError> {
        self.check_agent(at)?;
        let mut out = BTreeMap::new();
        let neighbors = self.graph().in_neighbors(at).to_vec();
        let mut received = 0;
        for from in neighbors {
            let Some(ch) = self.channels.get_mut(&(from, at)) else {
                continue;
            };
            while let Some(idx) = ch.inbox.iter().position(|e| e.round().is_some()) {
                let r = ch.inbox[idx].round().expect("tagged");
                if r > round {
                    return Err(NetError::RoundMismatch {
                        from,
                        to: at,
                        expected: round,
                        found: r,
                    });
                }
                let entry = ch.inbox.remove(idx).expect("index valid");
                if r < round {
                    continue;
                }
                if let Entry::Message(env) = entry {
                    out.insert(from, env.payload);
                    received += 1;
                }
                break;
            }
        }
        self.stats.received += received;
        Ok(out)
    }

    /// True once every current in-neighbor has a round-tagged entry (message
    /// or loss tombstone) for `round` or later waiting in its inbox.
    pub fn exchange_ready(&self, at: AgentId, round: u64) -> bool {
        self.graph().in_neighbors(at).iter().all(|from| {
            self.channels.get(&(*from, at)).is_some_and(|ch| {
                ch.inbox
                    .iter()
                    .any(|e| e.round().is_some_and(|r| r >= round))
            })
        })
    }

    /// Send-then-collect in one call. Only meaningful once every in-neighbor
    /// has already sent for `round`; lockstep schedulers call
    /// [`Network::exchange_send`] for all agents first, then collect.
    pub fn neighbors_exchange(
        &mut self,
        at: AgentId,
        payload: &[u8],
        round: u64,
    ) -> Result<BTreeMap<AgentId, Vec<u8>>, NetError> {
        self.exchange_send(at, payload, round)?;
        self.exchange_collect(at, round)
    }

    /// Runs one synchronous round for every agent in id order.
    pub fn exchange_all(
        &mut self,
        payloads: &[Vec<u8>],
        round: u64,
    ) -> Result<Vec<BTreeMap<AgentId, Vec<u8>>>, NetError> {
        for (i, p) in payloads.iter().enumerate() {
            self.exchange_send(AgentId(i), p, round)?;
        }
        (0..payloads.len())
            .map(|i| self.exchange_collect(AgentId(i), round))
            .collect()
    }
}
