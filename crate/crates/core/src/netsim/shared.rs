use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{AgentId, Envelope, NetError, Network, ReceiveOutcome};

/// Thread-safe handle to a [`Network`] for agents running as independent
/// tasks. Blocking calls wait on a condition variable in wall-clock time.
#[derive(Clone)]
pub struct SharedNetwork {
    inner: Arc<(Mutex<Network>, Condvar)>,
}

impl SharedNetwork {
    pub fn new(net: Network) -> Self {
        Self {
            inner: Arc::new((Mutex::new(net), Condvar::new())),
        }
    }

    /// Locks the underlying network. A poisoned lock is recovered because the
    /// network holds no invariants that a panicking agent could break halfway.
    pub fn lock(&self) -> MutexGuard<'_, Network> {
        self.inner.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn notify(&self) {
        self.inner.1.notify_all();
    }

    pub fn send(&self, from: AgentId, to: AgentId, payload: Vec<u8>) -> Result<(), NetError> {
        let r = self.lock().send(from, to, payload);
        self.notify();
        r
    }

    pub fn advance_to(&self, t: f64) -> Result<(), NetError> {
        let r = self.lock().advance_to(t);
        self.notify();
        r
    }

    pub fn asynchronous_receive(&self, at: AgentId) -> BTreeMap<AgentId, Vec<Vec<u8>>> {
        self.lock().asynchronous_receive(at)
    }

    /// Blocks until a message from `from` is visible or `timeout` elapses.
    pub fn receive(
        &self,
        at: AgentId,
        from: AgentId,
        timeout: Duration,
    ) -> Result<ReceiveOutcome, NetError> {
        let deadline = Instant::now() + timeout;
        let mut guard = self.lock();
        loop {
            if let ReceiveOutcome::Message(env) = guard.receive(at, from, 0.0)? {
                return Ok(ReceiveOutcome::Message(env));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(ReceiveOutcome::Timeout);
            }
            guard = self
                .inner
                .1
                .wait_timeout(guard, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn exchange_send(&self, at: AgentId, payload: &[u8], round: u64) -> Result<(), NetError> {
        let r = self.lock().exchange_send(at, payload, round);
        self.notify();
        r
    }

    /// Sends to all out-neighbors, then waits until every in-neighbor's entry
    /// for `round` has arrived (or was lost), bounded by `timeout`.
    pub fn neighbors_exchange(
        &self,
        at: AgentId,
        payload: &[u8],
        round: u64,
        timeout: Duration,
    ) -> Result<BTreeMap<AgentId, Vec<u8>>, NetError> {
        self.exchange_send(at, payload, round)?;
        let deadline = Instant::now() + timeout;
        let mut guard = self.lock();
        while !guard.exchange_ready(at, round) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            guard = self
                .inner
                .1
                .wait_timeout(guard, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        guard.exchange_collect(at, round)
    }

    pub fn drain_envelopes(&self, at: AgentId) -> Vec<Envelope> {
        self.lock().drain_envelopes(at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{QosProfile, TopologyGraph};
    use std::thread;

    #[test]
    fn threads_exchange_concurrently() {
        let n = 4;
        let net = SharedNetwork::new(
            Network::with_static(TopologyGraph::ring(n), QosProfile::reliable()).unwrap(),
        );
        let handles: Vec<_> = (0..n)
            .map(|i| {
                let net = net.clone();
                thread::spawn(move || {
                    (0..20u64)
                        .map(|round| {
                            let got = net
                                .neighbors_exchange(
                                    AgentId(i),
                                    &[i as u8, round as u8],
                                    round,
                                    Duration::from_secs(5),
                                )
                                .unwrap();
                            got[&AgentId((i + n - 1) % n)].clone()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for (i, h) in handles.into_iter().enumerate() {
            let got = h.join().unwrap();
            for (round, payload) in got.iter().enumerate() {
                assert_eq!(payload, &vec![((i + n - 1) % n) as u8, round as u8]);
            }
        }
    }

    #[test]
    fn blocking_receive_wakes_on_send() {
        let net = SharedNetwork::new(
            Network::with_static(TopologyGraph::complete(2), QosProfile::reliable()).unwrap(),
        );
        let rx = {
            let net = net.clone();
            thread::spawn(move || {
                net.receive(AgentId(1), AgentId(0), Duration::from_secs(5))
                    .unwrap()
            })
        };
        thread::sleep(Duration::from_millis(20));
        net.send(AgentId(0), AgentId(1), vec![42]).unwrap();
        match rx.join().unwrap() {
            ReceiveOutcome::Message(env) => assert_eq!(env.payload, vec![42]),
            ReceiveOutcome::Timeout => panic!("timed out"),
        }
        assert_eq!(
            net.receive(AgentId(1), AgentId(0), Duration::from_millis(10))
                .unwrap(),
            ReceiveOutcome::Timeout
        );
    }
}
