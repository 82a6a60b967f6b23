use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::NetError;

/// Index of one agent in the swarm, `0 <= id < n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent {}", self.0)
    }
}

impl From<usize> for AgentId {
    fn from(i: usize) -> Self {
        AgentId(i)
    }
}

/// Directed communication graph stored as in-neighbor lists: agent `i`
/// receives from every `j` in `in_neighbors[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyGraph {
    n: usize,
    in_neighbors: Vec<Vec<AgentId>>,
}

impl TopologyGraph {
    pub fn from_in_neighbors(in_neighbors: Vec<Vec<usize>>) -> Result<Self, NetError> {
        let n = in_neighbors.len();
        let mut lists = Vec::with_capacity(n);
        for (i, list) in in_neighbors.into_iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &j in &list {
                if j >= n {
                    return Err(NetError::InvalidTopology(format!(
                        "agent {i} lists out-of-range neighbor {j}"
                    )));
                }
                if j == i {
                    return Err(NetError::InvalidTopology(format!("self-loop on agent {i}")));
                }
                seen.insert(AgentId(j));
            }
            lists.push(seen.into_iter().collect());
        }
        Ok(Self {
            n,
            in_neighbors: lists,
        })
    }

    /// Builds a graph from directed `(from, to)` edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, NetError> {
        let mut lists = vec![Vec::new(); n];
        for &(from, to) in edges {
            if to >= n {
                return Err(NetError::InvalidTopology(format!(
                    "edge target {to} out of range"
                )));
            }
            lists[to].push(from);
        }
        Self::from_in_neighbors(lists)
    }

    pub fn complete(n: usize) -> Self {
        let lists = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Self::from_in_neighbors(lists).expect("complete graph is valid")
    }

    /// Directed ring where agent `i` receives from `i - 1`.
    pub fn ring(n: usize) -> Self {
        let lists = (0..n)
            .map(|i| if n > 1 { vec![(i + n - 1) % n] } else { vec![] })
            .collect();
        Self::from_in_neighbors(lists).expect("ring is valid")
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn in_neighbors(&self, i: AgentId) -> &[AgentId] {
        &self.in_neighbors[i.0]
    }

    pub fn out_neighbors(&self, i: AgentId) -> Vec<AgentId> {
        (0..self.n)
            .map(AgentId)
            .filter(|&k| self.in_neighbors[k.0].contains(&i))
            .collect()
    }

    pub fn has_edge(&self, from: AgentId, to: AgentId) -> bool {
        to.0 < self.n && self.in_neighbors[to.0].binary_search(&from).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (AgentId, AgentId)> + '_ {
        self.in_neighbors
            .iter()
            .enumerate()
            .flat_map(|(to, list)| list.iter().map(move |&from| (from, AgentId(to))))
    }

    /// True when every agent can reach every other along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; self.n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                let next: Vec<usize> = if forward {
                    self.out_neighbors(AgentId(v))
                        .into_iter()
                        .map(|a| a.0)
                        .collect()
                } else {
                    self.in_neighbors[v].iter().map(|a| a.0).collect()
                };
                for w in next {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

/// A static graph or a schedule of graphs keyed by activation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Topology {
    Static(TopologyGraph),
    /// `(start_time, graph)` pairs sorted by start time; the first starts at 0.
    Scheduled(Vec<(f64, TopologyGraph)>),
}

impl Topology {
    pub fn scheduled(mut entries: Vec<(f64, TopologyGraph)>) -> Result<Self, NetError> {
        if entries.is_empty() {
            return Err(NetError::InvalidTopology("empty schedule".into()));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = entries[0].1.len();
        if entries.iter().any(|(t, g)| g.len() != n || !t.is_finite()) {
            return Err(NetError::InvalidTopology(
                "scheduled graphs disagree on agent count".into(),
            ));
        }
        if entries[0].0 > 0.0 {
            return Err(NetError::InvalidTopology(
                "schedule must start at t <= 0".into(),
            ));
        }
        Ok(Topology::Scheduled(entries))
    }

    pub fn len(&self) -> usize {
        match self {
            Topology::Static(g) => g.len(),
            Topology::Scheduled(s) => s[0].1.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn graph_at(&self, t: f64) -> &TopologyGraph {
        match self {
            Topology::Static(g) => g,
            Topology::Scheduled(s) => {
                let idx = s
                    .partition_point(|(start, _)| *start <= t)
                    .saturating_sub(1);
                &s[idx].1
            }
        }
    }

    /// Union of every directed edge that appears at any time.
    pub fn all_edges(&self) -> BTreeSet<(AgentId, AgentId)> {
        match self {
            Topology::Static(g) => g.edges().collect(),
            Topology::Scheduled(s) => s.iter().flat_map(|(_, g)| g.edges()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_self_loops_and_out_of_range() {
        assert!(TopologyGraph::from_in_neighbors(vec![vec![0]]).is_err());
        assert!(TopologyGraph::from_in_neighbors(vec![vec![3], vec![]]).is_err());
    }

    #[test]
    fn ring_structure() {
        let g = TopologyGraph::ring(4);
        for i in 0..4 {
            assert_eq!(g.in_neighbors(AgentId(i)), &[AgentId((i + 3) % 4)]);
            assert_eq!(g.out_neighbors(AgentId(i)), vec![AgentId((i + 1) % 4)]);
        }
        assert!(g.is_strongly_connected());
        assert!(g.has_edge(AgentId(0), AgentId(1)));
        assert!(!g.has_edge(AgentId(1), AgentId(0)));
    }

    #[test]
    fn disconnected_graph_detected() {
        let g = TopologyGraph::from_edges(4, &[(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        assert!(!g.is_strongly_connected());
    }

    #[test]
    fn schedule_lookup() {
        let a = TopologyGraph::from_edges(2, &[(0, 1)]).unwrap();
        let b = TopologyGraph::from_edges(2, &[(1, 0)]).unwrap();
        let t = Topology::scheduled(vec![(1.0, b.clone()), (0.0, a.clone())]).unwrap();
        assert_eq!(t.graph_at(0.5), &a);
        assert_eq!(t.graph_at(1.0), &b);
        assert_eq!(t.graph_at(7.0), &b);
        assert_eq!(t.all_edges().len(), 2);
    }
}
