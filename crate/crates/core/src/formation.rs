//! Bearing-based formation control for leader/follower swarms.
//!
//! A formation is a set of desired unit bearings `g_ij` from agent `i` to each
//! neighbor `j` it listens to. Leaders apply zero input; followers run
//!
//! ```text
//! u_i = -sum_j P(g_ij) [kp (p_i - p_j) + kv (v_i - v_j)],   P(g) = I - g g^T
//! ```
//!
//! which is a double-integrator acceleration. On quadrotors it is tracked by
//! the acceleration-mode hierarchical controller.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Vec3;
use crate::netsim::codec::{self, Value};
use crate::netsim::{AgentId, TopologyGraph};

const UNIT_TOL: f64 = 1e-6;
const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormationError {
    #[error("degenerate bearing with norm {0:.3e}")]
    DegenerateBearing(f64),
    #[error("bearing ({i}, {j}) has norm {norm}, expected 1")]
    NotUnit { i: usize, j: usize, norm: f64 },
    #[error("{me} has no bearing towards {neighbor}")]
    MissingBearing { me: AgentId, neighbor: AgentId },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("spec refers to agent {0} but only {1} positions were given")]
    MissingAgent(usize, usize),
    #[error("malformed neighbor message: {0}")]
    Message(String),
}

/// Desired bearings keyed by `(i, j)`: agent `i` uses neighbor `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BearingSpec {
    pub edges: BTreeMap<(usize, usize), Vec3>,
    pub leaders: BTreeSet<usize>,
}

impl BearingSpec {
    /// Validates unit norms within `1e-9`.
    pub fn new(
        edges: BTreeMap<(usize, usize), Vec3>,
        leaders: BTreeSet<usize>,
    ) -> Result<Self, FormationError> {
        for (&(i, j), g) in &edges {
            let norm = g.norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(FormationError::NotUnit { i, j, norm });
            }
        }
        Ok(Self { edges, leaders })
    }

    /// Bearings derived by normalizing target relative positions over `edges`.
    pub fn from_positions(
        targets: &[Vec3],
        edges: &[(usize, usize)],
        leaders: BTreeSet<usize>,
    ) -> Result<Self, FormationError> {
        let mut map = BTreeMap::new();
        for &(i, j) in edges {
            let (Some(pi), Some(pj)) = (targets.get(i), targets.get(j)) else {
                return Err(FormationError::MissingAgent(i.max(j), targets.len()));
            };
            let d = pj - pi;
            let n = d.norm();
            if n < DEGENERATE_NORM {
                return Err(FormationError::DegenerateBearing(n));
            }
            map.insert((i, j), d / n);
        }
        Self::new(map, leaders)
    }

    pub fn is_leader(&self, i: usize) -> bool {
        self.leaders.contains(&i)
    }

    /// Neighbors `j` that agent `i` listens to.
    pub fn neighbors_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((i, 0)..(i + 1, 0)).map(|(&(_, j), _)| j)
    }

    pub fn max_agent(&self) -> Option<usize> {
        self.edges
            .keys()
            .flat_map(|&(i, j)| [i, j])
            .chain(self.leaders.iter().copied())
            .max()
    }

    /// Communication graph carrying the data each edge needs (`j -> i`).
    pub fn communication_graph(&self, n: usize) -> Result<TopologyGraph, crate::netsim::NetError> {
        let edges: Vec<(usize, usize)> = self.edges.keys().map(|&(i, j)| (j, i)).collect();
        TopologyGraph::from_edges(n, &edges)
    }
}

/// `I - g g^T` for the normalized `g`.
pub fn projection_matrix(g: &Vec3) -> Result<Matrix3<f64>, FormationError> {
    let n = g.norm();
    if !(n >= DEGENERATE_NORM) {
        return Err(FormationError::DegenerateBearing(n));
    }
    let u = if (n - 1.0).abs() <= UNIT_TOL {
        *g
    } else {
        g / n
    };
    Ok(Matrix3::identity() - u * u.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl NeighborState {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        Self { position, velocity }
    }

    /// Wire form: a map with `position` and `velocity` vectors.
    pub fn encode(&self) -> Vec<u8> {
        codec::encode(&Value::map([
            ("position", Value::from(self.position)),
            ("velocity", Value::from(self.velocity)),
        ]))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormationError> {
        let v = codec::decode(bytes).map_err(|e| FormationError::Message(e.to_string()))?;
        let field = |k: &str| {
            v.get(k)
                .and_then(Value::as_vec3)
                .ok_or_else(|| FormationError::Message(format!("missing 3-vector `{k}`")))
        };
        Ok(Self {
            position: field("position")?,
            velocity: field("velocity")?,
        })
    }
}

/// Distributed bearing law for agent `me` from whatever neighbor data arrived.
/// Neighbors absent from `neighbors` (lost messages) are skipped.
pub fn bearing_control_input(
    own: &NeighborState,
    neighbors: &BTreeMap<AgentId, NeighborState>,
    spec: &BearingSpec,
    me: AgentId,
    kp: f64,
    kv: f64,
) -> Result<Vec3, FormationError> {
    if spec.is_leader(me.0) {
        return Ok(Vec3::zeros());
    }
    let mut u = Vec3::zeros();
    for (&j, nb) in neighbors {
        let g = spec
            .edges
            .get(&(me.0, j.0))
            .ok_or(FormationError::MissingBearing { me, neighbor: j })?;
        let p = projection_matrix(g)?;
        u -= p * (kp * (own.position - nb.position) + kv * (own.velocity - nb.velocity));
    }
    Ok(u)
}

/// Normalized bearing violation:
/// `sum |P(g_ij)(p_j - p_i)|^2 / sum |p_j - p_i|^2` over all edges.
///
/// Edges whose endpoints coincide are skipped with a warning.
pub fn formation_error(positions: &[Vec3], spec: &BearingSpec) -> Result<f64, FormationError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&(i, j), g) in &spec.edges {
        let (Some(pi), Some(pj)) = (positions.get(i), positions.get(j)) else {
            return Err(FormationError::MissingAgent(i.max(j), positions.len()));
        };
        let d = pj - pi;
        let len2 = d.norm_squared();
        if len2 < DEGENERATE_NORM * DEGENERATE_NORM {
            warn!("agents {i} and {j} coincide; edge excluded from formation error");
            continue;
        }
        num += (projection_matrix(g)? * d).norm_squared();
        den += len2;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Target positions of a `rows x cols` grid in the horizontal plane, agent
/// `r * cols + c` at `origin + (c, r, 0) * spacing`.
pub fn grid_positions(rows: usize, cols: usize, spacing: f64, origin: Vec3) -> Vec<Vec3> {
    (0..rows * cols)
        .map(|k| origin + Vec3::new((k % cols) as f64, (k / cols) as f64, 0.0) * spacing)
        .collect()
}

/// Edges of the 4-neighbor grid adjacency, both directions.
pub fn grid_adjacency(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            if c + 1 < cols {
                edges.push((k, k + 1));
                edges.push((k + 1, k));
            }
            if r + 1 < rows {
                edges.push((k, k + cols));
                edges.push((k + cols, k));
            }
        }
    }
    edges
}

/// Grid formation: 4-neighbor adjacency in both directions plus one edge from
/// every follower to every leader it is not already adjacent to. The leader
/// edges pin each follower to the static leaders, which fixes the otherwise
/// free row and column spacings of a bare grid.
pub fn grid_formation_spec(
    rows: usize,
    cols: usize,
    spacing: f64,
    leaders: &BTreeSet<usize>,
) -> Result<BearingSpec, FormationError> {
    let n = rows * cols;
    if n < 2 {
        return Err(FormationError::InvalidGrid(format!(
            "{rows}x{cols} has fewer than 2 agents"
        )));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(FormationError::InvalidGrid(format!(
            "spacing {spacing} must be positive"
        )));
    }
    if leaders.is_empty() {
        return Err(FormationError::InvalidGrid("leader set is empty".into()));
    }
    if let Some(&bad) = leaders.iter().find(|&&l| l >= n) {
        return Err(FormationError::InvalidGrid(format!(
            "leader {bad} outside {rows}x{cols} grid"
        )));
    }
    let mut edges: BTreeSet<(usize, usize)> = grid_adjacency(rows, cols).into_iter().collect();
    for f in (0..n).filter(|f| !leaders.contains(f)) {
        for &l in leaders {
            edges.insert((f, l));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    BearingSpec::from_positions(
        &grid_positions(rows, cols, spacing, Vec3::zeros()),
        &edges,
        leaders.clone(),
    )
}
