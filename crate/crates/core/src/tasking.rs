//! Pickup-and-delivery routing.
//!
//! Each vehicle flies an open path from its start through its tasks, one good
//! at a time: pickup, delivery, next pickup, ... Costs are horizontal
//! Euclidean distances at a common cruise altitude.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Vec3;
use crate::netsim::codec::{self, Value};
use crate::netsim::{AgentId, NetError, Network};
use crate::planning::Waypoint;

pub const MAX_EXACT_TASKS: usize = 8;
pub const MAX_EXACT_VEHICLES: usize = 6;

/// Slack used when comparing floating point route costs.
const COST_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskingError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("task {task} (load {load}) fits no vehicle")]
    Unservable { task: usize, load: f64 },
    #[error("instance too large for exact solver: {tasks} tasks / {vehicles} vehicles (max {MAX_EXACT_TASKS} / {MAX_EXACT_VEHICLES})")]
    TooLarge { tasks: usize, vehicles: usize },
    #[error("infeasible plan: {0}")]
    InfeasiblePlan(String),
    #[error("allocation incomplete after {rounds} rounds: {assigned} of {total} tasks assigned")]
    PartialAssignment {
        assigned: usize,
        total: usize,
        rounds: u64,
        plan: Box<RoutePlan>,
    },
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("malformed bid message: {0}")]
    Message(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vehicle {
    pub start: Vec3,
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub pickup: Vec3,
    pub delivery: Vec3,
    pub load: f64,
}

impl Task {
    pub fn length(&self) -> f64 {
        horizontal_distance(&self.pickup, &self.delivery)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdvrpInstance {
    pub vehicles: Vec<Vehicle>,
    pub tasks: Vec<Task>,
}

impl PdvrpInstance {
    pub fn new(vehicles: Vec<Vehicle>, tasks: Vec<Task>) -> Result<Self, TaskingError> {
        let inst = Self { vehicles, tasks };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), TaskingError> {
        if self.vehicles.is_empty() {
            return Err(TaskingError::InvalidInstance("no vehicles".into()));
        }
        for (k, v) in self.vehicles.iter().enumerate() {
            if !(v.capacity.is_finite() && v.capacity > 0.0)
                || !v.start.iter().all(|c| c.is_finite())
            {
                return Err(TaskingError::InvalidInstance(format!(
                    "vehicle {k} needs finite start and capacity > 0"
                )));
            }
        }
        for (k, t) in self.tasks.iter().enumerate() {
            let finite = t
                .pickup
                .iter()
                .chain(t.delivery.iter())
                .all(|c| c.is_finite());
            if !(t.load.is_finite() && t.load > 0.0) || !finite {
                return Err(TaskingError::InvalidInstance(format!(
                    "task {k} needs finite positions and load > 0"
                )));
            }
            if !self.vehicles.iter().any(|v| t.load <= v.capacity) {
                return Err(TaskingError::Unservable {
                    task: k,
                    load: t.load,
                });
            }
        }
        Ok(())
    }

    fn can_serve(&self, vehicle: usize, task: usize) -> bool {
        self.tasks[task].load <= self.vehicles[vehicle].capacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteStop {
    pub task: usize,
    pub pickup: Vec3,
    pub delivery: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutePlan {
    /// One ordered route per vehicle, indexed like the instance's vehicles.
    pub routes: Vec<Vec<RouteStop>>,
    pub total_cost: f64,
}

impl RoutePlan {
    fn from_orders(instance: &PdvrpInstance, orders: &[Vec<usize>]) -> Self {
        let routes: Vec<Vec<RouteStop>> = orders
            .iter()
            .map(|order| {
                order
                    .iter()
                    .map(|&k| RouteStop {
                        task: k,
                        pickup: instance.tasks[k].pickup,
                        delivery: instance.tasks[k].delivery,
                    })
                    .collect()
            })
            .collect();
        let total_cost = routes
            .iter()
            .zip(&instance.vehicles)
            .map(|(r, v)| vehicle_route_cost(&v.start, r))
            .sum();
        Self { routes, total_cost }
    }

    /// Task ids per vehicle in route order.
    pub fn orders(&self) -> Vec<Vec<usize>> {
        self.routes
            .iter()
            .map(|r| r.iter().map(|s| s.task).collect())
            .collect()
    }

    /// Vehicle serving each task, `None` for unassigned tasks.
    pub fn assignment(&self, n_tasks: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_tasks];
        for (v, r) in self.routes.iter().enumerate() {
            for s in r {
                if s.task < n_tasks {
                    out[s.task] = Some(v);
                }
            }
        }
        out
    }
}

pub fn horizontal_distance(a: &Vec3, b: &Vec3) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Leg-length sum of one open route starting at `start`.
pub fn vehicle_route_cost(start: &Vec3, route: &[RouteStop]) -> f64 {
    let mut cost = 0.0;
    let mut at = *start;
    for s in route {
        cost += horizontal_distance(&at, &s.pickup) + horizontal_distance(&s.pickup, &s.delivery);
        at = s.delivery;
    }
    cost
}

/// Checks feasibility of `plan` and returns its total leg length.
pub fn route_cost(plan: &RoutePlan, instance: &PdvrpInstance) -> Result<f64, TaskingError> {
    if plan.routes.len() != instance.vehicles.len() {
        return Err(TaskingError::InfeasiblePlan(format!(
            "{} routes for {} vehicles",
            plan.routes.len(),
            instance.vehicles.len()
        )));
    }
    let mut seen = vec![false; instance.tasks.len()];
    for (v, route) in plan.routes.iter().enumerate() {
        for stop in route {
            let Some(task) = instance.tasks.get(stop.task) else {
                return Err(TaskingError::InfeasiblePlan(format!(
                    "unknown task {}",
                    stop.task
                )));
            };
            if std::mem::replace(&mut seen[stop.task], true) {
                return Err(TaskingError::InfeasiblePlan(format!(
                    "task {} assigned twice",
                    stop.task
                )));
            }
            if task.load > instance.vehicles[v].capacity {
                return Err(TaskingError::InfeasiblePlan(format!(
                    "task {} load {} exceeds vehicle {v} capacity {}",
                    stop.task, task.load, instance.vehicles[v].capacity
                )));
            }
            if stop.pickup != task.pickup || stop.delivery != task.delivery {
                return Err(TaskingError::InfeasiblePlan(format!(
                    "task {} positions do not match instance",
                    stop.task
                )));
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(TaskingError::InfeasiblePlan(format!("task {k} unassigned")));
    }
    Ok(plan
        .routes
        .iter()
        .zip(&instance.vehicles)
        .map(|(r, v)| vehicle_route_cost(&v.start, r))
        .sum())
}

/// Cheapest open-path order for every task subset of one vehicle.
/// `cost[mask]` is `INFINITY` for subsets containing tasks it cannot carry.
struct SubsetTable {
    cost: Vec<f64>,
    order: Vec<Vec<usize>>,
}

fn subset_table(instance: &PdvrpInstance, vehicle: usize) -> SubsetTable {
    let n = instance.tasks.len();
    let full = 1usize << n;
    let start = instance.vehicles[vehicle].start;
    let tasks = &instance.tasks;
    // dp[mask][last]: best cost covering `mask` and ending at delivery of `last`
    let mut dp = vec![vec![f64::INFINITY; n]; full];
    let mut parent = vec![vec![usize::MAX; n]; full];
    for k in 0..n {
        if instance.can_serve(vehicle, k) {
            dp[1 << k][k] = horizontal_distance(&start, &tasks[k].pickup) + tasks[k].length();
        }
    }
    for mask in 1..full {
        for last in 0..n {
            let c = dp[mask][last];
            if !c.is_finite() {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 || !instance.can_serve(vehicle, next) {
                    continue;
                }
                let nc = c
                    + horizontal_distance(&tasks[last].delivery, &tasks[next].pickup)
                    + tasks[next].length();
                let nm = mask | (1 << next);
                if nc < dp[nm][next] {
                    dp[nm][next] = nc;
                    parent[nm][next] = last;
                }
            }
        }
    }
    let mut cost = vec![f64::INFINITY; full];
    let mut order = vec![Vec::new(); full];
    cost[0] = 0.0;
    for mask in 1..full {
        let mut best = None;
        for last in 0..n {
            if dp[mask][last] < best.map_or(f64::INFINITY, |(c, _)| c) {
                best = Some((dp[mask][last], last));
            }
        }
        let Some((c, mut last)) = best else { continue };
        cost[mask] = c;
        let mut m = mask;
        let mut seq = Vec::new();
        while last != usize::MAX {
            seq.push(last);
            let p = parent[m][last];
            m &= !(1 << last);
            last = p;
        }
        seq.reverse();
        order[mask] = seq;
    }
    SubsetTable { cost, order }
}

/// Minimum-cost plan by enumeration with pruning.
///
/// Every vehicle's best visiting order for every task subset is found by
/// dynamic programming; assignments are then enumerated in lexicographic
/// order of the assignment vector and the first strictly cheapest one wins.
pub fn solve_exact(instance: &PdvrpInstance) -> Result<RoutePlan, TaskingError> {
    instance.validate()?;
    let n = instance.tasks.len();
    let m = instance.vehicles.len();
    if n > MAX_EXACT_TASKS || m > MAX_EXACT_VEHICLES {
        return Err(TaskingError::TooLarge {
            tasks: n,
            vehicles: m,
        });
    }
    let tables: Vec<SubsetTable> = (0..m).map(|v| subset_table(instance, v)).collect();
    struct Search<'a> {
        instance: &'a PdvrpInstance,
        tables: &'a [SubsetTable],
        masks: Vec<usize>,
        best_cost: f64,
        best_masks: Option<Vec<usize>>,
    }

    impl Search<'_> {
        fn partial_cost(&self) -> f64 {
            self.masks
                .iter()
                .zip(self.tables)
                .map(|(&mk, t)| t.cost[mk])
                .sum()
        }

        fn go(&mut self, k: usize) {
            if k == self.instance.tasks.len() {
                let c = self.partial_cost();
                if c < self.best_cost - COST_EPS || self.best_masks.is_none() {
                    self.best_cost = c;
                    self.best_masks = Some(self.masks.clone());
                }
                return;
            }
            for v in 0..self.masks.len() {
                if !self.instance.can_serve(v, k) {
                    continue;
                }
                self.masks[v] |= 1 << k;
                // adding a task never shortens a route, so partial costs bound
                if self.partial_cost() <= self.best_cost + COST_EPS {
                    self.go(k + 1);
                }
                self.masks[v] &= !(1 << k);
            }
        }
    }

    let mut search = Search {
        instance,
        tables: &tables,
        masks: vec![0; m],
        best_cost: f64::INFINITY,
        best_masks: None,
    };
    search.go(0);
    let masks = search
        .best_masks
        .expect("validated instance has a feasible assignment");
    let orders: Vec<Vec<usize>> = masks
        .iter()
        .zip(&tables)
        .map(|(&mk, t)| t.order[mk].clone())
        .collect();
    Ok(RoutePlan::from_orders(instance, &orders))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct GreedyOptions {
    /// Flooding rounds per award phase; `None` uses `n - 1`, enough on any
    /// strongly connected graph with a reliable network.
    pub rounds_per_phase: Option<u64>,
    /// First round number used on the network.
    pub first_round: u64,
}

/// One agent's offer: cost of inserting `task` into its route.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bid {
    task: Option<usize>,
    cost: f64,
    position: usize,
}

impl Bid {
    fn key(&self, agent: usize) -> (f64, usize, usize) {
        (self.cost, self.task.unwrap_or(usize::MAX), agent)
    }
}

/// What one agent knows: its own vehicle and the shared task list.
struct GreedyAgent<'a> {
    id: usize,
    vehicle: Vehicle,
    tasks: &'a [Task],
    route: Vec<usize>,
    assigned: Vec<bool>,
    table: Vec<Option<Bid>>,
}

impl GreedyAgent<'_> {
    fn cost_of(&self, order: &[usize]) -> f64 {
        let mut at = self.vehicle.start;
        let mut c = 0.0;
        for &k in order {
            c += horizontal_distance(&at, &self.tasks[k].pickup) + self.tasks[k].length();
            at = self.tasks[k].delivery;
        }
        c
    }

    fn own_bid(&self) -> Bid {
        let base = self.cost_of(&self.route);
        let mut best = Bid {
            task: None,
            cost: f64::INFINITY,
            position: 0,
        };
        let mut trial = self.route.clone();
        for k in 0..self.tasks.len() {
            if self.assigned[k] || self.tasks[k].load > self.vehicle.capacity {
                continue;
            }
            for pos in 0..=self.route.len() {
                trial.insert(pos, k);
                let delta = self.cost_of(&trial) - base;
                trial.remove(pos);
                if delta < best.cost {
                    best = Bid {
                        task: Some(k),
                        cost: delta,
                        position: pos,
                    };
                }
            }
        }
        best
    }

    fn start_phase(&mut self) {
        self.table.iter_mut().for_each(|b| *b = None);
        self.table[self.id] = Some(self.own_bid());
    }

    fn message(&self) -> Vec<u8> {
        let entries = self
            .table
            .iter()
            .enumerate()
            .filter_map(|(a, b)| {
                b.map(|b| {
                    Value::List(vec![
                        Value::Int(a as i64),
                        Value::Int(b.task.map_or(-1, |t| t as i64)),
                        Value::Float(b.cost),
                    ])
                })
            })
            .collect();
        codec::encode(&Value::map([("bids", Value::List(entries))]))
    }

    fn merge(&mut self, bytes: &[u8]) -> Result<(), TaskingError> {
        let bad = |s: &str| TaskingError::Message(s.to_string());
        let v = codec::decode(bytes).map_err(|e| TaskingError::Message(e.to_string()))?;
        let list = v
            .get("bids")
            .and_then(Value::as_list)
            .ok_or_else(|| bad("missing bids"))?;
        for e in list {
            let fields = e.as_list().ok_or_else(|| bad("bid is not a list"))?;
            let [a, t, c] = fields else {
                return Err(bad("bid needs 3 fields"));
            };
            let a = a
                .as_i64()
                .filter(|&a| a >= 0 && (a as usize) < self.table.len());
            let (Some(a), Some(t), Some(c)) = (a, t.as_i64(), c.as_f64()) else {
                return Err(bad("bad bid field"));
            };
            let slot = &mut self.table[a as usize];
            if slot.is_none() && a as usize != self.id {
                *slot = Some(Bid {
                    task: usize::try_from(t).ok(),
                    cost: c,
                    position: 0,
                });
            }
        }
        Ok(())
    }

    fn complete(&self) -> bool {
        self.table.iter().all(Option::is_some)
    }

    /// Winning `(agent, bid)`, or `None` when nobody can take a task.
    fn winner(&self) -> Option<(usize, Bid)> {
        self.table
            .iter()
            .enumerate()
            .filter_map(|(a, b)| b.filter(|b| b.task.is_some()).map(|b| (a, b)))
            .min_by(|(a, x), (b, y)| {
                let (ka, kb) = (x.key(*a), y.key(*b));
                ka.0.total_cmp(&kb.0)
                    .then(ka.1.cmp(&kb.1))
                    .then(ka.2.cmp(&kb.2))
            })
    }
}

/// Sequential auction over the network. Agent `i` owns vehicle `i` and
/// knows the full task list. In each phase every agent bids its cheapest
/// insertion of any open task, the bid tables are flooded along the
/// communication graph, and the lowest bid `(cost, task, agent)` wins.
///
/// Agents whose table is incomplete at the end of a phase (disconnected
/// graph, lost messages) cannot agree on the winner; allocation then stops
/// with [`TaskingError::PartialAssignment`].
pub fn greedy_allocate_distributed(
    net: &mut Network,
    instance: &PdvrpInstance,
    options: GreedyOptions,
) -> Result<RoutePlan, TaskingError> {
    instance.validate()?;
    let n = instance.vehicles.len();
    if net.len() != n {
        return Err(TaskingError::InvalidInstance(format!(
            "network has {} agents for {n} vehicles",
            net.len()
        )));
    }
    let per_phase = options
        .rounds_per_phase
        .unwrap_or(n.saturating_sub(1) as u64);
    let mut agents: Vec<GreedyAgent> = instance
        .vehicles
        .iter()
        .enumerate()
        .map(|(id, &vehicle)| GreedyAgent {
            id,
            vehicle,
            tasks: &instance.tasks,
            route: Vec::new(),
            assigned: vec![false; instance.tasks.len()],
            table: vec![None; n],
        })
        .collect();
    let mut round = options.first_round;
    let total = instance.tasks.len();
    for assigned in 0..total {
        for a in agents.iter_mut() {
            a.start_phase();
        }
        for _ in 0..per_phase {
            let payloads: Vec<Vec<u8>> = agents.iter().map(GreedyAgent::message).collect();
            let received = net.exchange_all(&payloads, round)?;
            round += 1;
            for (a, msgs) in agents.iter_mut().zip(received) {
                for bytes in msgs.values() {
                    a.merge(bytes)?;
                }
            }
        }
        let winners: Vec<Option<(usize, Bid)>> = agents
            .iter()
            .map(|a| if a.complete() { a.winner() } else { None })
            .collect();
        let agreed = winners[0].filter(|_| agents.iter().all(GreedyAgent::complete));
        let Some((w, bid)) = agreed else {
            let orders: Vec<Vec<usize>> = agents.iter().map(|a| a.route.clone()).collect();
            return Err(TaskingError::PartialAssignment {
                assigned,
                total,
                rounds: round - options.first_round,
                plan: Box::new(RoutePlan::from_orders(instance, &orders)),
            });
        };
        let task = bid.task.expect("winner has a task");
        let own = agents[w].own_bid();
        debug_assert_eq!(own.task, Some(task));
        agents[w].route.insert(own.position, task);
        for a in agents.iter_mut() {
            a.assigned[task] = true;
        }
    }
    let orders: Vec<Vec<usize>> = agents.iter().map(|a| a.route.clone()).collect();
    let plan = RoutePlan::from_orders(instance, &orders);
    route_cost(&plan, instance)?;
    Ok(plan)
}

/// Waypoints for one vehicle: start, then pickup and delivery of each task,
/// all at `cruise_altitude`, with knot times proportional to leg length.
/// Zero-length legs (a pickup at the previous delivery) are merged.
pub fn route_to_waypoints(
    route: &[RouteStop],
    start: &Vec3,
    cruise_altitude: f64,
    time_per_meter: f64,
) -> Vec<Waypoint> {
    let at_alt = |p: &Vec3| Vec3::new(p.x, p.y, cruise_altitude);
    let mut out = vec![Waypoint::new(at_alt(start), 0.0, 0.0)];
    for stop in route {
        for p in [&stop.pickup, &stop.delivery] {
            let last = out.last().expect("non-empty");
            let d = horizontal_distance(&last.position, p);
            if d > 1e-9 {
                let t = last.time + d * time_per_meter;
                out.push(Waypoint::new(at_alt(p), 0.0, t));
            }
        }
    }
    out
}

/// Re-labels vehicle ids in a plan: `perm[old] = new`.
pub fn permute_vehicles(plan: &RoutePlan, perm: &[usize]) -> RoutePlan {
    let mut routes = vec![Vec::new(); plan.routes.len()];
    for (old, r) in plan.routes.iter().enumerate() {
        routes[perm[old]] = r.clone();
    }
    RoutePlan {
        routes,
        total_cost: plan.total_cost,
    }
}

/// Per-vehicle task lists keyed by agent, for logs and summaries.
pub fn plan_summary(plan: &RoutePlan) -> BTreeMap<AgentId, Vec<usize>> {
    plan.orders()
        .into_iter()
        .enumerate()
        .map(|(v, o)| (AgentId(v), o))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{QosProfile, TopologyGraph};

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn two_vehicle() -> PdvrpInstance {
        PdvrpInstance::new(
            vec![
                Vehicle {
                    start: v(0.0, 0.0, 1.0),
                    capacity: 1.0,
                },
                Vehicle {
                    start: v(2.0, 0.0, 1.0),
                    capacity: 1.0,
                },
            ],
            vec![
                Task {
                    pickup: v(0.0, 1.0, 0.0),
                    delivery: v(0.0, 2.0, 0.0),
                    load: 1.0,
                },
                Task {
                    pickup: v(2.0, 1.0, 0.0),
                    delivery: v(2.0, 2.0, 0.0),
                    load: 1.0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_task_cost() {
        let inst = PdvrpInstance::new(
            vec![Vehicle {
                start: Vec3::zeros(),
                capacity: 1.0,
            }],
            vec![Task {
                pickup: v(0.0, 1.0, 0.0),
                delivery: v(0.0, 2.0, 0.0),
                load: 0.5,
            }],
        )
        .unwrap();
        let plan = RoutePlan::from_orders(&inst, &[vec![0]]);
        assert_eq!(route_cost(&plan, &inst).unwrap(), 2.0);
        assert_eq!(solve_exact(&inst).unwrap(), plan);
    }

    #[test]
    fn empty_tasks_cost_zero() {
        let inst = PdvrpInstance::new(
            vec![Vehicle {
                start: Vec3::zeros(),
                capacity: 1.0,
            }],
            vec![],
        )
        .unwrap();
        let plan = solve_exact(&inst).unwrap();
        assert_eq!(route_cost(&plan, &inst).unwrap(), 0.0);
    }

    #[test]
    fn two_vehicle_exact() {
        let inst = two_vehicle();
        let plan = solve_exact(&inst).unwrap();
        assert_eq!(plan.orders(), vec![vec![0], vec![1]]);
        assert!((plan.total_cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn feasibility_violations_named() {
        let inst = two_vehicle();
        let good = solve_exact(&inst).unwrap();
        let mut dup = good.clone();
        let stop = dup.routes[0][0];
        dup.routes[1].push(stop);
        assert!(route_cost(&dup, &inst)
            .unwrap_err()
            .to_string()
            .contains("twice"));
        let mut missing = good.clone();
        missing.routes[1].clear();
        assert!(route_cost(&missing, &inst)
            .unwrap_err()
            .to_string()
            .contains("unassigned"));
        let mut heavy = inst.clone();
        heavy.vehicles[1].capacity = 1.0;
        heavy.tasks[1].load = 1.0;
        heavy.vehicles[0].capacity = 0.5;
        heavy.tasks[0].load = 0.5;
        let swapped = RoutePlan::from_orders(&heavy, &[vec![1], vec![0]]);
        assert!(route_cost(&swapped, &heavy)
            .unwrap_err()
            .to_string()
            .contains("capacity"));
    }

    #[test]
    fn unservable_and_too_large() {
        let mut inst = two_vehicle();
        inst.tasks[0].load = 5.0;
        assert!(matches!(
            solve_exact(&inst),
            Err(TaskingError::Unservable { task: 0, .. })
        ));
        let inst = PdvrpInstance::new(
            vec![Vehicle {
                start: Vec3::zeros(),
                capacity: 1.0,
            }],
            vec![
                Task {
                    pickup: Vec3::zeros(),
                    delivery: v(1.0, 0.0, 0.0),
                    load: 1.0
                };
                9
            ],
        )
        .unwrap();
        assert!(matches!(
            solve_exact(&inst),
            Err(TaskingError::TooLarge { .. })
        ));
    }

    #[test]
    fn greedy_matches_exact_on_two_vehicles() {
        let inst = two_vehicle();
        let mut net =
            Network::with_static(TopologyGraph::complete(2), QosProfile::reliable()).unwrap();
        let g = greedy_allocate_distributed(&mut net, &inst, GreedyOptions::default()).unwrap();
        assert_eq!(g, solve_exact(&inst).unwrap());
    }

    #[test]
    fn greedy_single_vehicle_is_feasible() {
        let tasks = vec![
            Task {
                pickup: v(3.0, 0.0, 0.0),
                delivery: v(4.0, 0.0, 0.0),
                load: 1.0,
            },
            Task {
                pickup: v(1.0, 0.0, 0.0),
                delivery: v(2.0, 0.0, 0.0),
                load: 1.0,
            },
        ];
        let inst = PdvrpInstance::new(
            vec![Vehicle {
                start: Vec3::zeros(),
                capacity: 1.0,
            }],
            tasks,
        )
        .unwrap();
        let mut net =
            Network::with_static(TopologyGraph::complete(1), QosProfile::reliable()).unwrap();
        let g = greedy_allocate_distributed(&mut net, &inst, GreedyOptions::default()).unwrap();
        assert_eq!(g.orders(), vec![vec![1, 0]]);
        assert!((route_cost(&g, &inst).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_disconnected_reports_partial() {
        let inst = two_vehicle();
        let graph = TopologyGraph::from_edges(2, &[]).unwrap();
        let mut net = Network::with_static(graph, QosProfile::reliable()).unwrap();
        let opts = GreedyOptions {
            rounds_per_phase: Some(3),
            ..Default::default()
        };
        match greedy_allocate_distributed(&mut net, &inst, opts) {
            Err(TaskingError::PartialAssignment {
                assigned: 0,
                total: 2,
                rounds: 3,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn waypoints_follow_route() {
        let inst = two_vehicle();
        let plan = RoutePlan::from_orders(&inst, &[vec![0, 1], vec![]]);
        let wps = route_to_waypoints(&plan.routes[0], &inst.vehicles[0].start, 1.0, 2.0);
        assert_eq!(wps.len(), 5);
        let expected = [
            v(0.0, 0.0, 1.0),
            v(0.0, 1.0, 1.0),
            v(0.0, 2.0, 1.0),
            v(2.0, 1.0, 1.0),
            v(2.0, 2.0, 1.0),
        ];
        for (w, e) in wps.iter().zip(expected) {
            assert_eq!(w.position, e);
        }
        for pair in wps.windows(2) {
            let d = (pair[1].position - pair[0].position).norm();
            assert!((pair[1].time - pair[0].time - 2.0 * d).abs() < 1e-9);
        }
        let one = route_to_waypoints(&plan.routes[0][..1], &inst.vehicles[0].start, 1.0, 1.0);
        assert_eq!(one.len(), 3);
    }
}
