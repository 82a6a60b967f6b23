use nanoswarm::netsim::{Network, QosProfile, TopologyGraph};
use nanoswarm::tasking::{
    greedy_allocate_distributed, permute_vehicles, route_cost, solve_exact, GreedyOptions,
    PdvrpInstance, RoutePlan, RouteStop, Task, Vehicle,
};
use nanoswarm::Vec3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_instance(rng: &mut ChaCha8Rng, vehicles: usize, tasks: usize) -> PdvrpInstance {
    let p =
        |rng: &mut ChaCha8Rng| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 1.0);
    let vehicles: Vec<Vehicle> = (0..vehicles)
        .map(|_| Vehicle {
            start: p(rng),
            capacity: rng.gen_range(0.5..1.5),
        })
        .collect();
    let max_cap = vehicles.iter().map(|v| v.capacity).fold(0.0, f64::max);
    let tasks = (0..tasks)
        .map(|_| Task {
            pickup: p(rng),
            delivery: p(rng),
            load: rng.gen_range(0.1..max_cap),
        })
        .collect();
    PdvrpInstance::new(vehicles, tasks).unwrap()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn plan_from(inst: &PdvrpInstance, orders: &[Vec<usize>]) -> RoutePlan {
    RoutePlan {
        routes: orders
            .iter()
            .map(|o| {
                o.iter()
                    .map(|&k| RouteStop {
                        task: k,
                        pickup: inst.tasks[k].pickup,
                        delivery: inst.tasks[k].delivery,
                    })
                    .collect()
            })
            .collect(),
        total_cost: 0.0,
    }
}

/// Every assignment, every order, no pruning; infeasible plans are rejected
/// by `route_cost` itself.
fn brute_force(inst: &PdvrpInstance) -> f64 {
    let n = inst.tasks.len();
    let m = inst.vehicles.len();
    let mut best = f64::INFINITY;
    for code in 0..m.pow(n as u32) {
        let mut groups = vec![Vec::new(); m];
        let mut c = code;
        for k in 0..n {
            groups[c % m].push(k);
            c /= m;
        }
        let perms: Vec<Vec<Vec<usize>>> = groups.iter().map(|g| permutations(g)).collect();
        let mut idx = vec![0usize; m];
        loop {
            let orders: Vec<Vec<usize>> = (0..m).map(|v| perms[v][idx[v]].clone()).collect();
            if let Ok(cost) = route_cost(&plan_from(inst, &orders), inst) {
                best = best.min(cost);
            }
            let mut v = 0;
            while v < m {
                idx[v] += 1;
                if idx[v] < perms[v].len() {
                    break;
                }
                idx[v] = 0;
                v += 1;
            }
            if v == m {
                break;
            }
        }
    }
    best
}

#[test]
fn exact_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(0..=4);
        let inst = random_instance(&mut rng, m, n);
        let plan = solve_exact(&inst).unwrap();
        let cost = route_cost(&plan, &inst).unwrap();
        assert_eq!(cost, plan.total_cost);
        let oracle = brute_force(&inst);
        assert!(
            (cost - oracle).abs() <= 1e-9,
            "exact {cost} vs brute force {oracle}"
        );
    }
}

#[test]
fn greedy_feasible_and_within_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let inst = random_instance(&mut rng, 3, 6);
        let mut net = Network::with_static(TopologyGraph::ring(3), QosProfile::reliable()).unwrap();
        let greedy =
            greedy_allocate_distributed(&mut net, &inst, GreedyOptions::default()).unwrap();
        let g = route_cost(&greedy, &inst).unwrap();
        let e = solve_exact(&inst).unwrap().total_cost;
        assert!(g <= 1.5 * e + 1e-9, "greedy {g} exceeds 1.5x exact {e}");
    }
}

#[test]
fn greedy_is_deterministic_over_lossy_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let inst = random_instance(&mut rng, 3, 5);
    let run = || {
        let mut net =
            Network::with_static(TopologyGraph::complete(3), QosProfile::lossy(0.2, 5)).unwrap();
        let opts = GreedyOptions {
            rounds_per_phase: Some(12),
            ..Default::default()
        };
        greedy_allocate_distributed(&mut net, &inst, opts)
    };
    let a = run().unwrap();
    assert_eq!(a, run().unwrap());
    route_cost(&a, &inst).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_preserves_exact_cost(seed in any::<u64>(), m in 1usize..=3, n in 0usize..=4, rot in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, m, n);
        let base = solve_exact(&inst).unwrap();

        // reverse task ids
        let task_perm: Vec<usize> = (0..n).rev().collect();
        let mut tasks = inst.tasks.clone();
        for (old, &new) in task_perm.iter().enumerate() {
            tasks[new] = inst.tasks[old];
        }
        // rotate vehicle ids
        let veh_perm: Vec<usize> = (0..m).map(|v| (v + rot) % m).collect();
        let mut vehicles = inst.vehicles.clone();
        for (old, &new) in veh_perm.iter().enumerate() {
            vehicles[new] = inst.vehicles[old];
        }
        let relabeled = PdvrpInstance::new(vehicles, tasks).unwrap();
        let other = solve_exact(&relabeled).unwrap();
        prop_assert!((other.total_cost - base.total_cost).abs() < 1e-9);

        // the base plan mapped through both permutations is feasible at the same cost
        let mut mapped = permute_vehicles(&base, &veh_perm);
        for route in mapped.routes.iter_mut() {
            for stop in route.iter_mut() {
                stop.task = task_perm[stop.task];
            }
        }
        let c = route_cost(&mapped, &relabeled).unwrap();
        prop_assert!((c - base.total_cost).abs() < 1e-9);
    }
}
