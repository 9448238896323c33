use std::path::PathBuf;

use routenet_core::bench::{benchmark_cost, read_benchmark};
use routenet_core::generate::{generate, DistributionKind, DistributionSpec};
use routenet_core::oracle::{brute_force_tsp, cvrp_exact_small, held_karp, is_two_opt_stable, nn_2opt};
use routenet_core::{check_feasible, tour_cost, Error, ProblemKind, VrpInstance};

fn tsp(n: usize, seed: u64) -> VrpInstance {
    generate(&DistributionSpec::new(DistributionKind::Uniform, seed), n, 1, ProblemKind::Tsp)
        .unwrap()
        .remove(0)
}

#[test]
fn unit_square_is_four() {
    let sq = VrpInstance::tsp(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    for r in [brute_force_tsp(&sq).unwrap(), held_karp(&sq).unwrap()] {
        assert!((r.cost - 4.0).abs() < 1e-12);
        check_feasible(&sq, &r.tour.nodes).unwrap();
    }
}

#[test]
fn three_nodes_is_perimeter_for_every_method() {
    let t = VrpInstance::tsp(vec![[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]]).unwrap();
    let methods = [
        brute_force_tsp(&t).unwrap().cost,
        held_karp(&t).unwrap().cost,
        nn_2opt(&t, 3, 0).unwrap().cost,
    ];
    for c in methods {
        assert!((c - 12.0).abs() < 1e-12);
    }
}

#[test]
fn collinear_is_twice_span() {
    let c = VrpInstance::tsp(vec![[0.3, 0.0], [0.0, 0.0], [1.0, 0.0], [0.7, 0.0], [0.5, 0.0]]).unwrap();
    assert!((held_karp(&c).unwrap().cost - 2.0).abs() < 1e-12);
}

#[test]
fn exact_oracles_agree_exactly() {
    for seed in 0..40 {
        let n = 4 + (seed as usize % 6);
        let inst = tsp(n, seed);
        assert_eq!(held_karp(&inst).unwrap().cost, brute_force_tsp(&inst).unwrap().cost, "n={n} seed={seed}");
    }
}

#[test]
fn held_karp_invariant_under_relabeling() {
    let inst = tsp(9, 3);
    let perm = [4, 7, 0, 8, 2, 6, 1, 5, 3];
    let relabeled = VrpInstance::tsp(perm.iter().map(|&i| inst.coords()[i]).collect()).unwrap();
    let (a, b) = (held_karp(&inst).unwrap().cost, held_karp(&relabeled).unwrap().cost);
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn oracle_costs_invariant_under_augmentation() {
    let inst = tsp(8, 11);
    let base = held_karp(&inst).unwrap().cost;
    for a in inst.augment8() {
        assert!((held_karp(&a).unwrap().cost - base).abs() < 1e-12);
        assert!((brute_force_tsp(&a).unwrap().cost - base).abs() < 1e-12);
    }
    let cvrp = generate(&DistributionSpec::new(DistributionKind::Cluster, 2), 6, 1, ProblemKind::Cvrp)
        .unwrap()
        .remove(0);
    let cbase = cvrp_exact_small(&cvrp).unwrap().cost;
    for a in cvrp.augment8() {
        assert!((cvrp_exact_small(&a).unwrap().cost - cbase).abs() < 1e-12);
    }
}

#[test]
fn heavy_demands_force_single_customer_routes() {
    let coords = vec![[0.5, 0.5], [0.1, 0.2], [0.9, 0.4], [0.3, 0.8], [0.7, 0.9]];
    let inst = VrpInstance::cvrp(coords.clone(), 0, vec![0.0, 6.0, 7.0, 6.0, 9.0], 10.0).unwrap();
    let r = cvrp_exact_small(&inst).unwrap();
    let expect: f64 = (1..5).map(|i| 2.0 * inst.dist(0, i)).sum();
    assert!((r.cost - expect).abs() < 1e-12);
    check_feasible(&inst, &r.tour.nodes).unwrap();
}

#[test]
fn roomy_capacity_matches_tsp_through_depot() {
    let inst = generate(&DistributionSpec::new(DistributionKind::Uniform, 5), 7, 1, ProblemKind::Cvrp)
        .unwrap()
        .remove(0);
    let c = inst.capacitated().unwrap();
    let total: f64 = c.raw_demands.iter().sum();
    let roomy = VrpInstance::cvrp(inst.coords().to_vec(), c.depot, c.raw_demands.clone(), total).unwrap();
    let as_tsp = VrpInstance::tsp(inst.coords().to_vec()).unwrap();
    let a = cvrp_exact_small(&roomy).unwrap().cost;
    let b = held_karp(&as_tsp).unwrap().cost;
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn two_opt_is_stable_and_bounded_below_by_optimum() {
    for seed in 0..20 {
        let inst = tsp(5 + seed as usize % 5, 100 + seed);
        let r = nn_2opt(&inst, 4, seed).unwrap();
        check_feasible(&inst, &r.tour.nodes).unwrap();
        assert!(is_two_opt_stable(&inst, &r.tour.nodes, 1e-12));
        assert!(r.cost >= held_karp(&inst).unwrap().cost - 1e-12);
        assert!((tour_cost(&inst, &r.tour.nodes).unwrap() - r.cost).abs() < 1e-12);
    }
}

#[test]
fn two_opt_on_berlin52_within_six_percent() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/berlin52.tsp");
    let b = read_benchmark(&path).unwrap();
    let r = nn_2opt(&b.raw, 20, 0).unwrap();
    let cost = benchmark_cost(&b.raw, &r.tour.nodes).unwrap();
    assert!(cost <= 7542.0 * 1.06, "{cost}");
}

#[test]
fn size_limits_are_errors() {
    let big = tsp(17, 1);
    assert!(matches!(held_karp(&big), Err(Error::SizeLimit { .. })));
    assert!(matches!(brute_force_tsp(&tsp(11, 1)), Err(Error::SizeLimit { .. })));
}
