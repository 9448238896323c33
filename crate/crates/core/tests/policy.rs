use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use routenet_core::analysis::softmax;
use routenet_core::generate::{generate, DistributionKind, DistributionSpec};
use routenet_core::policy::{DecodeMode, RolloutState};
use routenet_core::rng::stream;
use routenet_core::{check_feasible, Policy, PolicyConfig, ProblemKind, VrpInstance};
use routenet_tensor::Tape;

fn small(kind: ProblemKind, n_decoders: usize) -> Policy {
    let cfg = PolicyConfig {
        encoder_layers: 2,
        heads: 2,
        d_h: 16,
        ff_dim: 32,
        n_decoders,
        ..PolicyConfig::toy(kind)
    };
    Policy::new(cfg, 21).unwrap()
}

fn inst(kind: ProblemKind, n: usize, seed: u64) -> VrpInstance {
    generate(&DistributionSpec::new(DistributionKind::Uniform, seed), n, 1, kind)
        .unwrap()
        .remove(0)
}

fn embeddings(p: &Policy, i: &VrpInstance, esf: Option<f64>) -> Vec<f64> {
    let tape = Tape::new();
    let b = p.bind(&tape, false, &[0]).unwrap();
    p.encode(&b, i, esf).unwrap().nodes.value().data().to_vec()
}

#[test]
fn encoder_is_permutation_equivariant() {
    let p = small(ProblemKind::Tsp, 1);
    let a = inst(ProblemKind::Tsp, 9, 1);
    let perm = [3, 8, 0, 5, 1, 7, 2, 6, 4];
    let b = VrpInstance::tsp(perm.iter().map(|&i| a.coords()[i]).collect()).unwrap();
    let (ea, eb) = (embeddings(&p, &a, None), embeddings(&p, &b, None));
    let d = 16;
    for (row, &src) in perm.iter().enumerate() {
        for c in 0..d {
            assert!((eb[row * d + c] - ea[src * d + c]).abs() < 1e-9);
        }
    }
}

#[test]
fn cvrp_encoder_equivariant_over_customers() {
    let p = small(ProblemKind::Cvrp, 1);
    let a = inst(ProblemKind::Cvrp, 6, 2);
    let perm = [0, 4, 2, 6, 1, 5, 3];
    let c = a.capacitated().unwrap();
    let b = VrpInstance::cvrp(
        perm.iter().map(|&i| a.coords()[i]).collect(),
        0,
        perm.iter().map(|&i| c.raw_demands[i]).collect(),
        c.raw_capacity,
    )
    .unwrap();
    let (ea, eb) = (embeddings(&p, &a, None), embeddings(&p, &b, None));
    for (row, &src) in perm.iter().enumerate() {
        for k in 0..16 {
            assert!((eb[row * 16 + k] - ea[src * 16 + k]).abs() < 1e-9);
        }
    }
}

#[test]
fn encoder_output_finite_with_expected_shape() {
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let p = small(kind, 1);
        let i = inst(kind, 12, 3);
        let e = embeddings(&p, &i, Some(1.3));
        assert_eq!(e.len(), i.n() * 16);
        assert!(e.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn unit_scaling_is_bitwise_no_op() {
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let p = small(kind, 1);
        let i = inst(kind, 10, 4);
        let a: Vec<u64> = embeddings(&p, &i, None).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = embeddings(&p, &i, Some(1.0)).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        let st = RolloutState::new(&i, 1).unwrap();
        let pa = p.step_probabilities(&i, 0, &st, None).unwrap();
        let pb = p.step_probabilities(&i, 0, &st, Some(1.0)).unwrap();
        assert_eq!(pa, pb);
    }
}

#[test]
fn step_probabilities_sum_to_one_and_respect_mask() {
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let p = small(kind, 1);
        let i = inst(kind, 8, 5);
        let mut st = RolloutState::new(&i, 1).unwrap();
        while !st.is_done() {
            let mask = st.mask(&i).unwrap();
            let probs = p.step_probabilities(&i, 0, &st, None).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (v, &q) in probs.iter().enumerate() {
                if mask.is_masked(0, v) {
                    assert_eq!(q, 0.0);
                }
            }
            let next = (0..i.n()).find(|&v| !mask.is_masked(0, v)).unwrap();
            st.apply(&i, &[next]);
        }
    }
}

#[test]
fn two_node_forced_move() {
    let p = small(ProblemKind::Tsp, 1);
    let i = VrpInstance::tsp(vec![[0.0, 0.0], [1.0, 1.0]]).unwrap();
    let st = RolloutState::new(&i, 1).unwrap();
    assert_eq!(p.step_probabilities(&i, 0, &st, None).unwrap(), vec![0.0, 1.0]);
}

#[test]
fn identical_decoders_give_identical_distributions() {
    let mut p = small(ProblemKind::Tsp, 2);
    p.decoders[1] = p.decoders[0].clone();
    let i = inst(ProblemKind::Tsp, 7, 6);
    let st = RolloutState::new(&i, 1).unwrap();
    assert_eq!(
        p.step_probabilities(&i, 0, &st, None).unwrap(),
        p.step_probabilities(&i, 1, &st, None).unwrap()
    );
}

#[test]
fn rollouts_are_feasible_and_greedy_is_repeatable() {
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let p = small(kind, 1);
        for seed in 0..5 {
            let i = inst(kind, 15, 10 + seed);
            let run = |mode| {
                let tape = Tape::new();
                let b = p.bind(&tape, false, &[0]).unwrap();
                let mut rng = stream(seed, 0);
                p.rollout(&b, &i, 0, mode, i.size(), None, &mut rng).unwrap().tours
            };
            let g = run(DecodeMode::Greedy);
            assert_eq!(g, run(DecodeMode::Greedy));
            for t in g.iter().chain(&run(DecodeMode::Sample)) {
                check_feasible(&i, t).unwrap();
            }
        }
    }
}

#[test]
fn sampled_tour_frequencies_match_chain_rule() {
    let mut p = small(ProblemKind::Tsp, 1);
    // Sharpen the pointer so the six tours have clearly different odds.
    for v in p.decoders[0][7].data_mut() {
        *v *= 6.0;
    }
    let i = VrpInstance::tsp(vec![[0.1, 0.1], [0.9, 0.2], [0.5, 0.9], [0.3, 0.4]]).unwrap();
    let mut exact: HashMap<Vec<usize>, f64> = HashMap::new();
    let first = RolloutState::new(&i, 1).unwrap();
    let p1 = p.step_probabilities(&i, 0, &first, None).unwrap();
    for a in 1..4 {
        let mut s2 = first.clone();
        s2.apply(&i, &[a]);
        let p2 = p.step_probabilities(&i, 0, &s2, None).unwrap();
        for b in (1..4).filter(|&b| b != a) {
            let c = 6 - a - b;
            exact.insert(vec![0, a, b, c], p1[a] * p2[b]);
        }
    }
    assert!((exact.values().sum::<f64>() - 1.0).abs() < 1e-12);

    let (rounds, rows) = (100, 1000);
    let total = (rounds * rows) as f64;
    let mut counts: HashMap<Vec<usize>, f64> = HashMap::new();
    for r in 0..rounds {
        let tape = Tape::new();
        let b = p.bind(&tape, false, &[0]).unwrap();
        let enc = p.encode(&b, &i, None).unwrap();
        let prep = p.prepare(&b, 0, &enc).unwrap();
        let st = RolloutState::with_firsts(&i, &vec![0; rows]).unwrap();
        let mut rng = stream(99, r as u64);
        let out = p.rollout_from(&b, &prep, &i, st, DecodeMode::Sample, None, &mut rng).unwrap();
        for t in out.tours {
            *counts.entry(t).or_default() += 1.0;
        }
    }
    for (tour, q) in &exact {
        let f = counts.get(tour).copied().unwrap_or(0.0) / total;
        let sigma = (q * (1.0 - q) / total).sqrt();
        assert!((f - q).abs() <= 3.0 * sigma, "{tour:?}: {f} vs {q}");
    }
    assert_eq!(counts.len(), 6);
}

#[test]
fn larger_scaling_concentrates_attention() {
    let p = small(ProblemKind::Tsp, 1);
    let i = inst(ProblemKind::Tsp, 20, 7);
    let esf = 1.4;
    let seen = Rc::new(RefCell::new((0usize, 0usize)));
    let sink = Rc::clone(&seen);
    let tape = Tape::new();
    tape.set_softmax_probe(Some(Box::new(move |z: &[f64], probs: &[f64]| {
        let unscaled: Vec<f64> = z.iter().map(|v| v / esf).collect();
        let base = softmax(&unscaled);
        let hi = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let mut s = sink.borrow_mut();
        s.0 += 1;
        if hi(probs) + 1e-12 >= hi(&base) {
            s.1 += 1;
        }
    })));
    let b = p.bind(&tape, false, &[0]).unwrap();
    p.encode(&b, &i, Some(esf)).unwrap();
    let (rows, ok) = *seen.borrow();
    assert_eq!(rows, 2 * 2 * 20);
    assert_eq!(ok, rows);
}

#[test]
fn relabeling_preserves_multistart_best_cost() {
    let p = small(ProblemKind::Tsp, 1);
    let a = inst(ProblemKind::Tsp, 10, 8);
    let perm = [9, 2, 5, 0, 7, 1, 8, 3, 6, 4];
    let b = VrpInstance::tsp(perm.iter().map(|&k| a.coords()[k]).collect()).unwrap();
    let costs = |i: &VrpInstance| {
        let tape = Tape::new();
        let bd = p.bind(&tape, false, &[0]).unwrap();
        let mut rng = stream(0, 0);
        let mut c = p.rollout(&bd, i, 0, DecodeMode::Greedy, 10, None, &mut rng).unwrap().costs;
        c.sort_by(f64::total_cmp);
        c
    };
    for (x, y) in costs(&a).iter().zip(costs(&b)) {
        assert!((x - y).abs() < 1e-9);
    }
}
