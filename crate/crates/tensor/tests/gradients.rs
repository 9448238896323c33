use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routenet_tensor::nn::{layer_norm, linear, multi_head_attention};
use routenet_tensor::{grad_check, Mask, Result, Tape, Tensor, Var};

fn random(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Weighted sum with fixed random weights, so no gradient coordinate is
/// structurally tiny.
fn probe_sum<'t>(tape: &'t Tape, y: &Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(y.shape().to_vec(), random(&mut rng, y.value().len(), 1.0))?;
    Ok(y.mul(&tape.constant(w))?.sum())
}

#[test]
fn sum_of_squares() {
    let point = Tensor::row(vec![1.0, 2.0]).unwrap();
    let check = grad_check(|_, x| Ok(x.mul(x)?.sum()), &point, 1e-6).unwrap();
    assert_eq!(check.autodiff, vec![2.0, 4.0]);
    assert!(check.max_rel_err < 1e-8, "{}", check.max_rel_err);
}

#[test]
fn softmax_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let point = Tensor::matrix(4, 6, random(&mut rng, 24, 2.0)).unwrap();
    let targets = [0, 3, 5, 2];
    let check = grad_check(
        |_, x| Ok(x.log_softmax_rows(1.0, None)?.pick(&targets)?.sum().scale(-0.25)),
        &point,
        1e-6,
    )
    .unwrap();
    assert!(check.max_rel_err < 1e-5, "{}", check.max_rel_err);
}

#[test]
fn masked_scaled_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let point = Tensor::matrix(3, 5, random(&mut rng, 15, 2.0)).unwrap();
    let mut mask = Mask::none(3, 5);
    mask.set(0, 1, true);
    mask.set(2, 4, true);
    let check = grad_check(
        |t, x| {
            let p = x.softmax_rows(1.7, Some(&mask))?;
            probe_sum(t, &p, 9)
        },
        &point,
        1e-6,
    )
    .unwrap();
    // Masked coordinates have zero gradient on both sides.
    assert_eq!(check.autodiff[1], 0.0);
    assert!(check.max_rel_err < 1e-4 || check.numeric[check.worst_index].abs() < 1e-12);
}

/// One transformer encoder layer: attention, add&norm, feed-forward, add&norm.
/// All weights and the input come from one flat parameter vector.
fn encoder_layer<'t>(tape: &'t Tape, p: &Var<'t>, n: usize, d: usize, ff: usize) -> Result<Var<'t>> {
    let mut off = 0;
    let mut take = |rows: usize, cols: usize| -> Result<Var<'t>> {
        let v = p.segment(off, vec![rows, cols])?;
        off += rows * cols;
        Ok(v)
    };
    let x = take(n, d)?;
    let (wq, wk, wv, wo) = (take(d, d)?, take(d, d)?, take(d, d)?, take(d, d)?);
    let bo = take(1, d)?;
    let (g1, b1) = (take(1, d)?, take(1, d)?);
    let (w1, c1, w2, c2) = (take(d, ff)?, take(1, ff)?, take(ff, d)?, take(1, d)?);
    let (g2, b2) = (take(1, d)?, take(1, d)?);
    let q = x.matmul(&wq)?;
    let k = x.matmul(&wk)?;
    let v = x.matmul(&wv)?;
    let att = multi_head_attention(&q, &k, &v, 2, Some(1.3), None, &wo, Some(&bo))?;
    let h = layer_norm(&x.add(&att)?, &g1, &b1)?;
    let f = linear(&linear(&h, &w1, Some(&c1))?.relu(), &w2, Some(&c2))?;
    let out = layer_norm(&h.add(&f)?, &g2, &b2)?;
    probe_sum(tape, &out, 5)
}

#[test]
fn full_attention_layer() {
    let (n, d, ff) = (5, 4, 8);
    let len = n * d + 4 * d * d + d + 2 * d + d * ff + ff + ff * d + d + 2 * d;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut data = random(&mut rng, len, 0.8);
    // Layer-norm gains away from zero.
    let gain1 = n * d + 4 * d * d + d;
    for g in &mut data[gain1..gain1 + d] {
        *g = 1.0 + *g * 0.3;
    }
    let point = Tensor::row(data).unwrap();
    let check = grad_check(|t, p| encoder_layer(t, p, n, d, ff), &point, 1e-6).unwrap();
    assert!(
        check.max_rel_err < 1e-4,
        "worst {} at {}: {} vs {}",
        check.max_rel_err,
        check.worst_index,
        check.autodiff[check.worst_index],
        check.numeric[check.worst_index]
    );
}

#[test]
fn randomized_composite_suite() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let rows = rng.gen_range(2..5);
        let cols = rng.gen_range(2..6);
        let point = Tensor::matrix(rows, cols, random(&mut rng, rows * cols, 1.5)).unwrap();
        let idx: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..rows)).collect();
        let picks: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..cols)).collect();
        let stacked_picks: Vec<usize> = picks.iter().copied().chain([cols]).collect();
        let check = grad_check(
            |t, x| {
                let g = x.gather_rows(&idx)?;
                let m = x.mean_rows()?.repeat_rows(rows)?;
                let mixed = g.sub(&m)?.tanh_clip(2.0)?.mul(x)?;
                let halves = Var::concat_cols(&[mixed.slice_cols(0, 1)?, x.scale(0.5)])?;
                let stacked = Var::concat_rows(&[halves.clone(), halves.gather_rows(&[0])?.scale(2.0)])?;
                let ls = stacked.log_softmax_rows(0.9, None)?.pick(&stacked_picks)?.sum();
                ls.add(&probe_sum(t, &x.matmul_t(x)?, seed)?)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(check.max_rel_err < 1e-4, "seed {seed}: {}", check.max_rel_err);
    }
}

#[test]
fn step_outside_range_rejected() {
    let point = Tensor::row(vec![1.0]).unwrap();
    assert!(grad_check(|_, x| Ok(x.sum()), &point, 1e-2).is_err());
}
