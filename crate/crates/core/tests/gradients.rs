use masked3d::mask::Mask;
use masked3d::reference::{finite_diff_check, naive_attention, naive_backward};
use masked3d::rng::seeded_random_tensor;
use masked3d::tensor::{AttnTensor, Dims};

fn qkv(sq: usize, sk: usize, d: usize, seed: u64) -> [AttnTensor<f64>; 3] {
    [
        seeded_random_tensor(Dims::new(1, 2, sq, d), seed).unwrap(),
        seeded_random_tensor(Dims::new(1, 2, sk, d), seed + 1).unwrap(),
        seeded_random_tensor(Dims::new(1, 2, sk, d), seed + 2).unwrap(),
    ]
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 0..6u64 {
        let [q, k, v] = qkv(3 + seed as usize, 4 + 2 * seed as usize, 4, 10 * seed);
        let r = finite_diff_check(&q, &k, &v, None, seed).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn masked_rows_get_zero_gradient() {
    let [q, k, v] = qkv(4, 5, 3, 77);
    // Row 2 sees nothing, row 0 sees one key.
    let mask = Mask::from_fn(4, 5, |i, j| match i {
        0 => j == 3,
        2 => false,
        _ => (i + j) % 2 == 0,
    });
    let r = finite_diff_check(&q, &k, &v, Some(&mask), 5).unwrap();
    assert!(r.pass, "{r:?}");
    let d_out = seeded_random_tensor(q.dims(), 9).unwrap();
    let g = naive_backward(&q, &k, &v, Some(&mask), &d_out).unwrap();
    assert!(g
        .dq
        .row(0, 2)
        .iter()
        .chain(g.dq.row(1, 2))
        .all(|&x| x == 0.0));
    assert!(g.dq.row(0, 0).iter().all(|&x| x.abs() < 1e-15));
    let o = naive_attention(&q, &k, &v, Some(&mask)).unwrap();
    assert_eq!(o.lse[2], f64::NEG_INFINITY);
}

#[test]
fn f32_and_oversized_inputs_rejected() {
    let d = Dims::new(1, 1, 2, 2);
    let t = seeded_random_tensor::<f32>(d, 0).unwrap();
    assert!(finite_diff_check(&t, &t, &t, None, 0).is_err());
    let [q, k, v] = qkv(40, 40, 32, 0);
    assert!(finite_diff_check(&q, &k, &v, None, 0).is_err());
}
