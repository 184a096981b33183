use masked3d::kernel::{flash_forward, flash_varlen_forward, TileConfig};
use masked3d::layout::CuSeqlens;
use masked3d::mask::Mask;
use masked3d::reference::naive_attention;
use masked3d::rng::{derive_seed, seeded_random_tensor};
use masked3d::tensor::{max_lse_diff, AttnTensor, Dims};
use proptest::prelude::*;

fn qkv(b: usize, h: usize, sq: usize, sk: usize, d: usize, seed: u64) -> [AttnTensor<f64>; 3] {
    [
        seeded_random_tensor(Dims::new(b, h, sq, d), derive_seed(seed, 0)).unwrap(),
        seeded_random_tensor(Dims::new(b, h, sk, d), derive_seed(seed, 1)).unwrap(),
        seeded_random_tensor(Dims::new(b, h, sk, d), derive_seed(seed, 2)).unwrap(),
    ]
}

fn cu_from(lens: &[usize]) -> CuSeqlens {
    let mut b = vec![0];
    for l in lens {
        b.push(b.last().unwrap() + l);
    }
    CuSeqlens::new(b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dense_matches_oracle(
        b in 1usize..3, h in 1usize..3, sq in 1usize..40, sk in 1usize..90, d in 1usize..17,
        qb in 1usize..20, kb in 1usize..20, seed in any::<u64>(),
    ) {
        let [q, k, v] = qkv(b, h, sq, sk, d, seed);
        let got = flash_forward(&q, &k, &v, TileConfig::new(qb, kb).unwrap()).unwrap();
        let want = naive_attention(&q, &k, &v, None).unwrap();
        prop_assert!(got.output.max_abs_diff(&want.output).unwrap() <= 1e-12);
        prop_assert!(max_lse_diff(&got.lse, &want.lse) <= 1e-12);
    }

    #[test]
    fn varlen_matches_block_diagonal_oracle(
        groups in prop::collection::vec((0usize..9, 0usize..9), 1..6),
        h in 1usize..3, d in 1usize..9, qb in 1usize..8, kb in 1usize..8, seed in any::<u64>(),
    ) {
        let (lq, lk): (Vec<_>, Vec<_>) = groups.into_iter().unzip();
        let (cu_q, cu_k) = (cu_from(&lq), cu_from(&lk));
        prop_assume!(cu_q.total() > 0 && cu_k.total() > 0);
        let [q, k, v] = qkv(1, h, cu_q.total(), cu_k.total(), d, seed);
        let got = flash_varlen_forward(&q, &k, &v, &cu_q, &cu_k, TileConfig::new(qb, kb).unwrap()).unwrap();
        let mask = Mask::block_diagonal(&cu_q, &cu_k).unwrap();
        let want = naive_attention(&q, &k, &v, Some(&mask)).unwrap();
        prop_assert!(got.output.max_abs_diff(&want.output).unwrap() <= 1e-12);
        prop_assert!(max_lse_diff(&got.lse, &want.lse) <= 1e-12);
    }
}

#[test]
fn tile_shape_does_not_change_f32_output() {
    let dims = |s| Dims::new(1, 2, s, 32);
    let q = seeded_random_tensor::<f32>(dims(130), 1).unwrap();
    let k = seeded_random_tensor::<f32>(dims(777), 2).unwrap();
    let v = seeded_random_tensor::<f32>(dims(777), 3).unwrap();
    let base = flash_forward(&q, &k, &v, TileConfig::new(16, 16).unwrap()).unwrap();
    for (qb, kb) in [(64, 64), (128, 32), (1, 777), (7, 1000)] {
        let other = flash_forward(&q, &k, &v, TileConfig::new(qb, kb).unwrap()).unwrap();
        assert!(
            base.output.max_abs_diff(&other.output).unwrap() <= 1e-6,
            "{qb}x{kb}"
        );
    }
}

#[test]
fn fully_empty_group_gives_zero_rows_and_neg_inf_lse() {
    let (cu_q, cu_k) = (cu_from(&[2, 3]), cu_from(&[0, 4]));
    let [q, k, v] = qkv(1, 1, 5, 4, 4, 9);
    let out = flash_varlen_forward(&q, &k, &v, &cu_q, &cu_k, TileConfig::default()).unwrap();
    assert!(out
        .output
        .row(0, 0)
        .iter()
        .chain(out.output.row(0, 1))
        .all(|&x| x == 0.0));
    assert_eq!(&out.lse[..2], &[f64::NEG_INFINITY; 2]);
    assert!(out.lse[2..].iter().all(|l| l.is_finite()));
}

#[test]
fn mismatched_cu_seqlens_rejected() {
    let [q, k, v] = qkv(1, 1, 5, 4, 4, 9);
    assert!(flash_varlen_forward(
        &q,
        &k,
        &v,
        &cu_from(&[5]),
        &cu_from(&[2, 2]),
        TileConfig::default()
    )
    .is_err());
    assert!(flash_varlen_forward(
        &q,
        &k,
        &v,
        &cu_from(&[4]),
        &cu_from(&[4]),
        TileConfig::default()
    )
    .is_err());
}
