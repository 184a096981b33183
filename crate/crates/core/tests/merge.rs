use masked3d::kernel::{flash_varlen_forward, TileConfig};
use masked3d::layout::CuSeqlens;
use masked3d::merge::{logaddexp, merge_many, merge_partials};
use masked3d::reference::{naive_attention, AttnPartial};
use masked3d::rng::{derive_seed, seeded_random_tensor};
use masked3d::tensor::{max_lse_diff, AttnTensor, Dims};
use proptest::prelude::*;

fn gather(t: &AttnTensor<f64>, idx: &[usize]) -> AttnTensor<f64> {
    let d = t.dims();
    let mut data = Vec::new();
    for slab in 0..d.slabs() {
        for &i in idx {
            data.extend_from_slice(t.row(slab, i));
        }
    }
    AttnTensor::from_vec(d.with_seq(idx.len()), data).unwrap()
}

/// Attention of all queries over the key subset `idx`.
fn partial(
    q: &AttnTensor<f64>,
    k: &AttnTensor<f64>,
    v: &AttnTensor<f64>,
    idx: &[usize],
) -> AttnPartial<f64> {
    if idx.is_empty() {
        return AttnPartial::empty(q.dims()).unwrap();
    }
    naive_attention(q, &gather(k, idx), &gather(v, idx), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merging_any_partition_recovers_full_attention(
        sq in 1usize..12, sk in 2usize..40, d in 1usize..9, parts in 2usize..6,
        labels in prop::collection::vec(0usize..5, 40), seed in any::<u64>(),
    ) {
        let dims = |s| Dims::new(1, 2, s, d);
        let q = seeded_random_tensor(dims(sq), derive_seed(seed, 0)).unwrap();
        let k = seeded_random_tensor(dims(sk), derive_seed(seed, 1)).unwrap();
        let v = seeded_random_tensor(dims(sk), derive_seed(seed, 2)).unwrap();
        let subsets: Vec<Vec<usize>> = (0..parts)
            .map(|p| (0..sk).filter(|&j| labels[j] % parts == p).collect())
            .collect();
        let pieces: Vec<_> = subsets.iter().map(|s| partial(&q, &k, &v, s)).collect();
        let merged = merge_many(&pieces).unwrap();
        let full = naive_attention(&q, &k, &v, None).unwrap();
        prop_assert!(merged.output.max_abs_diff(&full.output).unwrap() <= 1e-12);
        prop_assert!(max_lse_diff(&merged.lse, &full.lse) <= 1e-12);

        let mut rev = pieces.clone();
        rev.reverse();
        let back = merge_many(&rev).unwrap();
        prop_assert!(back.output.max_abs_diff(&merged.output).unwrap() <= 1e-12);
    }

    #[test]
    fn empty_partial_is_exact_identity(sq in 1usize..10, sk in 1usize..20, seed in any::<u64>()) {
        let dims = |s| Dims::new(2, 1, s, 4);
        let q = seeded_random_tensor::<f32>(dims(sq), seed).unwrap();
        let k = seeded_random_tensor::<f32>(dims(sk), seed ^ 1).unwrap();
        let v = seeded_random_tensor::<f32>(dims(sk), seed ^ 2).unwrap();
        let p = naive_attention(&q, &k, &v, None).unwrap();
        let e = AttnPartial::empty(q.dims()).unwrap();
        for m in [merge_partials(&p, &e).unwrap(), merge_partials(&e, &p).unwrap()] {
            prop_assert_eq!(&m.output, &p.output);
            prop_assert_eq!(&m.lse, &p.lse);
        }
    }

    #[test]
    fn logaddexp_is_commutative_and_shift_consistent(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -20.0f64..20.0) {
        prop_assert_eq!(logaddexp(a, b), logaddexp(b, a));
        prop_assert!((logaddexp(a + c, b + c) - (logaddexp(a, b) + c)).abs() <= 1e-12);
        let direct = (a.exp() + b.exp()).ln();
        prop_assert!((logaddexp(a, b) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }
}

#[test]
fn logaddexp_edge_cases() {
    let ninf = f64::NEG_INFINITY;
    assert_eq!(logaddexp(ninf, ninf), ninf);
    assert_eq!(logaddexp(ninf, 3.5), 3.5);
    assert_eq!(logaddexp(1000.0, 1000.0), 1000.0 + std::f64::consts::LN_2);
}

#[test]
fn merge_rejects_shape_mismatch_and_empty_list() {
    let a = AttnPartial::<f64>::empty(Dims::new(1, 1, 3, 4)).unwrap();
    let b = AttnPartial::<f64>::empty(Dims::new(1, 1, 4, 4)).unwrap();
    assert!(merge_partials(&a, &b).is_err());
    assert!(merge_many::<f64>(&[]).is_err());
}

#[test]
fn varlen_halves_merge_to_grouped_attention() {
    // Keys of each group split in two interleaved varlen calls.
    let dims = |s| Dims::new(1, 1, s, 8);
    let q = seeded_random_tensor::<f64>(dims(6), 1).unwrap();
    let k = seeded_random_tensor::<f64>(dims(10), 2).unwrap();
    let v = seeded_random_tensor::<f64>(dims(10), 3).unwrap();
    let cu_q = CuSeqlens::new(vec![0, 3, 6]).unwrap();
    let tile = TileConfig::new(2, 2).unwrap();
    let whole = flash_varlen_forward(
        &q,
        &k,
        &v,
        &cu_q,
        &CuSeqlens::new(vec![0, 4, 10]).unwrap(),
        tile,
    )
    .unwrap();
    let lo = [0, 1, 4, 5, 6];
    let hi = [2, 3, 7, 8, 9];
    let cu_half = CuSeqlens::new(vec![0, 2, 5]).unwrap();
    let a = flash_varlen_forward(
        &q,
        &gather(&k, &lo),
        &gather(&v, &lo),
        &cu_q,
        &cu_half,
        tile,
    )
    .unwrap();
    let b = flash_varlen_forward(
        &q,
        &gather(&k, &hi),
        &gather(&v, &hi),
        &cu_q,
        &cu_half,
        tile,
    )
    .unwrap();
    let m = merge_partials(&a, &b).unwrap();
    assert!(m.output.max_abs_diff(&whole.output).unwrap() <= 1e-12);
}
