use masked3d::layout::TokenLayout;
use masked3d::rng::{normal_vec, seeded_random_tensor};
use masked3d::rope::{
    apply_rope, assign_coords, diagonal_1d_equivalence, rotate_vector, Coord, FreqSchedule,
    RopeCoords,
};
use masked3d::tensor::Dims;
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotated(v: &[f64], c: Coord, sched: &FreqSchedule) -> Vec<f64> {
    let mut out = v.to_vec();
    rotate_vector(&mut out, c, sched);
    out
}

fn coord() -> impl Strategy<Value = Coord> {
    (-40i64..40, -40i64..40, -40i64..40).prop_map(|(t, x, y)| Coord::new(t, x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_depend_only_on_relative_position(
        hd in prop::sample::select(vec![8usize, 16, 32, 64]),
        a in coord(), b in coord(), shift in coord(), seed in any::<u64>(),
    ) {
        let sched = FreqSchedule::for_head_dim(hd).unwrap();
        let q: Vec<f64> = normal_vec(seed, hd);
        let k: Vec<f64> = normal_vec(seed ^ 0xabc, hd);
        let s0 = dot(&rotated(&q, a, &sched), &rotated(&k, b, &sched));
        let s1 = dot(&rotated(&q, a.translate(shift), &sched), &rotated(&k, b.translate(shift), &sched));
        prop_assert!((s0 - s1).abs() <= 1e-9);
    }

    #[test]
    fn rotation_preserves_norm(hd in prop::sample::select(vec![8usize, 24, 64]), c in coord(), seed in any::<u64>()) {
        let sched = FreqSchedule::for_head_dim(hd).unwrap();
        let v: Vec<f64> = normal_vec(seed, hd);
        let r = rotated(&v, c, &sched);
        prop_assert!((dot(&v, &v).sqrt() - dot(&r, &r).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn diagonal_matches_1d_rope(
        d_axis in prop::sample::select(vec![2usize, 4, 8, 24]), n1 in -500i64..500, n2 in -500i64..500, seed in any::<u64>(),
    ) {
        let sched = FreqSchedule::new(4, d_axis, d_axis, FreqSchedule::DEFAULT_THETA).unwrap();
        let q: Vec<f64> = normal_vec(seed, 2 * d_axis);
        let k: Vec<f64> = normal_vec(seed ^ 7, 2 * d_axis);
        let r = diagonal_1d_equivalence(&sched, &[(q, n1, k, n2)]).unwrap();
        prop_assert!(r.max_vector_dev <= 1e-12 && r.max_score_dev <= 1e-12, "{:?}", r);
    }
}

#[test]
fn default_split_for_common_head_dims() {
    let s = FreqSchedule::for_head_dim(64).unwrap();
    assert_eq!((s.d_t, s.d_x, s.d_y), (16, 24, 24));
    let s = FreqSchedule::for_head_dim(8).unwrap();
    assert_eq!((s.d_t, s.d_x, s.d_y), (4, 2, 2));
    assert!(FreqSchedule::for_head_dim(7).is_err());
}

#[test]
fn coordinates_of_a_small_layout() {
    let layout = TokenLayout::new(2, 4, 3, 5).unwrap();
    let c = assign_coords(&layout, (2, 2), None).unwrap();
    assert_eq!(c.len(), layout.total_len());
    assert_eq!(c.0[5], Coord::new(1, 0, 1));
    assert_eq!(c.0[8], Coord::new(2, 0, 0));
    assert_eq!(c.0[12], Coord::new(2, 0, 0));
    assert_eq!(c.0[13], Coord::new(0, 0, 0));
    assert_eq!(c.0[17], Coord::new(1, 1, 1));
    assert!(assign_coords(&layout, (3, 2), None).is_err());
    let pinned = assign_coords(&layout, (2, 2), Some(-1)).unwrap();
    assert_eq!(pinned.0[8].t, -1);
}

#[test]
fn audio_scores_depend_on_token_and_frame_offsets() {
    let layout = TokenLayout::new(6, 1, 8, 0).unwrap();
    let coords = assign_coords(&layout, (1, 1), None).unwrap();
    let sched = FreqSchedule::for_head_dim(32).unwrap();
    let q: Vec<f64> = normal_vec(1, 32);
    let k: Vec<f64> = normal_vec(2, 32);
    let audio = layout.segment_offsets().audio;
    let score = |i: usize, j: usize| {
        dot(
            &rotated(&q, coords.0[i], &sched),
            &rotated(&k, coords.0[j], &sched),
        )
    };
    let at = |f: usize, n: usize| audio.start + f * 8 + n;
    let s = score(at(0, 1), at(1, 4));
    assert!((s - score(at(3, 2), at(4, 5))).abs() <= 1e-12);
    assert!((s - score(at(4, 4), at(5, 7))).abs() <= 1e-12);
    assert!((s - score(at(0, 1), at(2, 4))).abs() > 1e-6);
}

#[test]
fn tensor_rope_is_translation_invariant_in_f32() {
    let layout = TokenLayout::new(3, 4, 2, 3).unwrap();
    let coords = assign_coords(&layout, (2, 2), None).unwrap();
    let shifted = RopeCoords(
        coords
            .0
            .iter()
            .map(|c| c.translate(Coord::new(9, -4, 17)))
            .collect(),
    );
    let sched = FreqSchedule::for_head_dim(16).unwrap();
    let dims = Dims::new(1, 2, layout.total_len(), 16);
    let q = seeded_random_tensor::<f32>(dims, 3).unwrap();
    let k = seeded_random_tensor::<f32>(dims, 4).unwrap();
    let scores = |c: &RopeCoords| {
        let (rq, rk) = (
            apply_rope(&q, c, &sched).unwrap(),
            apply_rope(&k, c, &sched).unwrap(),
        );
        let mut out = Vec::new();
        for slab in 0..2 {
            for i in 0..dims.seq {
                for j in 0..dims.seq {
                    out.push(
                        rq.row(slab, i)
                            .iter()
                            .zip(rk.row(slab, j))
                            .map(|(a, b)| a * b)
                            .sum::<f32>(),
                    );
                }
            }
        }
        out
    };
    let (a, b) = (scores(&coords), scores(&shifted));
    let dev = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max);
    assert!(dev <= 1e-5, "{dev}");
    assert!(apply_rope(&q, &RopeCoords(coords.0[1..].to_vec()), &sched).is_err());
}
